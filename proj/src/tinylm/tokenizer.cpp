#include "debias/tinylm/tokenizer.hpp"

#include "debias/common/text.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <stdexcept>

namespace debias::tinylm {

namespace {
const std::vector<std::string> kSpecials = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};

bool is_punct(char c) {
  const auto u = static_cast<unsigned char>(c);
  return u < 0x80 && std::ispunct(u) && c != '-' && c != '\'';
}
}  // namespace

Vocabulary::Vocabulary() : tokens_(kSpecials) {
  for (int i = 0; i < kNumSpecial; ++i) index_.emplace(tokens_[static_cast<std::size_t>(i)], i);
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& tokens) {
  if (tokens.size() < kSpecials.size() || !std::equal(kSpecials.begin(), kSpecials.end(), tokens.begin())) {
    throw std::invalid_argument("vocabulary must start with the special tokens");
  }
  Vocabulary v;
  for (std::size_t i = kSpecials.size(); i < tokens.size(); ++i) {
    if (!v.index_.emplace(tokens[i], static_cast<int>(i)).second) {
      throw std::invalid_argument("duplicate vocabulary token: " + tokens[i]);
    }
    v.tokens_.push_back(tokens[i]);
  }
  return v;
}

std::vector<std::string> Vocabulary::words(std::string_view sentence) {
  std::vector<std::string> out;
  for (const std::string& raw : text::split_whitespace(sentence)) {
    std::string w = text::lower(raw);
    std::size_t b = 0, e = w.size();
    std::vector<std::string> trailing;
    while (b < e && is_punct(w[b])) out.emplace_back(1, w[b++]);
    while (e > b && is_punct(w[e - 1])) trailing.emplace_back(1, w[--e]);
    if (e > b) out.push_back(w.substr(b, e - b));
    out.insert(out.end(), trailing.rbegin(), trailing.rend());
  }
  return out;
}

Vocabulary Vocabulary::build(const std::vector<std::string>& sentences, int max_size) {
  if (max_size < kNumSpecial) throw std::invalid_argument("vocabulary size below the number of special tokens");
  std::map<std::string, long> counts;
  for (const auto& s : sentences) {
    for (auto& w : words(s)) ++counts[w];
  }
  std::vector<std::pair<std::string, long>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary v;
  for (const auto& [w, _] : ranked) {
    if (v.size() >= max_size) break;
    if (v.index_.count(w)) continue;
    v.index_.emplace(w, v.size());
    v.tokens_.push_back(w);
  }
  return v;
}

int Vocabulary::id(std::string_view word) const {
  auto it = index_.find(std::string(word));
  return it == index_.end() ? kUnkId : it->second;
}

std::vector<int> Vocabulary::encode(std::string_view sentence) const {
  std::vector<int> ids{kClsId};
  for (const auto& w : words(sentence)) ids.push_back(id(w));
  ids.push_back(kSepId);
  return ids;
}

std::vector<int> Vocabulary::encode_pair(std::string_view a, std::string_view b) const {
  std::vector<int> ids = encode(a);
  for (const auto& w : words(b)) ids.push_back(id(w));
  ids.push_back(kSepId);
  return ids;
}

}  // namespace debias::tinylm
