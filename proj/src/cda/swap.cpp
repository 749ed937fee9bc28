#include "debias/cda/swap.hpp"

#include "debias/common/io.hpp"
#include "debias/common/text.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <set>

namespace debias::cda {

std::vector<CounterfactualPair> parse_pair_list(std::string_view contents) {
  std::vector<CounterfactualPair> pairs;
  std::size_t line_no = 0;
  for (const std::string& line : text::split(contents, '\n')) {
    ++line_no;
    if (text::trim(line).empty() || line.front() == '#') continue;
    auto cols = text::split(line, '\t');
    if (cols.size() != 3) {
      throw PairListError("pair list line " + std::to_string(line_no) + ": expected 3 tab-separated columns");
    }
    auto dim = try_parse_dimension(text::trim(cols[2]));
    if (!dim) throw PairListError("pair list line " + std::to_string(line_no) + ": unknown dimension '" + cols[2] + "'");
    pairs.push_back({text::normalize_space(cols[0]), text::normalize_space(cols[1]), *dim});
  }
  return pairs;
}

std::vector<CounterfactualPair> load_pair_list(const std::string& path) {
  return parse_pair_list(read_file(path));
}

std::string serialize_pair_list(const std::vector<CounterfactualPair>& pairs) {
  std::string out;
  for (const auto& p : pairs) {
    out += p.dominant + '\t' + p.minority + '\t' + std::string(to_string(p.dimension)) + '\n';
  }
  return out;
}

namespace {

// Shared bookkeeping for sanitize_pairs and validate_pairs.
class PairBinder {
public:
  // Returns an error message when the pair cannot join the list.
  std::optional<std::string> check(const CounterfactualPair& p) const {
    if (auto defect = pair_defect(p)) return defect;
    const std::string d = text::lower(p.dominant), m = text::lower(p.minority);
    if (dominants_.count({p.dimension, d})) {
      return "'" + p.dominant + "' is already dominant in another " + std::string(to_string(p.dimension)) + " pair";
    }
    for (const auto& [term, other] : {std::pair{d, m}, std::pair{m, d}}) {
      auto it = bound_.find(term);
      if (it != bound_.end() && it->second != other) {
        return "'" + term + "' is already paired with '" + it->second + "'";
      }
    }
    return std::nullopt;
  }

  void bind(const CounterfactualPair& p) {
    const std::string d = text::lower(p.dominant), m = text::lower(p.minority);
    dominants_.insert({p.dimension, d});
    bound_[d] = m;
    bound_[m] = d;
  }

private:
  std::set<std::pair<BiasDimension, std::string>> dominants_;
  std::map<std::string, std::string> bound_;
};

bool is_word_byte(unsigned char c) {
  if (c >= 0x80) return true;
  if (std::isalnum(c)) return true;
  return c == '-' || c == '\'';
}

struct Span {
  std::size_t begin;
  std::size_t end;
};

std::vector<Span> word_spans(std::string_view s) {
  std::vector<Span> spans;
  std::size_t i = 0;
  while (i < s.size()) {
    if (!is_word_byte(static_cast<unsigned char>(s[i]))) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < s.size() && is_word_byte(static_cast<unsigned char>(s[j]))) ++j;
    spans.push_back({i, j});
    i = j;
  }
  return spans;
}

std::vector<std::string> folded_words(std::string_view term) {
  std::vector<std::string> words;
  for (const Span& sp : word_spans(term)) words.push_back(text::lower(term.substr(sp.begin, sp.end - sp.begin)));
  return words;
}

bool whitespace_only(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](char c) { return std::isspace(static_cast<unsigned char>(c)); });
}

std::string mirror_case(std::string replacement, std::string_view original) {
  if (replacement.empty() || original.empty()) return replacement;
  unsigned char o = static_cast<unsigned char>(original.front());
  unsigned char& r = reinterpret_cast<unsigned char&>(replacement.front());
  if (o >= 0x80 || r >= 0x80) return replacement;
  if (std::isupper(o)) r = static_cast<unsigned char>(std::toupper(r));
  else if (std::islower(o)) r = static_cast<unsigned char>(std::tolower(r));
  return replacement;
}

}  // namespace

SanitizeReport sanitize_pairs(const std::vector<CounterfactualPair>& pairs) {
  SanitizeReport report;
  PairBinder binder;
  for (const auto& p : pairs) {
    if (auto err = binder.check(p)) {
      report.dropped.emplace_back(p, *err);
      continue;
    }
    binder.bind(p);
    report.kept.push_back(p);
  }
  return report;
}

void validate_pairs(const std::vector<CounterfactualPair>& pairs) {
  PairBinder binder;
  for (const auto& p : pairs) {
    if (auto err = binder.check(p)) {
      throw PairListError("invalid pair (" + p.dominant + ", " + p.minority + "): " + *err);
    }
    binder.bind(p);
  }
}

bool is_span_disjoint(const std::vector<CounterfactualPair>& pairs) {
  std::set<std::vector<std::string>> terms;
  for (const auto& p : pairs) {
    terms.insert(folded_words(p.dominant));
    terms.insert(folded_words(p.minority));
  }
  for (const auto& t : terms) {
    for (std::size_t len = 1; len < t.size(); ++len) {
      for (std::size_t start = 0; start + len <= t.size(); ++start) {
        std::vector<std::string> sub(t.begin() + static_cast<long>(start), t.begin() + static_cast<long>(start + len));
        if (terms.count(sub)) return false;
      }
    }
  }
  return true;
}

SwapTable::SwapTable(const std::vector<CounterfactualPair>& pairs) {
  validate_pairs(pairs);
  for (const auto& p : pairs) {
    auto d = folded_words(p.dominant);
    auto m = folded_words(p.minority);
    if (d.empty() || m.empty()) {
      throw PairListError("pair (" + p.dominant + ", " + p.minority + ") has no matchable words");
    }
    counterpart_[text::join(d, " ")] = p.minority;
    counterpart_[text::join(m, " ")] = p.dominant;
    max_words_ = std::max({max_words_, d.size(), m.size()});
  }
}

std::string SwapTable::swap(std::string_view sentence) const {
  const auto spans = word_spans(sentence);
  std::string out;
  out.reserve(sentence.size() + 16);
  std::size_t emitted = 0;  // byte offset of sentence already copied
  std::size_t i = 0;
  while (i < spans.size()) {
    bool replaced = false;
    const std::size_t longest = std::min(max_words_, spans.size() - i);
    for (std::size_t len = longest; len >= 1 && !replaced; --len) {
      std::string key;
      bool contiguous = true;
      for (std::size_t k = 0; k < len && contiguous; ++k) {
        const Span& sp = spans[i + k];
        if (k > 0) {
          contiguous = whitespace_only(sentence.substr(spans[i + k - 1].end, sp.begin - spans[i + k - 1].end));
          key += ' ';
        }
        key += text::lower(sentence.substr(sp.begin, sp.end - sp.begin));
      }
      if (!contiguous) continue;
      auto it = counterpart_.find(key);
      if (it == counterpart_.end()) continue;
      const std::size_t begin = spans[i].begin;
      const std::size_t end = spans[i + len - 1].end;
      out.append(sentence.substr(emitted, begin - emitted));
      out += mirror_case(it->second, sentence.substr(begin, end - begin));
      emitted = end;
      i += len;
      replaced = true;
    }
    if (!replaced) ++i;
  }
  out.append(sentence.substr(emitted));
  return out;
}

std::string swap_sentence(std::string_view sentence, const std::vector<CounterfactualPair>& pairs) {
  return SwapTable(pairs).swap(sentence);
}

Corpus apply_cda(const Corpus& corpus, const SwapTable& table) {
  for (const Sentence& s : corpus.sentences) {
    if (s.origin == Origin::counterfactual) {
      throw std::invalid_argument("apply_cda input already contains counterfactual sentences");
    }
  }
  Corpus out;
  out.sentences.reserve(corpus.size() * 2);
  for (const Sentence& s : corpus.sentences) out.sentences.push_back(Sentence::from_text(s.text, Origin::original));
  for (const Sentence& s : corpus.sentences) {
    out.sentences.push_back(Sentence::from_text(table.swap(s.text), Origin::counterfactual));
  }
  return out;
}

Corpus apply_cda(const Corpus& corpus, const std::vector<CounterfactualPair>& pairs) {
  return apply_cda(corpus, SwapTable(pairs));
}

}  // namespace debias::cda
