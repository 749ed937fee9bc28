#include "debias/cda/types.hpp"

#include "debias/common/io.hpp"
#include "debias/common/text.hpp"

namespace debias::cda {

std::string_view to_string(BiasDimension d) {
  switch (d) {
    case BiasDimension::gender: return "gender";
    case BiasDimension::race: return "race";
    case BiasDimension::religion: return "religion";
    case BiasDimension::profession: return "profession";
  }
  return "unknown";
}

std::optional<BiasDimension> try_parse_dimension(std::string_view name) {
  for (BiasDimension d : kAllDimensions) {
    if (text::iequals(name, to_string(d))) return d;
  }
  return std::nullopt;
}

BiasDimension parse_dimension(std::string_view name) {
  if (auto d = try_parse_dimension(name)) return *d;
  throw std::invalid_argument("unknown bias dimension: " + std::string(name));
}

std::string_view to_string(Origin o) {
  return o == Origin::original ? "original" : "counterfactual";
}

std::optional<std::string> pair_defect(const CounterfactualPair& p) {
  for (const std::string* term : {&p.dominant, &p.minority}) {
    const auto words = text::split_whitespace(*term);
    if (words.empty()) return "empty term";
    if (words.size() > 5) return "term longer than 5 words: " + *term;
    if (text::normalize_space(*term) != *term) return "term has irregular whitespace: '" + *term + "'";
  }
  if (text::iequals(p.dominant, p.minority)) return "self pair: " + p.dominant;
  return std::nullopt;
}

Sentence Sentence::from_text(std::string_view raw, std::optional<Origin> origin) {
  Sentence s;
  s.tokens = text::split_whitespace(raw);
  s.text = text::join(s.tokens, " ");
  s.origin = origin;
  return s;
}

Corpus parse_corpus(std::string_view contents) {
  Corpus corpus;
  for (const std::string& line : text::split(contents, '\n')) {
    std::string_view body = text::trim(line);
    if (body.empty()) continue;
    std::optional<Origin> origin;
    if (auto tab = body.find('\t'); tab != std::string_view::npos) {
      std::string_view tag = body.substr(0, tab);
      if (tag == "original") {
        origin = Origin::original;
        body = body.substr(tab + 1);
      } else if (tag == "counterfactual") {
        origin = Origin::counterfactual;
        body = body.substr(tab + 1);
      }
    }
    corpus.sentences.push_back(Sentence::from_text(body, origin));
  }
  return corpus;
}

Corpus load_corpus(const std::string& path) { return parse_corpus(read_file(path)); }

std::string serialize_corpus(const Corpus& corpus) {
  std::string out;
  for (const Sentence& s : corpus.sentences) {
    if (s.origin) {
      out += to_string(*s.origin);
      out += '\t';
    }
    out += s.text;
    out += '\n';
  }
  return out;
}

}  // namespace debias::cda
