#pragma once

#include <array>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace debias::cda {

enum class BiasDimension { gender, race, religion, profession };

inline constexpr std::array<BiasDimension, 4> kAllDimensions = {
    BiasDimension::gender, BiasDimension::race, BiasDimension::religion,
    BiasDimension::profession};

std::string_view to_string(BiasDimension d);
// Accepts the canonical lowercase names; throws std::invalid_argument otherwise.
BiasDimension parse_dimension(std::string_view name);
std::optional<BiasDimension> try_parse_dimension(std::string_view name);

class PairListError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Ordered (dominant, minority) term pair within one bias dimension.
struct CounterfactualPair {
  std::string dominant;
  std::string minority;
  BiasDimension dimension = BiasDimension::gender;

  friend bool operator==(const CounterfactualPair&, const CounterfactualPair&) = default;
};

// Per-pair invariants: both terms non-empty, 1..5 words, distinct ignoring case.
std::optional<std::string> pair_defect(const CounterfactualPair& p);

enum class Origin { original, counterfactual };
std::string_view to_string(Origin o);

struct Sentence {
  std::string text;                 // whitespace-normalized
  std::vector<std::string> tokens;  // whitespace tokens; join(tokens, " ") == text
  std::optional<Origin> origin;

  static Sentence from_text(std::string_view raw, std::optional<Origin> origin = std::nullopt);
  friend bool operator==(const Sentence&, const Sentence&) = default;
};

struct Corpus {
  std::vector<Sentence> sentences;

  std::size_t size() const { return sentences.size(); }
  bool empty() const { return sentences.empty(); }
  friend bool operator==(const Corpus&, const Corpus&) = default;
};

// One sentence per line. Lines of the form "original<TAB>text" or
// "counterfactual<TAB>text" carry an origin tag; blank lines are skipped.
Corpus parse_corpus(std::string_view contents);
Corpus load_corpus(const std::string& path);
std::string serialize_corpus(const Corpus& corpus);

}  // namespace debias::cda
