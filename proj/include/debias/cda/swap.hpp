#pragma once

#include "debias/cda/types.hpp"

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace debias::cda {

// "dominant<TAB>minority<TAB>dimension" per line. Parses only; no invariant
// checks, so verbatim source lists load as-is.
std::vector<CounterfactualPair> parse_pair_list(std::string_view contents);
std::vector<CounterfactualPair> load_pair_list(const std::string& path);
std::string serialize_pair_list(const std::vector<CounterfactualPair>& pairs);

struct SanitizeReport {
  std::vector<CounterfactualPair> kept;
  std::vector<std::pair<CounterfactualPair, std::string>> dropped;  // pair, reason
};

// Drops invalid pairs, exact or mirrored repeats, and pairs whose terms are
// already bound to a different counterpart. The first occurrence wins.
SanitizeReport sanitize_pairs(const std::vector<CounterfactualPair>& pairs);

// Throws PairListError describing the first violation, if any.
void validate_pairs(const std::vector<CounterfactualPair>& pairs);

// True when no term is a contiguous word span of another term. Longest-match
// swapping is an involution over such lists.
bool is_span_disjoint(const std::vector<CounterfactualPair>& pairs);

// Bidirectional term map used for 2-way CDA. Construction validates the pair
// list; swapping is a single left-to-right longest-match pass.
class SwapTable {
public:
  explicit SwapTable(const std::vector<CounterfactualPair>& pairs);

  std::string swap(std::string_view sentence) const;
  std::size_t size() const { return counterpart_.size(); }
  std::size_t max_words() const { return max_words_; }

private:
  std::unordered_map<std::string, std::string> counterpart_;  // folded term -> surface counterpart
  std::size_t max_words_ = 0;
};

std::string swap_sentence(std::string_view sentence, const std::vector<CounterfactualPair>& pairs);

// Originals (tagged original) followed by their swapped versions (tagged
// counterfactual); the output is always twice the input size.
Corpus apply_cda(const Corpus& corpus, const SwapTable& table);
Corpus apply_cda(const Corpus& corpus, const std::vector<CounterfactualPair>& pairs);

}  // namespace debias::cda
