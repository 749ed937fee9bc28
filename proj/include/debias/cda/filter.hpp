#pragma once

#include "debias/cda/types.hpp"

#include <map>
#include <string>
#include <unordered_map>
#include <vector>

namespace debias::cda {

// Term frequencies in occurrences per million words. Keys are case-folded and
// case variants accumulate.
class FrequencyTable {
public:
  void add(std::string_view term, double per_million);
  double lookup(std::string_view term) const;
  std::size_t size() const { return freq_.size(); }

  // "term<TAB>freq_per_million" per line.
  static FrequencyTable parse(std::string_view contents);
  static FrequencyTable load(const std::string& path);

private:
  std::unordered_map<std::string, double> freq_;
};

struct FrequencyThresholds {
  std::map<BiasDimension, double> per_million = {
      {BiasDimension::gender, 0.01},
      {BiasDimension::race, 1.0},
      {BiasDimension::religion, 1.0},
      {BiasDimension::profession, 1.0},
  };

  double at(BiasDimension d) const { return per_million.at(d); }
};

// Keeps a pair iff both of its terms reach the dimension's threshold.
std::vector<CounterfactualPair> filter_pairs(const std::vector<CounterfactualPair>& pairs,
                                             const FrequencyTable& freq,
                                             const FrequencyThresholds& thresholds = {});

}  // namespace debias::cda
