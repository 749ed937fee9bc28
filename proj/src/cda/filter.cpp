#include "debias/cda/filter.hpp"

#include "debias/common/io.hpp"
#include "debias/common/text.hpp"

#include <charconv>
#include <cmath>

namespace debias::cda {

void FrequencyTable::add(std::string_view term, double per_million) {
  if (!(per_million >= 0.0) || !std::isfinite(per_million)) {
    throw std::invalid_argument("frequency must be a non-negative number for term " + std::string(term));
  }
  freq_[text::lower(text::normalize_space(term))] += per_million;
}

double FrequencyTable::lookup(std::string_view term) const {
  auto it = freq_.find(text::lower(text::normalize_space(term)));
  return it == freq_.end() ? 0.0 : it->second;
}

FrequencyTable FrequencyTable::parse(std::string_view contents) {
  FrequencyTable table;
  std::size_t line_no = 0;
  for (const std::string& line : text::split(contents, '\n')) {
    ++line_no;
    if (text::trim(line).empty() || line.front() == '#') continue;
    auto cols = text::split(line, '\t');
    if (cols.size() != 2) {
      throw std::runtime_error("frequency table line " + std::to_string(line_no) + ": expected 2 columns");
    }
    std::string_view num = text::trim(cols[1]);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(num.data(), num.data() + num.size(), v);
    if (ec != std::errc() || ptr != num.data() + num.size()) {
      throw std::runtime_error("frequency table line " + std::to_string(line_no) + ": bad number '" +
                               std::string(num) + "'");
    }
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw std::runtime_error("frequency table line " + std::to_string(line_no) + ": frequency " +
                               std::string(num) + " is negative or not finite");
    }
    table.add(cols[0], v);
  }
  return table;
}

FrequencyTable FrequencyTable::load(const std::string& path) { return parse(read_file(path)); }

std::vector<CounterfactualPair> filter_pairs(const std::vector<CounterfactualPair>& pairs,
                                             const FrequencyTable& freq,
                                             const FrequencyThresholds& thresholds) {
  std::vector<CounterfactualPair> kept;
  for (const auto& p : pairs) {
    const double t = thresholds.at(p.dimension);
    if (freq.lookup(p.dominant) >= t && freq.lookup(p.minority) >= t) kept.push_back(p);
  }
  return kept;
}

}  // namespace debias::cda
