#pragma once

#include "debias/cda/types.hpp"

#include <cstddef>
#include <istream>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace debias::cda {

struct TermEntry {
  std::string term;
  BiasDimension dimension;
  std::string source_property;

  friend bool operator==(const TermEntry&, const TermEntry&) = default;
};

// Terms keyed case-insensitively per dimension. Iteration order is
// (dimension, lowercased term), independent of the order records arrived in.
class TermCatalog {
public:
  // Returns false when an equivalent term is already present.
  bool insert(TermEntry entry);

  std::vector<TermEntry> entries() const;
  std::vector<TermEntry> entries(BiasDimension d) const;
  bool contains(std::string_view term, BiasDimension d) const;
  std::size_t size() const { return entries_.size(); }

private:
  std::map<std::pair<BiasDimension, std::string>, TermEntry> entries_;
};

struct PropertyConfig {
  std::set<std::string> allowlist;
  std::map<std::string, BiasDimension> dimension_of;

  // Property and item codes used for gender, race, religion and profession terms.
  static PropertyConfig defaults();
  // "code<TAB>dimension[<TAB>description]" per line; '#' starts a comment.
  static PropertyConfig parse(std::string_view contents);
  static PropertyConfig load(const std::string& path);
};

struct ExtractDiagnostics {
  std::size_t records = 0;
  std::size_t malformed = 0;
  std::size_t filtered = 0;
  std::size_t duplicates = 0;
  std::vector<std::size_t> malformed_lines;  // 1-based
};

struct ExtractResult {
  TermCatalog catalog;
  ExtractDiagnostics diagnostics;
};

// Reads newline-delimited JSON records {"id", "property", "value"}.
// Malformed records are skipped and tallied; a stream that cannot be read throws.
ExtractResult extract_terms(std::istream& dump, const PropertyConfig& config);
ExtractResult extract_terms_file(const std::string& path, const PropertyConfig& config);

}  // namespace debias::cda
