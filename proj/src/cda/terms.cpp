#include "debias/cda/terms.hpp"

#include "debias/common/io.hpp"
#include "debias/common/text.hpp"

#include <fstream>
#include <nlohmann/json.hpp>

namespace debias::cda {

bool TermCatalog::insert(TermEntry entry) {
  auto key = std::make_pair(entry.dimension, text::lower(entry.term));
  return entries_.emplace(std::move(key), std::move(entry)).second;
}

std::vector<TermEntry> TermCatalog::entries() const {
  std::vector<TermEntry> out;
  out.reserve(entries_.size());
  for (const auto& [key, e] : entries_) out.push_back(e);
  return out;
}

std::vector<TermEntry> TermCatalog::entries(BiasDimension d) const {
  std::vector<TermEntry> out;
  for (const auto& [key, e] : entries_) {
    if (key.first == d) out.push_back(e);
  }
  return out;
}

bool TermCatalog::contains(std::string_view term, BiasDimension d) const {
  return entries_.count({d, text::lower(term)}) > 0;
}

PropertyConfig PropertyConfig::defaults() {
  PropertyConfig cfg;
  auto add = [&](BiasDimension d, std::initializer_list<const char*> codes) {
    for (const char* c : codes) {
      cfg.allowlist.insert(c);
      cfg.dimension_of[c] = d;
    }
  };
  add(BiasDimension::gender, {"P3321", "P6553", "P21", "P5185"});
  add(BiasDimension::race, {"P27", "P172", "Q874405", "Q3254959"});
  add(BiasDimension::religion, {"P1049", "P140", "Q178885", "Q9174", "Q375011", "Q4392985",
                                "Q21029893", "Q105889895", "Q179461", "Q1370598", "Q71966963"});
  add(BiasDimension::profession, {"P101", "P106", "P3095"});
  return cfg;
}

PropertyConfig PropertyConfig::parse(std::string_view contents) {
  PropertyConfig cfg;
  std::size_t line_no = 0;
  for (const auto& raw : text::split(contents, '\n')) {
    ++line_no;
    const std::string line(text::trim(raw));
    if (line.empty() || line[0] == '#') continue;
    const auto cols = text::split(line, '\t');
    const auto dim = cols.size() >= 2 ? try_parse_dimension(text::trim(cols[1])) : std::nullopt;
    if (!dim) throw std::invalid_argument("property table line " + std::to_string(line_no) + ": expected code<TAB>dimension");
    const std::string code(text::trim(cols[0]));
    cfg.allowlist.insert(code);
    cfg.dimension_of[code] = *dim;
  }
  if (cfg.allowlist.empty()) throw std::invalid_argument("property table lists no codes");
  return cfg;
}

PropertyConfig PropertyConfig::load(const std::string& path) { return parse(read_file(path)); }

namespace {

std::optional<std::string> string_field(const nlohmann::json& rec, const char* key) {
  auto it = rec.find(key);
  if (it == rec.end()) return std::nullopt;
  if (it->is_string()) return it->get<std::string>();
  if (it->is_number_integer()) return std::to_string(it->get<long long>());
  return std::nullopt;
}

}  // namespace

ExtractResult extract_terms(std::istream& dump, const PropertyConfig& config) {
  if (config.allowlist.empty()) throw std::invalid_argument("property allow-list is empty");
  if (!dump.good()) throw std::runtime_error("knowledge-base dump is not readable");

  ExtractResult result;
  auto& diag = result.diagnostics;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(dump, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    ++diag.records;
    auto rec = nlohmann::json::parse(line, nullptr, /*allow_exceptions=*/false);
    std::optional<std::string> id, property, value;
    if (rec.is_object()) {
      id = string_field(rec, "id");
      property = string_field(rec, "property");
      value = string_field(rec, "value");
    }
    if (!id || !property || !value || text::trim(*value).empty()) {
      ++diag.malformed;
      diag.malformed_lines.push_back(line_no);
      continue;
    }
    auto dim = config.dimension_of.find(*property);
    if (!config.allowlist.count(*property) || dim == config.dimension_of.end()) {
      ++diag.filtered;
      continue;
    }
    TermEntry entry{text::normalize_space(*value), dim->second, *property};
    if (!result.catalog.insert(std::move(entry))) ++diag.duplicates;
  }
  if (dump.bad()) throw std::runtime_error("read error while scanning knowledge-base dump");
  return result;
}

ExtractResult extract_terms_file(const std::string& path, const PropertyConfig& config) {
  std::ifstream in(path);
  if (!in) throw MissingInputError(path);
  return extract_terms(in, config);
}

}  // namespace debias::cda
