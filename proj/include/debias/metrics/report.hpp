#pragma once

#include "debias/cda/types.hpp"
#include "debias/metrics/fairness.hpp"

#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace debias::metrics {

inline constexpr int kReportSchemaVersion = 1;

class ReportError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct DimensionMetrics {
  std::optional<double> ss;        // stereotype triples, percent
  std::optional<double> lm_score;  // percent
  std::optional<double> crows_ss;  // minimal pairs, percent
  std::optional<double> delta;     // multi-way similarity delta in [0, 1]
  std::optional<double> psi;       // rho * alpha * (1 - delta)

  friend bool operator==(const DimensionMetrics&, const DimensionMetrics&) = default;
};

struct BiasReport {
  int schema_version = kReportSchemaVersion;
  std::string name;
  std::map<cda::BiasDimension, DimensionMetrics> dimensions;
  std::optional<double> rho;
  double alpha = 1.0;
  std::optional<double> delta_average;
  std::optional<double> psi_average;
  std::optional<JigsawReport> jigsaw;
  nlohmann::json provenance = nlohmann::json::object();

  // Fills delta_average (mean of the per-dimension deltas) and the psi values
  // derivable from rho.
  void derive();

  nlohmann::json to_json() const;
  static BiasReport from_json(const nlohmann::json& j);
};

bool operator==(const BiasReport& a, const BiasReport& b);
bool operator==(const JigsawReport& a, const JigsawReport& b);

// Merges metrics for the same run (e.g. separate eval commands) into one.
// Later values overwrite earlier ones.
BiasReport merge(const BiasReport& base, const BiasReport& update);

enum class ReportFormat { table, records };
ReportFormat parse_report_format(const std::string& s);

// table: one row per report, two-decimal rounded, with the similarity columns
// (rho, delta per dimension, delta average, psi average) followed by
// intrinsic and toxicity sections when present. records: one JSON object per
// line at full precision. Throws ReportError on an empty list, mismatched
// schema versions or a stored psi that disagrees with its recomputation by
// more than 0.01.
std::string report_emit(const std::vector<BiasReport>& reports, ReportFormat format);
std::vector<BiasReport> parse_records(std::string_view contents);

}  // namespace debias::metrics
