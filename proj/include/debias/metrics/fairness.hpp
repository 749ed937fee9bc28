#pragma once

#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace debias::metrics {

// Input outside a metric's domain (too few scores, constant series, ...).
class MetricError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

// ROC-AUC requested over data containing a single class.
class SingleClassError : public MetricError {
public:
  using MetricError::MetricError;
};

// Mean absolute difference over the C(k,2) unordered pairs.
double multiway_delta(std::span<const double> scores);

double pearson(std::span<const double> xs, std::span<const double> ys);

// rho * alpha * (1 - delta).
double useful_fairness(double rho, double delta, double alpha = 1.0);

double mean(std::span<const double> values);

// Mann-Whitney statistic with midranks: P(pos > neg) + 0.5 P(pos == neg).
double roc_auc(std::span<const double> scores, std::span<const int> labels);

// Power mean ((1/N) sum v^p)^(1/p), p != 0.
double generalized_mean(std::span<const double> values, double p);

// Identity subgroups annotated in the toxicity benchmark.
const std::vector<std::string>& jigsaw_subgroups();

struct AnnotatedComment {
  std::string text;
  int label = 0;       // 1 = toxic
  double score = 0.0;  // model probability of toxicity
  std::set<std::string> subgroups;
};

// Throws MetricError if a flag is not a known subgroup or a label is not 0/1.
void validate_comments(std::span<const AnnotatedComment> comments);

// A subset with a single class yields std::nullopt, never a number.
struct JigsawSubmetrics {
  std::optional<double> subgroup_auc;
  std::optional<double> bpsn_auc;
  std::optional<double> bnsp_auc;
};

JigsawSubmetrics jigsaw_submetrics(std::span<const AnnotatedComment> comments, const std::string& subgroup);

inline constexpr double kJigsawPower = -5.0;
inline constexpr double kJigsawWeight = 0.25;

// w0 * auc_overall + sum_a w_a * M_p(submetric a). Any undefined mean is an
// error: callers must exclude the offending subgroups explicitly.
double jigsaw_overall(double auc_overall, std::span<const std::optional<double>> submetric_means,
                      double w0 = kJigsawWeight,
                      std::span<const double> weights = std::span<const double>());

struct JigsawSubgroupRow {
  std::string subgroup;
  std::size_t count = 0;
  JigsawSubmetrics metrics;
};

struct JigsawReport {
  double overall_auc = 0.0;
  std::vector<JigsawSubgroupRow> rows;
  std::optional<double> mean_subgroup_auc, mean_bpsn_auc, mean_bnsp_auc;  // generalized means
  std::optional<double> overall;                                          // unset if a mean is undefined
};

// Full table over the listed subgroups (default: every known subgroup present
// in the data).
JigsawReport jigsaw_report(std::span<const AnnotatedComment> comments,
                           const std::vector<std::string>& subgroups = {}, double p = kJigsawPower);

// Half-up rounding for display; internal math keeps full precision.
double round_half_up(double value, int decimals = 2);

}  // namespace debias::metrics
