#include "debias/metrics/fairness.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace debias::metrics {

double multiway_delta(std::span<const double> scores) {
  const std::size_t k = scores.size();
  if (k < 2) throw MetricError("multi-way delta needs at least 2 scores");
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) sum += std::abs(scores[i] - scores[j]);
  }
  return sum / (static_cast<double>(k) * static_cast<double>(k - 1) / 2.0);
}

double mean(std::span<const double> values) {
  if (values.empty()) throw MetricError("mean of an empty series");
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

double pearson(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw MetricError("pearson: series lengths differ");
  if (xs.size() < 2) throw MetricError("pearson: need at least 2 points");
  const double mx = mean(xs), my = mean(ys);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx, dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw MetricError("pearson: correlation is undefined for a constant series");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double useful_fairness(double rho, double delta, double alpha) {
  if (!(alpha > 0.0)) throw MetricError("useful fairness: alpha must be positive");
  return rho * alpha * (1.0 - delta);
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw MetricError("roc_auc: scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos = 0, neg = 0, pos_rank_sum = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t t = i; t < j; ++t) {
      const int y = labels[order[t]];
      if (y != 0 && y != 1) throw MetricError("roc_auc: labels must be 0 or 1");
      if (y == 1) {
        pos += 1;
        pos_rank_sum += midrank;
      } else {
        neg += 1;
      }
    }
    i = j;
  }
  if (pos == 0 || neg == 0) throw SingleClassError("roc_auc: both classes must be present");
  return (pos_rank_sum - pos * (pos + 1) / 2.0) / (pos * neg);
}

double generalized_mean(std::span<const double> values, double p) {
  if (values.empty()) throw MetricError("generalized mean of an empty set");
  if (p == 0.0) throw MetricError("generalized mean: p must be non-zero");
  double acc = 0.0;
  for (double v : values) {
    if (v <= 0.0 && p < 0.0) throw MetricError("generalized mean: non-positive value with negative power");
    if (v < 0.0) throw MetricError("generalized mean: values must be non-negative");
    acc += std::pow(v, p);
  }
  return std::pow(acc / static_cast<double>(values.size()), 1.0 / p);
}

const std::vector<std::string>& jigsaw_subgroups() {
  static const std::vector<std::string> kSubgroups = {
      "black",  "white",  "female",   "male", "homosexual_gay_or_lesbian",
      "muslim", "jewish", "christian", "psychiatric_or_mental_illness"};
  return kSubgroups;
}

void validate_comments(std::span<const AnnotatedComment> comments) {
  const auto& known = jigsaw_subgroups();
  for (const auto& c : comments) {
    if (c.label != 0 && c.label != 1) throw MetricError("comment label must be 0 or 1");
    for (const auto& g : c.subgroups) {
      if (std::find(known.begin(), known.end(), g) == known.end()) {
        throw MetricError("unknown identity subgroup: " + g);
      }
    }
  }
}

namespace {

template <typename Pred>
std::optional<double> auc_over(std::span<const AnnotatedComment> comments, Pred keep) {
  std::vector<double> s;
  std::vector<int> y;
  for (const auto& c : comments) {
    if (keep(c)) {
      s.push_back(c.score);
      y.push_back(c.label);
    }
  }
  try {
    return roc_auc(s, y);
  } catch (const SingleClassError&) {
    return std::nullopt;
  }
}

}  // namespace

JigsawSubmetrics jigsaw_submetrics(std::span<const AnnotatedComment> comments, const std::string& subgroup) {
  validate_comments(comments);
  auto in = [&](const AnnotatedComment& c) { return c.subgroups.count(subgroup) > 0; };
  JigsawSubmetrics m;
  m.subgroup_auc = auc_over(comments, in);
  m.bpsn_auc = auc_over(comments, [&](const AnnotatedComment& c) {
    return (in(c) && c.label == 0) || (!in(c) && c.label == 1);
  });
  m.bnsp_auc = auc_over(comments, [&](const AnnotatedComment& c) {
    return (in(c) && c.label == 1) || (!in(c) && c.label == 0);
  });
  return m;
}

double jigsaw_overall(double auc_overall, std::span<const std::optional<double>> submetric_means, double w0,
                      std::span<const double> weights) {
  std::vector<double> w(weights.begin(), weights.end());
  if (w.empty()) w.assign(submetric_means.size(), kJigsawWeight);
  if (w.size() != submetric_means.size()) throw MetricError("jigsaw overall: one weight per submetric required");
  double total = w0 * auc_overall;
  for (std::size_t a = 0; a < submetric_means.size(); ++a) {
    if (!submetric_means[a]) {
      throw MetricError("jigsaw overall: submetric " + std::to_string(a) +
                        " is undefined; exclude the subgroups with single-class subsets explicitly");
    }
    total += w[a] * *submetric_means[a];
  }
  return total;
}

JigsawReport jigsaw_report(std::span<const AnnotatedComment> comments, const std::vector<std::string>& subgroups,
                           double p) {
  validate_comments(comments);
  JigsawReport report;
  {
    std::vector<double> s;
    std::vector<int> y;
    for (const auto& c : comments) {
      s.push_back(c.score);
      y.push_back(c.label);
    }
    report.overall_auc = roc_auc(s, y);
  }
  std::vector<std::string> groups = subgroups;
  if (groups.empty()) {
    for (const auto& g : jigsaw_subgroups()) {
      bool present = std::any_of(comments.begin(), comments.end(),
                                 [&](const AnnotatedComment& c) { return c.subgroups.count(g) > 0; });
      if (present) groups.push_back(g);
    }
  }
  std::vector<double> sub, bpsn, bnsp;
  bool all_defined = !groups.empty();
  for (const auto& g : groups) {
    JigsawSubgroupRow row;
    row.subgroup = g;
    row.count = static_cast<std::size_t>(std::count_if(
        comments.begin(), comments.end(), [&](const AnnotatedComment& c) { return c.subgroups.count(g) > 0; }));
    row.metrics = jigsaw_submetrics(comments, g);
    if (row.metrics.subgroup_auc && row.metrics.bpsn_auc && row.metrics.bnsp_auc) {
      sub.push_back(*row.metrics.subgroup_auc);
      bpsn.push_back(*row.metrics.bpsn_auc);
      bnsp.push_back(*row.metrics.bnsp_auc);
    } else {
      all_defined = false;
    }
    report.rows.push_back(std::move(row));
  }
  if (all_defined) {
    report.mean_subgroup_auc = generalized_mean(sub, p);
    report.mean_bpsn_auc = generalized_mean(bpsn, p);
    report.mean_bnsp_auc = generalized_mean(bnsp, p);
    const std::optional<double> means[] = {report.mean_subgroup_auc, report.mean_bpsn_auc, report.mean_bnsp_auc};
    report.overall = jigsaw_overall(report.overall_auc, means);
  }
  return report;
}

double round_half_up(double value, int decimals) {
  const double scale = std::pow(10.0, decimals);
  // Nudge by a relative epsilon so decimal ties that land just below .5 in
  // binary (e.g. 0.685) still round up.
  const double scaled = value * scale;
  return std::floor(scaled + 0.5 + 1e-9 * std::max(1.0, std::abs(scaled))) / scale;
}

}  // namespace debias::metrics
