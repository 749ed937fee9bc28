#pragma once

// Central finite-difference oracle for the hand-written backward passes.

#include "debias/common/rng.hpp"
#include "debias/tinylm/model.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace debias::testing {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;
  int checked = 0;
};

// Adds noise to every parameter so that no path through the graph is
// degenerate (e.g. near-zero adapter up-projections).
inline void perturb_parameters(tinylm::ModelGraph& model, std::uint64_t seed, double scale = 0.15) {
  Rng rng(seed);
  for (auto& [name, p] : model.params()) {
    for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] += rng.normal() * scale;
  }
}

// Relative error is |a - n| / max(|a|, |n|, 1e-6). The floor keeps exactly-zero
// gradients (attention key biases are softmax shift-invariant) from turning
// finite-difference round-off into a large ratio.
//
// `loss(true)` must zero the gradients, evaluate the loss and backpropagate;
// `loss(false)` evaluates only. Samples up to `per_tensor` entries per tensor.
inline GradCheckResult check_gradients(tinylm::ModelGraph& model, const std::vector<std::string>& names,
                                       const std::function<double(bool)>& loss, int per_tensor,
                                       std::uint64_t seed, double step = 1e-5) {
  loss(true);
  std::vector<std::pair<std::string, tinylm::Mat>> analytic;
  for (const auto& n : names) analytic.emplace_back(n, model.params().at(n).grad);

  GradCheckResult result;
  Rng rng(seed);
  for (const auto& [name, grad] : analytic) {
    tinylm::Mat& value = model.params().at(name).value;
    const Eigen::Index size = value.size();
    const int count = static_cast<int>(std::min<Eigen::Index>(size, per_tensor));
    for (int s = 0; s < count; ++s) {
      const Eigen::Index i = size <= per_tensor ? s : static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(size)));
      const double orig = value.data()[i];
      value.data()[i] = orig + step;
      const double up = loss(false);
      value.data()[i] = orig - step;
      const double down = loss(false);
      value.data()[i] = orig;
      const double numeric = (up - down) / (2 * step);
      const double a = grad.data()[i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
      ++result.checked;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst = name + "[" + std::to_string(i) + "] analytic=" + std::to_string(a) +
                       " numeric=" + std::to_string(numeric);
      }
    }
  }
  return result;
}

}  // namespace debias::testing
