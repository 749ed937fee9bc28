#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <vector>

namespace debias::tinylm {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Param {
  Mat value;
  Mat grad;
};

// Row-vector bias broadcast over rows.
Mat linear(const Mat& x, const Mat& w, const Mat& b);
// Accumulates dw/db; returns dx.
Mat linear_backward(const Mat& x, const Mat& w, const Mat& dy, Mat& dw, Mat& db);

struct LayerNormCache {
  Mat xhat;
  Eigen::VectorXd rstd;
};

inline constexpr double kLayerNormEps = 1e-5;

Mat layer_norm(const Mat& x, const Mat& gain, const Mat& bias, LayerNormCache* cache);
Mat layer_norm_backward(const LayerNormCache& cache, const Mat& gain, const Mat& dy, Mat& dgain, Mat& dbias);

Mat gelu(const Mat& x);
Mat gelu_derivative(const Mat& x);
Mat silu(const Mat& x);
Mat silu_derivative(const Mat& x);

// Numerically stable softmax; -inf logits get probability 0.
Eigen::VectorXd softmax(const Eigen::VectorXd& logits);

struct LinearWeights {
  Param* w = nullptr;
  Param* b = nullptr;
};

struct AttentionWeights {
  LinearWeights q, k, v, o;
};

struct AttentionCache {
  Mat x, q, k, v, ctx;
  std::vector<Mat> probs;  // one [T,T] matrix per head
};

// Multi-head self-attention. Query i may attend to key j iff key_mask[j] != 0
// or i == j, so every row has at least one admissible key.
Mat self_attention(const Mat& x, std::span<const std::uint8_t> key_mask, const AttentionWeights& w,
                   int num_heads, AttentionCache* cache);
Mat self_attention_backward(const AttentionCache& cache, const AttentionWeights& w, int num_heads,
                            const Mat& dy);

struct AdapterWeights {
  Param* ln_gain = nullptr;
  Param* ln_bias = nullptr;
  LinearWeights down, up;
};

struct AdapterCache {
  LayerNormCache ln;
  Mat normed, pre, act;
};

// h + up(silu(down(LN(h)))).
Mat adapter_forward(const Mat& h, const AdapterWeights& a, AdapterCache* cache = nullptr);
std::vector<Mat> adapter_forward(const std::vector<Mat>& batch, const AdapterWeights& a);
Mat adapter_backward(const AdapterCache& cache, const AdapterWeights& a, const Mat& dy);

struct FusionWeights {
  LinearWeights query, key, value;
};

struct FusionCache {
  Mat h, q;
  std::vector<Mat> inputs, keys, values;
  Mat weights;  // [T, k]
};

struct FusionOutput {
  Mat output;
  Mat weights;  // per-token attention over the k adapters, rows sum to 1
};

// Per token: w = softmax_i(<Q h, K a_i> / sqrt(d)), output = sum_i w_i V a_i.
FusionOutput fusion_forward(const Mat& h, const std::vector<Mat>& adapter_outputs, const FusionWeights& f,
                            FusionCache* cache = nullptr);

struct FusionGrads {
  Mat dh;
  std::vector<Mat> dinputs;
};
FusionGrads fusion_backward(const FusionCache& cache, const FusionWeights& f, const Mat& dy);

}  // namespace debias::tinylm
