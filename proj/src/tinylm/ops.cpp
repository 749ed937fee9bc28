#include "debias/tinylm/ops.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace debias::tinylm {

Mat linear(const Mat& x, const Mat& w, const Mat& b) {
  Mat y = x * w;
  y.rowwise() += b.row(0);
  return y;
}

Mat linear_backward(const Mat& x, const Mat& w, const Mat& dy, Mat& dw, Mat& db) {
  dw.noalias() += x.transpose() * dy;
  db.row(0) += dy.colwise().sum();
  return dy * w.transpose();
}

Mat layer_norm(const Mat& x, const Mat& gain, const Mat& bias, LayerNormCache* cache) {
  const Eigen::Index n = x.rows(), d = x.cols();
  Mat xhat(n, d);
  Eigen::VectorXd rstd(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mean = x.row(r).mean();
    const double var = (x.row(r).array() - mean).square().mean();
    rstd(r) = 1.0 / std::sqrt(var + kLayerNormEps);
    xhat.row(r) = (x.row(r).array() - mean) * rstd(r);
  }
  Mat y = xhat.array().rowwise() * gain.row(0).array();
  y.rowwise() += bias.row(0);
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return y;
}

Mat layer_norm_backward(const LayerNormCache& cache, const Mat& gain, const Mat& dy, Mat& dgain, Mat& dbias) {
  dgain.row(0) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  dbias.row(0) += dy.colwise().sum();
  Mat dxhat = dy.array().rowwise() * gain.row(0).array();
  Mat dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const double m1 = dxhat.row(r).mean();
    const double m2 = (dxhat.row(r).array() * cache.xhat.row(r).array()).mean();
    dx.row(r) = cache.rstd(r) * (dxhat.row(r).array() - m1 - cache.xhat.row(r).array() * m2);
  }
  return dx;
}

Mat gelu(const Mat& x) {
  return x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2)); });
}

Mat gelu_derivative(const Mat& x) {
  return x.unaryExpr([](double v) {
    const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * M_PI);
    return 0.5 * (1.0 + std::erf(v * M_SQRT1_2)) + v * pdf;
  });
}

namespace {
double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }
}  // namespace

Mat silu(const Mat& x) {
  return x.unaryExpr([](double v) { return v * sigmoid(v); });
}

Mat silu_derivative(const Mat& x) {
  return x.unaryExpr([](double v) {
    const double s = sigmoid(v);
    return s * (1.0 + v * (1.0 - s));
  });
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  const double mx = logits.maxCoeff();
  Eigen::VectorXd e = (logits.array() - mx).exp();
  return e / e.sum();
}

Mat self_attention(const Mat& x, std::span<const std::uint8_t> key_mask, const AttentionWeights& w,
                   int num_heads, AttentionCache* cache) {
  const Eigen::Index t = x.rows(), d = x.cols();
  if (static_cast<Eigen::Index>(key_mask.size()) != t) {
    throw std::invalid_argument("attention mask length " + std::to_string(key_mask.size()) +
                                " does not match sequence length " + std::to_string(t));
  }
  const Eigen::Index dh = d / num_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Mat q = linear(x, w.q.w->value, w.q.b->value);
  Mat k = linear(x, w.k.w->value, w.k.b->value);
  Mat v = linear(x, w.v.w->value, w.v.b->value);
  Mat ctx(t, d);
  std::vector<Mat> probs;
  probs.reserve(static_cast<std::size_t>(num_heads));
  const double neg_inf = -std::numeric_limits<double>::infinity();
  for (int h = 0; h < num_heads; ++h) {
    Mat s = q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose() * scale;
    for (Eigen::Index i = 0; i < t; ++i) {
      for (Eigen::Index j = 0; j < t; ++j) {
        if (!key_mask[static_cast<std::size_t>(j)] && i != j) s(i, j) = neg_inf;
      }
      s.row(i) = softmax(s.row(i).transpose()).transpose();
    }
    ctx.middleCols(h * dh, dh) = s * v.middleCols(h * dh, dh);
    probs.push_back(std::move(s));
  }
  Mat y = linear(ctx, w.o.w->value, w.o.b->value);
  if (cache) {
    cache->x = x;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->ctx = std::move(ctx);
    cache->probs = std::move(probs);
  }
  return y;
}

Mat self_attention_backward(const AttentionCache& c, const AttentionWeights& w, int num_heads, const Mat& dy) {
  const Eigen::Index t = c.x.rows(), d = c.x.cols();
  const Eigen::Index dh = d / num_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Mat dctx = linear_backward(c.ctx, w.o.w->value, dy, w.o.w->grad, w.o.b->grad);
  Mat dq(t, d), dk(t, d), dv(t, d);
  for (int h = 0; h < num_heads; ++h) {
    const Mat& p = c.probs[static_cast<std::size_t>(h)];
    Mat dctx_h = dctx.middleCols(h * dh, dh);
    Mat dp = dctx_h * c.v.middleCols(h * dh, dh).transpose();
    dv.middleCols(h * dh, dh) = p.transpose() * dctx_h;
    Eigen::VectorXd row_dot = (p.array() * dp.array()).rowwise().sum();
    Mat ds = p.array() * (dp.colwise() - row_dot).array();
    dq.middleCols(h * dh, dh) = ds * c.k.middleCols(h * dh, dh) * scale;
    dk.middleCols(h * dh, dh) = ds.transpose() * c.q.middleCols(h * dh, dh) * scale;
  }
  Mat dx = linear_backward(c.x, w.q.w->value, dq, w.q.w->grad, w.q.b->grad);
  dx += linear_backward(c.x, w.k.w->value, dk, w.k.w->grad, w.k.b->grad);
  dx += linear_backward(c.x, w.v.w->value, dv, w.v.w->grad, w.v.b->grad);
  return dx;
}

Mat adapter_forward(const Mat& h, const AdapterWeights& a, AdapterCache* cache) {
  if (h.cols() != a.down.w->value.rows()) {
    throw std::invalid_argument("adapter input width " + std::to_string(h.cols()) + " does not match hidden size " +
                                std::to_string(a.down.w->value.rows()));
  }
  AdapterCache local;
  AdapterCache& c = cache ? *cache : local;
  c.normed = layer_norm(h, a.ln_gain->value, a.ln_bias->value, &c.ln);
  c.pre = linear(c.normed, a.down.w->value, a.down.b->value);
  c.act = silu(c.pre);
  return h + linear(c.act, a.up.w->value, a.up.b->value);
}

std::vector<Mat> adapter_forward(const std::vector<Mat>& batch, const AdapterWeights& a) {
  std::vector<Mat> out;
  out.reserve(batch.size());
  for (const Mat& h : batch) out.push_back(adapter_forward(h, a));
  return out;
}

Mat adapter_backward(const AdapterCache& c, const AdapterWeights& a, const Mat& dy) {
  Mat dact = linear_backward(c.act, a.up.w->value, dy, a.up.w->grad, a.up.b->grad);
  Mat dpre = dact.cwiseProduct(silu_derivative(c.pre));
  Mat dnormed = linear_backward(c.normed, a.down.w->value, dpre, a.down.w->grad, a.down.b->grad);
  return dy + layer_norm_backward(c.ln, a.ln_gain->value, dnormed, a.ln_gain->grad, a.ln_bias->grad);
}

FusionOutput fusion_forward(const Mat& h, const std::vector<Mat>& adapter_outputs, const FusionWeights& f,
                            FusionCache* cache) {
  const std::size_t k = adapter_outputs.size();
  if (k == 0) throw std::invalid_argument("fusion needs at least one adapter output");
  for (const Mat& a : adapter_outputs) {
    if (a.rows() != h.rows() || a.cols() != h.cols()) {
      throw std::invalid_argument("fusion inputs must share the hidden-state shape");
    }
  }
  const Eigen::Index t = h.rows();
  const double scale = 1.0 / std::sqrt(static_cast<double>(h.cols()));
  Mat q = linear(h, f.query.w->value, f.query.b->value);
  std::vector<Mat> keys, values;
  keys.reserve(k);
  values.reserve(k);
  Mat scores(t, static_cast<Eigen::Index>(k));
  for (std::size_t i = 0; i < k; ++i) {
    keys.push_back(linear(adapter_outputs[i], f.key.w->value, f.key.b->value));
    values.push_back(linear(adapter_outputs[i], f.value.w->value, f.value.b->value));
    scores.col(static_cast<Eigen::Index>(i)) = (q.array() * keys.back().array()).rowwise().sum() * scale;
  }
  Mat weights(t, static_cast<Eigen::Index>(k));
  for (Eigen::Index r = 0; r < t; ++r) weights.row(r) = softmax(scores.row(r).transpose()).transpose();
  Mat out = Mat::Zero(t, h.cols());
  for (std::size_t i = 0; i < k; ++i) {
    out += (values[i].array().colwise() * weights.col(static_cast<Eigen::Index>(i)).array()).matrix();
  }
  if (cache) {
    cache->h = h;
    cache->q = std::move(q);
    cache->inputs = adapter_outputs;
    cache->keys = std::move(keys);
    cache->values = std::move(values);
    cache->weights = weights;
  }
  return {std::move(out), std::move(weights)};
}

FusionGrads fusion_backward(const FusionCache& c, const FusionWeights& f, const Mat& dy) {
  const std::size_t k = c.inputs.size();
  const Eigen::Index t = c.h.rows();
  const double scale = 1.0 / std::sqrt(static_cast<double>(c.h.cols()));
  Mat dw(t, static_cast<Eigen::Index>(k));
  for (std::size_t i = 0; i < k; ++i) {
    dw.col(static_cast<Eigen::Index>(i)) = (dy.array() * c.values[i].array()).rowwise().sum();
  }
  Eigen::VectorXd row_dot = (c.weights.array() * dw.array()).rowwise().sum();
  Mat ds = c.weights.array() * (dw.colwise() - row_dot).array();

  FusionGrads g;
  Mat dq = Mat::Zero(t, c.h.cols());
  for (std::size_t i = 0; i < k; ++i) {
    const auto col = static_cast<Eigen::Index>(i);
    Mat dvalue = dy.array().colwise() * c.weights.col(col).array();
    Mat dkey = c.q.array().colwise() * (ds.col(col).array() * scale);
    dq += (c.keys[i].array().colwise() * (ds.col(col).array() * scale)).matrix();
    Mat da = linear_backward(c.inputs[i], f.value.w->value, dvalue, f.value.w->grad, f.value.b->grad);
    da += linear_backward(c.inputs[i], f.key.w->value, dkey, f.key.w->grad, f.key.b->grad);
    g.dinputs.push_back(std::move(da));
  }
  g.dh = linear_backward(c.h, f.query.w->value, dq, f.query.w->grad, f.query.b->grad);
  return g;
}

}  // namespace debias::tinylm
