#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "tsumm/tensor.hpp"

namespace tsumm {

template <typename T>
struct LinearParamsT {
  TensorT<T> w;  // [in x out]
  TensorT<T> b;  // [out]
};

template <typename T>
struct LayerNormParamsT {
  TensorT<T> gain;
  TensorT<T> bias;
};

template <typename T>
struct SwigluParamsT {
  LinearParamsT<T> w1;  // gate branch, [d x hidden]
  LinearParamsT<T> w3;  // value branch, [d x hidden]
  LinearParamsT<T> w2;  // projection back, [hidden x d]
};

constexpr double kLayerNormEps = 1e-5;

template <typename T>
TensorT<T> linear(Graph<T>& g, const TensorT<T>& x, const LinearParamsT<T>& p) {
  return g.add_bias(g.matmul(x, p.w), p.b);
}

template <typename T>
TensorT<T> layer_norm(Graph<T>& g, const TensorT<T>& x, const LayerNormParamsT<T>& p,
                      double eps = kLayerNormEps) {
  return g.layer_norm(x, p.gain, p.bias, eps);
}

// (silu(x.W1 + b1) * (x.W3 + b3)) . W2 + b2
template <typename T>
TensorT<T> swiglu_ffn(Graph<T>& g, const TensorT<T>& x, const SwigluParamsT<T>& p) {
  TensorT<T> gate = g.activation(linear(g, x, p.w1), Act::kSilu);
  TensorT<T> val = linear(g, x, p.w3);
  return linear(g, g.mul(gate, val), p.w2);
}

template <typename T>
struct AttentionResult {
  TensorT<T> out;      // [nq x dv]
  TensorT<T> weights;  // [nq x nk], post-softmax (pre-dropout)
};

// softmax(q.k^T / sqrt(dk)).v with disallowed keys receiving exactly zero
// weight. Gradients flow to q, k and v; `weights` is itself a graph node.
template <typename T>
AttentionResult<T> scaled_masked_attention(Graph<T>& g, const TensorT<T>& q, const TensorT<T>& k,
                                           const TensorT<T>& v, const AttentionMask& mask,
                                           double dropout_rate = 0.0, Rng* rng = nullptr) {
  check_arg(q.rank() == 2 && k.rank() == 2 && v.rank() == 2, "attention: operands must be rank 2");
  check_arg(q.cols() == k.cols(), "attention: q/k dims differ");
  check_arg(k.rows() == v.rows(), "attention: k/v counts differ");
  check_arg(mask.rows == q.rows() && mask.cols == k.rows(), "attention: mask shape mismatch");
  const double inv_sqrt_dk = 1.0 / std::sqrt(double(q.cols()));
  TensorT<T> logits = g.scale(g.matmul_nt(q, k), inv_sqrt_dk);
  TensorT<T> weights = g.masked_softmax_rows(logits, mask);
  TensorT<T> applied = weights;
  if (dropout_rate > 0.0 && rng != nullptr) applied = g.dropout(weights, dropout_rate, *rng);
  return {g.matmul(applied, v), weights};
}

// ---- gradient verification ----

struct FdReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  size_t worst_index = 0;
};

// Central-difference check of analytic gradients. `loss_fn(want_grads)` must
// rebuild the computation from scratch, run backward when asked, and return
// the loss; grads accumulate into the listed parameter tensors. Relative
// error uses an absolute floor: |a - fd| / max(|a|, |fd|, floor).
template <typename T>
FdReport finite_difference_check(
    const std::function<double(bool)>& loss_fn,
    const std::vector<std::pair<std::string, TensorT<T>*>>& params, double h,
    double abs_floor = 1e-8) {
  check_arg(h > 0.0, "finite_difference_check: h must be positive");
  for (auto& [name, p] : params) check_arg(p->tracked(), "fd check: param '" + name + "' untracked");
  for (auto& [name, p] : params) p->zero_grad();
  const double base = loss_fn(true);
  check_arg(std::isfinite(base), "fd check: non-finite loss");

  std::vector<std::vector<T>> analytic;
  analytic.reserve(params.size());
  for (auto& [name, p] : params)
    analytic.emplace_back(p->grad(), p->grad() + p->numel());

  FdReport report;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    TensorT<T>* p = params[pi].second;
    for (size_t e = 0; e < p->numel(); ++e) {
      const T saved = p->data()[e];
      p->data()[e] = saved + T(h);
      const double lp = loss_fn(false);
      p->data()[e] = saved - T(h);
      const double lm = loss_fn(false);
      p->data()[e] = saved;
      check_arg(std::isfinite(lp) && std::isfinite(lm), "fd check: non-finite loss");
      const double fd = (lp - lm) / (2.0 * h);
      const double a = double(analytic[pi][e]);
      const double denom = std::max({std::fabs(a), std::fabs(fd), abs_floor});
      const double rel = std::fabs(a - fd) / denom;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = params[pi].first;
        report.worst_index = e;
      }
    }
  }
  return report;
}

}  // namespace tsumm
