#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "tsumm/rng.hpp"

namespace tsumm {

inline void check_arg(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

inline void check_state(bool cond, const std::string& msg) {
  if (!cond) throw std::runtime_error(msg);
}

// Boolean query-by-key attention mask. Every query row must keep at least
// one allowed key; ops validate this before use.
struct AttentionMask {
  int rows = 0;
  int cols = 0;
  std::vector<uint8_t> allowed;

  static AttentionMask full(int r, int c) {
    AttentionMask m;
    m.rows = r;
    m.cols = c;
    m.allowed.assign(size_t(r) * c, 1);
    return m;
  }

  // Band mask for windowed self-attention: key j allowed for query i iff
  // |i - j| <= (window - 1) / 2. The window is a diameter and must be odd.
  static AttentionMask band(int n, int window) {
    check_arg(window >= 1 && window % 2 == 1, "band mask: window must be odd and positive");
    AttentionMask m;
    m.rows = n;
    m.cols = n;
    m.allowed.assign(size_t(n) * n, 0);
    const int radius = (window - 1) / 2;
    for (int i = 0; i < n; ++i) {
      int lo = i - radius < 0 ? 0 : i - radius;
      int hi = i + radius >= n ? n - 1 : i + radius;
      for (int j = lo; j <= hi; ++j) m.allowed[size_t(i) * n + j] = 1;
    }
    return m;
  }

  bool at(int i, int j) const { return allowed[size_t(i) * cols + j] != 0; }

  void validate() const {
    check_arg(size_t(rows) * cols == allowed.size(), "mask: extent mismatch");
    for (int i = 0; i < rows; ++i) {
      bool any = false;
      for (int j = 0; j < cols; ++j) any = any || at(i, j);
      check_arg(any, "mask: query row " + std::to_string(i) + " has no allowed key");
    }
  }
};

template <typename T>
class Graph;

// Dense row-major tensor. Copies share the underlying buffers (handle
// semantics). A tensor with a grad buffer participates in reverse-mode
// differentiation; op outputs are bound to the graph that produced them.
template <typename T>
class TensorT {
 public:
  TensorT() = default;

  static TensorT zeros(std::vector<int> shape, bool requires_grad = false) {
    TensorT t;
    t.shape_ = std::move(shape);
    t.data_ = std::make_shared<std::vector<T>>(count(t.shape_), T(0));
    if (requires_grad) t.grad_ = std::make_shared<std::vector<T>>(count(t.shape_), T(0));
    return t;
  }

  static TensorT from(std::vector<int> shape, std::vector<T> values, bool requires_grad = false) {
    check_arg(count(shape) == values.size(), "tensor: shape does not match value count");
    TensorT t;
    t.shape_ = std::move(shape);
    t.data_ = std::make_shared<std::vector<T>>(std::move(values));
    if (requires_grad) t.grad_ = std::make_shared<std::vector<T>>(t.data_->size(), T(0));
    return t;
  }

  template <typename U>
  static TensorT from_other(const TensorT<U>& src, bool requires_grad = false) {
    TensorT t;
    t.shape_ = src.shape();
    t.data_ = std::make_shared<std::vector<T>>(src.numel());
    for (size_t i = 0; i < src.numel(); ++i) (*t.data_)[i] = T(src.data()[i]);
    if (requires_grad) t.grad_ = std::make_shared<std::vector<T>>(t.data_->size(), T(0));
    return t;
  }

  bool defined() const { return data_ != nullptr; }
  const std::vector<int>& shape() const { return shape_; }
  size_t numel() const { return data_ ? data_->size() : 0; }
  int rank() const { return int(shape_.size()); }
  int rows() const { return rank() >= 1 ? shape_[0] : 1; }
  int cols() const { return rank() >= 2 ? shape_[1] : 1; }

  T* data() { return data_->data(); }
  const T* data() const { return data_->data(); }
  T* grad() { return grad_ ? grad_->data() : nullptr; }
  const T* grad() const { return grad_ ? grad_->data() : nullptr; }
  bool tracked() const { return grad_ != nullptr; }

  void zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), T(0));
  }

  T at(int i) const { return (*data_)[size_t(i)]; }
  T at(int i, int j) const { return (*data_)[size_t(i) * cols() + j]; }

  const Graph<T>* graph() const { return graph_; }
  int node_id() const { return node_; }

  static size_t count(const std::vector<int>& shape) {
    size_t n = 1;
    for (int e : shape) {
      check_arg(e >= 0, "tensor: negative extent");
      n *= size_t(e);
    }
    return n;
  }

 private:
  friend class Graph<T>;

  std::vector<int> shape_;
  std::shared_ptr<std::vector<T>> data_;
  std::shared_ptr<std::vector<T>> grad_;
  const Graph<T>* graph_ = nullptr;
  int node_ = -1;
};

using Tensor = TensorT<float>;

namespace detail {

// c[m x n] (+)= a[m x k] . b[k x n]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    T* __restrict crow = c + size_t(i) * n;
    if (!accumulate)
      for (int j = 0; j < n; ++j) crow[j] = T(0);
    const T* arow = a + size_t(i) * k;
    for (int kk = 0; kk < k; ++kk) {
      const T aik = arow[kk];
      if (aik == T(0)) continue;
      const T* __restrict brow = b + size_t(kk) * n;
      for (int j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
}

// c[m x n] (+)= a[m x k] . b[n x k]^T. Transposes b into a scratch row-major
// [k x n] so the k-inner product runs through the vectorized nn kernel.
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate) {
  std::vector<T> bt(size_t(k) * size_t(n));
  for (int j = 0; j < n; ++j)
    for (int kk = 0; kk < k; ++kk) bt[size_t(kk) * n + j] = b[size_t(j) * k + kk];
  gemm_nn(a, bt.data(), c, m, k, n, accumulate);
}

// c[m x n] (+)= a[k x m]^T . b[k x n]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate) {
  if (!accumulate)
    for (size_t i = 0; i < size_t(m) * n; ++i) c[i] = T(0);
  for (int kk = 0; kk < k; ++kk) {
    const T* arow = a + size_t(kk) * m;
    const T* __restrict brow = b + size_t(kk) * n;
    for (int i = 0; i < m; ++i) {
      const T aik = arow[i];
      if (aik == T(0)) continue;
      T* __restrict crow = c + size_t(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
}

}  // namespace detail

enum class Act { kGelu, kSilu, kSigmoid };

// Define-by-run computation tape. Ops run their forward pass immediately and,
// when any input carries a grad buffer, append one backward closure. The tape
// is single-use: backward() consumes it.
template <typename T>
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  size_t size() const { return tape_.size(); }

  TensorT<T> input(std::vector<int> shape, std::vector<T> values) const {
    return TensorT<T>::from(std::move(shape), std::move(values));
  }

  // ---- elementwise ----

  TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    return binary_elementwise(a, b, [](T x, T y) { return x + y; }, T(1), T(1));
  }

  TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    return binary_elementwise(a, b, [](T x, T y) { return x - y; }, T(1), T(-1));
  }

  TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    use(a);
    use(b);
    check_arg(a.shape() == b.shape(), "mul: shape mismatch");
    TensorT<T> out = fresh(a.shape(), a.tracked() || b.tracked());
    const size_t n = a.numel();
    for (size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
    if (out.tracked()) {
      record(out, [a, b, out]() {
        const T* g = out.grad();
        const size_t n = out.numel();
        if (a.tracked()) {
          T* ga = const_cast<T*>(a.grad());
          for (size_t i = 0; i < n; ++i) ga[i] += g[i] * b.data()[i];
        }
        if (b.tracked()) {
          T* gb = const_cast<T*>(b.grad());
          for (size_t i = 0; i < n; ++i) gb[i] += g[i] * a.data()[i];
        }
      });
    }
    return out;
  }

  TensorT<T> scale(const TensorT<T>& a, double c) {
    use(a);
    TensorT<T> out = fresh(a.shape(), a.tracked());
    const T cc = T(c);
    for (size_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] * cc;
    if (out.tracked()) {
      record(out, [a, out, cc]() {
        T* ga = const_cast<T*>(a.grad());
        const T* g = out.grad();
        for (size_t i = 0; i < out.numel(); ++i) ga[i] += g[i] * cc;
      });
    }
    return out;
  }

  // x[r x c] + bias[c], broadcast over rows.
  TensorT<T> add_bias(const TensorT<T>& x, const TensorT<T>& b) {
    use(x);
    use(b);
    check_arg(x.rank() == 2 && b.rank() == 1 && x.cols() == b.rows(),
              "add_bias: expected [r x c] plus [c]");
    TensorT<T> out = fresh(x.shape(), x.tracked() || b.tracked());
    const int r = x.rows(), c = x.cols();
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j)
        out.data()[size_t(i) * c + j] = x.data()[size_t(i) * c + j] + b.data()[j];
    if (out.tracked()) {
      record(out, [x, b, out]() {
        const int r = x.rows(), c = x.cols();
        const T* g = out.grad();
        if (x.tracked()) {
          T* gx = const_cast<T*>(x.grad());
          for (size_t i = 0; i < size_t(r) * c; ++i) gx[i] += g[i];
        }
        if (b.tracked()) {
          T* gb = const_cast<T*>(b.grad());
          for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) gb[j] += g[size_t(i) * c + j];
        }
      });
    }
    return out;
  }

  TensorT<T> activation(const TensorT<T>& x, Act kind) {
    use(x);
    TensorT<T> out = fresh(x.shape(), x.tracked());
    const size_t n = x.numel();
    for (size_t i = 0; i < n; ++i) out.data()[i] = act_forward(x.data()[i], kind);
    if (out.tracked()) {
      record(out, [x, out, kind]() {
        T* gx = const_cast<T*>(x.grad());
        const T* g = out.grad();
        for (size_t i = 0; i < out.numel(); ++i) gx[i] += g[i] * act_derivative(x.data()[i], kind);
      });
    }
    return out;
  }

  // ---- matrix products ----

  TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    use(a);
    use(b);
    check_arg(a.rank() == 2 && b.rank() == 2, "matmul: operands must be rank 2");
    check_arg(a.cols() == b.rows(), "matmul: inner extents differ (" + std::to_string(a.cols()) +
                                        " vs " + std::to_string(b.rows()) + ")");
    const int m = a.rows(), k = a.cols(), n = b.cols();
    TensorT<T> out = fresh({m, n}, a.tracked() || b.tracked());
    detail::gemm_nn(a.data(), b.data(), out.data(), m, k, n, false);
    if (out.tracked()) {
      record(out, [a, b, out, m, k, n]() {
        if (a.tracked())
          detail::gemm_nt(out.grad(), b.data(), const_cast<T*>(a.grad()), m, n, k, true);
        if (b.tracked())
          detail::gemm_tn(a.data(), out.grad(), const_cast<T*>(b.grad()), k, m, n, true);
      });
    }
    return out;
  }

  // a[m x k] . b[n x k]^T
  TensorT<T> matmul_nt(const TensorT<T>& a, const TensorT<T>& b) {
    use(a);
    use(b);
    check_arg(a.rank() == 2 && b.rank() == 2 && a.cols() == b.cols(),
              "matmul_nt: trailing extents differ");
    const int m = a.rows(), k = a.cols(), n = b.rows();
    TensorT<T> out = fresh({m, n}, a.tracked() || b.tracked());
    detail::gemm_nt(a.data(), b.data(), out.data(), m, k, n, false);
    if (out.tracked()) {
      record(out, [a, b, out, m, k, n]() {
        if (a.tracked())
          detail::gemm_nn(out.grad(), b.data(), const_cast<T*>(a.grad()), m, n, k, true);
        if (b.tracked())
          detail::gemm_tn(out.grad(), a.data(), const_cast<T*>(b.grad()), n, m, k, true);
      });
    }
    return out;
  }

  // ---- shape ----

  TensorT<T> slice_cols(const TensorT<T>& x, int c0, int count) {
    use(x);
    check_arg(x.rank() == 2 && c0 >= 0 && count > 0 && c0 + count <= x.cols(),
              "slice_cols: range out of bounds");
    const int r = x.rows(), c = x.cols();
    TensorT<T> out = fresh({r, count}, x.tracked());
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < count; ++j)
        out.data()[size_t(i) * count + j] = x.data()[size_t(i) * c + c0 + j];
    if (out.tracked()) {
      record(out, [x, out, c0, count]() {
        T* gx = const_cast<T*>(x.grad());
        const T* g = out.grad();
        const int r = x.rows(), c = x.cols();
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < count; ++j) gx[size_t(i) * c + c0 + j] += g[size_t(i) * count + j];
      });
    }
    return out;
  }

  TensorT<T> concat_cols(const std::vector<TensorT<T>>& parts) {
    check_arg(!parts.empty(), "concat_cols: no parts");
    int r = parts[0].rows(), total = 0;
    bool tracked = false;
    for (const auto& p : parts) {
      use(p);
      check_arg(p.rank() == 2 && p.rows() == r, "concat_cols: row extents differ");
      total += p.cols();
      tracked = tracked || p.tracked();
    }
    TensorT<T> out = fresh({r, total}, tracked);
    int off = 0;
    for (const auto& p : parts) {
      const int c = p.cols();
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out.data()[size_t(i) * total + off + j] = p.at(i, j);
      off += c;
    }
    if (out.tracked()) {
      auto parts_copy = parts;
      record(out, [parts_copy, out, r, total]() {
        const T* g = out.grad();
        int off = 0;
        for (const auto& p : parts_copy) {
          const int c = p.cols();
          if (p.tracked()) {
            T* gp = const_cast<T*>(p.grad());
            for (int i = 0; i < r; ++i)
              for (int j = 0; j < c; ++j) gp[size_t(i) * c + j] += g[size_t(i) * total + off + j];
          }
          off += c;
        }
      });
    }
    return out;
  }

  // Row-wise blend: out_i = keep[i] ? x_i : fill. Used to substitute a
  // learnable default token for missing-modality frames.
  TensorT<T> row_blend(const TensorT<T>& x, const std::vector<uint8_t>& keep,
                       const TensorT<T>& fill) {
    use(x);
    use(fill);
    check_arg(x.rank() == 2 && int(keep.size()) == x.rows(), "row_blend: keep size mismatch");
    check_arg(fill.rank() == 1 && fill.rows() == x.cols(), "row_blend: fill dim mismatch");
    const int r = x.rows(), c = x.cols();
    TensorT<T> out = fresh(x.shape(), x.tracked() || fill.tracked());
    for (int i = 0; i < r; ++i) {
      const T* src = keep[i] ? x.data() + size_t(i) * c : fill.data();
      for (int j = 0; j < c; ++j) out.data()[size_t(i) * c + j] = src[j];
    }
    if (out.tracked()) {
      auto keep_copy = keep;
      record(out, [x, fill, out, keep_copy]() {
        const int r = x.rows(), c = x.cols();
        const T* g = out.grad();
        for (int i = 0; i < r; ++i) {
          if (keep_copy[i]) {
            if (x.tracked()) {
              T* gx = const_cast<T*>(x.grad());
              for (int j = 0; j < c; ++j) gx[size_t(i) * c + j] += g[size_t(i) * c + j];
            }
          } else if (fill.tracked()) {
            T* gf = const_cast<T*>(fill.grad());
            for (int j = 0; j < c; ++j) gf[j] += g[size_t(i) * c + j];
          }
        }
      });
    }
    return out;
  }

  // ---- reductions / rows ----

  TensorT<T> sum_all(const TensorT<T>& x) {
    use(x);
    TensorT<T> out = fresh({1}, x.tracked());
    T acc = T(0);
    for (size_t i = 0; i < x.numel(); ++i) acc += x.data()[i];
    out.data()[0] = acc;
    if (out.tracked()) {
      record(out, [x, out]() {
        T* gx = const_cast<T*>(x.grad());
        const T g = out.grad()[0];
        for (size_t i = 0; i < x.numel(); ++i) gx[i] += g;
      });
    }
    return out;
  }

  // Per-row dot product: out[i] = a_i . b_i, shape [n x 1].
  TensorT<T> rowwise_dot(const TensorT<T>& a, const TensorT<T>& b) {
    use(a);
    use(b);
    check_arg(a.shape() == b.shape() && a.rank() == 2, "rowwise_dot: shape mismatch");
    const int r = a.rows(), c = a.cols();
    TensorT<T> out = fresh({r, 1}, a.tracked() || b.tracked());
    for (int i = 0; i < r; ++i) {
      T acc = T(0);
      for (int j = 0; j < c; ++j) acc += a.at(i, j) * b.at(i, j);
      out.data()[i] = acc;
    }
    if (out.tracked()) {
      record(out, [a, b, out]() {
        const int r = a.rows(), c = a.cols();
        const T* g = out.grad();
        for (int i = 0; i < r; ++i) {
          if (a.tracked()) {
            T* ga = const_cast<T*>(a.grad());
            for (int j = 0; j < c; ++j) ga[size_t(i) * c + j] += g[i] * b.at(i, j);
          }
          if (b.tracked()) {
            T* gb = const_cast<T*>(b.grad());
            for (int j = 0; j < c; ++j) gb[size_t(i) * c + j] += g[i] * a.at(i, j);
          }
        }
      });
    }
    return out;
  }

  // out_i = sum_m w[i, m] * parts[m]_i. Per-frame convex mixing of token rows.
  TensorT<T> weighted_mix(const TensorT<T>& w, const std::vector<TensorT<T>>& parts) {
    use(w);
    check_arg(w.rank() == 2 && w.cols() == int(parts.size()), "weighted_mix: weight cols != parts");
    const int r = w.rows();
    const int c = parts[0].cols();
    bool tracked = w.tracked();
    for (const auto& p : parts) {
      use(p);
      check_arg(p.rank() == 2 && p.rows() == r && p.cols() == c, "weighted_mix: part shape mismatch");
      tracked = tracked || p.tracked();
    }
    const int m = int(parts.size());
    TensorT<T> out = fresh({r, c}, tracked);
    for (int i = 0; i < r; ++i) {
      T* orow = out.data() + size_t(i) * c;
      for (int j = 0; j < c; ++j) orow[j] = T(0);
      for (int mm = 0; mm < m; ++mm) {
        const T wi = w.at(i, mm);
        const T* prow = parts[mm].data() + size_t(i) * c;
        for (int j = 0; j < c; ++j) orow[j] += wi * prow[j];
      }
    }
    if (out.tracked()) {
      auto parts_copy = parts;
      record(out, [w, parts_copy, out, r, c, m]() {
        const T* g = out.grad();
        for (int i = 0; i < r; ++i) {
          const T* grow = g + size_t(i) * c;
          for (int mm = 0; mm < m; ++mm) {
            const T* prow = parts_copy[mm].data() + size_t(i) * c;
            if (parts_copy[mm].tracked()) {
              T* gp = const_cast<T*>(parts_copy[mm].grad()) + size_t(i) * c;
              const T wi = w.at(i, mm);
              for (int j = 0; j < c; ++j) gp[j] += wi * grow[j];
            }
            if (w.tracked()) {
              T acc = T(0);
              for (int j = 0; j < c; ++j) acc += grow[j] * prow[j];
              const_cast<T*>(w.grad())[size_t(i) * m + mm] += acc;
            }
          }
        }
      });
    }
    return out;
  }

  // ---- normalization / softmax ----

  TensorT<T> softmax_rows(const TensorT<T>& x) { return softmax_impl(x, nullptr); }

  TensorT<T> masked_softmax_rows(const TensorT<T>& x, const AttentionMask& mask) {
    check_arg(mask.rows == x.rows() && mask.cols == x.cols(), "masked softmax: mask shape mismatch");
    mask.validate();
    return softmax_impl(x, &mask);
  }

  TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gain, const TensorT<T>& bias,
                        double eps) {
    use(x);
    use(gain);
    use(bias);
    check_arg(x.rank() >= 1, "layer_norm: rank must be >= 1");
    const int d = x.shape().back();
    check_arg(gain.rank() == 1 && gain.rows() == d, "layer_norm: gain extent != last axis");
    check_arg(bias.rank() == 1 && bias.rows() == d, "layer_norm: bias extent != last axis");
    const int r = int(x.numel()) / d;
    TensorT<T> out = fresh(x.shape(), x.tracked() || gain.tracked() || bias.tracked());
    auto stats = std::make_shared<std::vector<T>>(size_t(r) * 2);  // mean, inv_std per row
    for (int i = 0; i < r; ++i) {
      const T* row = x.data() + size_t(i) * d;
      T mean = T(0);
      for (int j = 0; j < d; ++j) mean += row[j];
      mean /= T(d);
      T var = T(0);
      for (int j = 0; j < d; ++j) {
        const T dv = row[j] - mean;
        var += dv * dv;
      }
      var /= T(d);
      const T inv_std = T(1) / std::sqrt(var + T(eps));
      (*stats)[size_t(i) * 2] = mean;
      (*stats)[size_t(i) * 2 + 1] = inv_std;
      T* orow = out.data() + size_t(i) * d;
      for (int j = 0; j < d; ++j)
        orow[j] = (row[j] - mean) * inv_std * gain.data()[j] + bias.data()[j];
    }
    if (out.tracked()) {
      record(out, [x, gain, bias, out, stats, r, d]() {
        const T* g = out.grad();
        for (int i = 0; i < r; ++i) {
          const T mean = (*stats)[size_t(i) * 2];
          const T inv_std = (*stats)[size_t(i) * 2 + 1];
          const T* row = x.data() + size_t(i) * d;
          const T* grow = g + size_t(i) * d;
          T sum_dy = T(0), sum_dy_xhat = T(0);
          for (int j = 0; j < d; ++j) {
            const T xhat = (row[j] - mean) * inv_std;
            const T dyg = grow[j] * gain.data()[j];
            sum_dy += dyg;
            sum_dy_xhat += dyg * xhat;
            if (gain.tracked()) const_cast<T*>(gain.grad())[j] += grow[j] * xhat;
            if (bias.tracked()) const_cast<T*>(bias.grad())[j] += grow[j];
          }
          if (x.tracked()) {
            T* gx = const_cast<T*>(x.grad()) + size_t(i) * d;
            for (int j = 0; j < d; ++j) {
              const T xhat = (row[j] - mean) * inv_std;
              const T dyg = grow[j] * gain.data()[j];
              gx[j] += inv_std * (dyg - sum_dy / T(d) - xhat * sum_dy_xhat / T(d));
            }
          }
        }
      });
    }
    return out;
  }

  // Inverted dropout; scales kept entries by 1/(1-rate). Caller only invokes
  // this in training mode.
  TensorT<T> dropout(const TensorT<T>& x, double rate, Rng& rng) {
    use(x);
    check_arg(rate >= 0.0 && rate < 1.0, "dropout: rate must be in [0, 1)");
    if (rate == 0.0) return x;
    const T keep_scale = T(1.0 / (1.0 - rate));
    auto mask = std::make_shared<std::vector<uint8_t>>(x.numel());
    TensorT<T> out = fresh(x.shape(), x.tracked());
    for (size_t i = 0; i < x.numel(); ++i) {
      const bool keep = rng.uniform() >= rate;
      (*mask)[i] = keep;
      out.data()[i] = keep ? x.data()[i] * keep_scale : T(0);
    }
    if (out.tracked()) {
      record(out, [x, out, mask, keep_scale]() {
        T* gx = const_cast<T*>(x.grad());
        const T* g = out.grad();
        for (size_t i = 0; i < out.numel(); ++i)
          if ((*mask)[i]) gx[i] += g[i] * keep_scale;
      });
    }
    return out;
  }

  // ---- reverse pass ----

  // Fills grad buffers of every tracked tensor reachable from `loss` with
  // d loss / d tensor, accumulating additively over fan-out. Single use.
  void backward(const TensorT<T>& loss) {
    check_arg(loss.numel() == 1, "backward: loss must be scalar");
    check_arg(loss.tracked() && loss.graph_ == this, "backward: loss is not a node of this graph");
    check_state(!consumed_, "backward: graph already consumed");
    consumed_ = true;
    const_cast<T*>(loss.grad())[0] = T(1);
    for (int i = loss.node_; i >= 0; --i) tape_[size_t(i)]();
  }

  bool consumed() const { return consumed_; }

 private:
  TensorT<T> fresh(std::vector<int> shape, bool tracked) const {
    return TensorT<T>::zeros(std::move(shape), tracked);
  }

  void use(const TensorT<T>& t) const {
    check_arg(t.defined(), "op input is undefined");
    if (t.graph_ != nullptr)
      check_arg(t.graph_ == this, "op input belongs to a different computation graph");
  }

  void record(TensorT<T>& out, std::function<void()> back) {
    check_state(!consumed_, "op on a consumed graph");
    out.graph_ = this;
    out.node_ = int(tape_.size());
    tape_.push_back(std::move(back));
  }

  template <typename F>
  TensorT<T> binary_elementwise(const TensorT<T>& a, const TensorT<T>& b, F f, T da, T db) {
    use(a);
    use(b);
    check_arg(a.shape() == b.shape(), "elementwise op: shape mismatch");
    TensorT<T> out = fresh(a.shape(), a.tracked() || b.tracked());
    for (size_t i = 0; i < a.numel(); ++i) out.data()[i] = f(a.data()[i], b.data()[i]);
    if (out.tracked()) {
      record(out, [a, b, out, da, db]() {
        const T* g = out.grad();
        if (a.tracked()) {
          T* ga = const_cast<T*>(a.grad());
          for (size_t i = 0; i < out.numel(); ++i) ga[i] += g[i] * da;
        }
        if (b.tracked()) {
          T* gb = const_cast<T*>(b.grad());
          for (size_t i = 0; i < out.numel(); ++i) gb[i] += g[i] * db;
        }
      });
    }
    return out;
  }

  TensorT<T> softmax_impl(const TensorT<T>& x, const AttentionMask* mask) {
    use(x);
    check_arg(x.rank() == 2, "softmax: rank must be 2");
    const int r = x.rows(), c = x.cols();
    TensorT<T> out = fresh(x.shape(), x.tracked());
    for (int i = 0; i < r; ++i) {
      const T* row = x.data() + size_t(i) * c;
      T* orow = out.data() + size_t(i) * c;
      T mx = -std::numeric_limits<T>::infinity();
      for (int j = 0; j < c; ++j) {
        if (mask && !mask->at(i, j)) continue;
        check_arg(!std::isnan(double(row[j])), "softmax: NaN input");
        if (row[j] > mx) mx = row[j];
      }
      T sum = T(0);
      for (int j = 0; j < c; ++j) {
        if (mask && !mask->at(i, j)) {
          orow[j] = T(0);
          continue;
        }
        orow[j] = std::exp(row[j] - mx);
        sum += orow[j];
      }
      for (int j = 0; j < c; ++j) orow[j] /= sum;
    }
    if (out.tracked()) {
      record(out, [x, out, r, c]() {
        T* gx = const_cast<T*>(x.grad());
        const T* g = out.grad();
        for (int i = 0; i < r; ++i) {
          const T* w = out.data() + size_t(i) * c;
          const T* grow = g + size_t(i) * c;
          T dot = T(0);
          for (int j = 0; j < c; ++j) dot += grow[j] * w[j];
          for (int j = 0; j < c; ++j) gx[size_t(i) * c + j] += w[j] * (grow[j] - dot);
        }
      });
    }
    return out;
  }

  static T act_forward(T v, Act kind) {
    switch (kind) {
      case Act::kGelu:
        return T(0.5) * v * (T(1) + std::erf(v * T(0.7071067811865475244)));
      case Act::kSilu:
        return v / (T(1) + std::exp(-v));
      case Act::kSigmoid:
      default:
        return T(1) / (T(1) + std::exp(-v));
    }
  }

  static T act_derivative(T v, Act kind) {
    switch (kind) {
      case Act::kGelu: {
        const T cdf = T(0.5) * (T(1) + std::erf(v * T(0.7071067811865475244)));
        const T pdf = std::exp(T(-0.5) * v * v) * T(0.3989422804014326779);
        return cdf + v * pdf;
      }
      case Act::kSilu: {
        const T s = T(1) / (T(1) + std::exp(-v));
        return s * (T(1) + v * (T(1) - s));
      }
      case Act::kSigmoid:
      default: {
        const T s = T(1) / (T(1) + std::exp(-v));
        return s * (T(1) - s);
      }
    }
  }

  std::vector<std::function<void()>> tape_;
  bool consumed_ = false;
};

}  // namespace tsumm
