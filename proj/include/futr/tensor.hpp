#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "futr/common.hpp"

// Dense row-major tensor with reverse-mode autodiff on an explicit tape.
// Rank is 2 for nearly everything (vectors are n x 1, per-feature params
// are 1 x D); reductions produce rank-0 scalars. Ops that see a non-null
// Tape record a backward closure; backward() replays them in exact
// reverse execution order, accumulating into .grad.

namespace futr {

using Shape = std::vector<std::size_t>;

inline std::string shape_to_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

template <typename Real>
struct TensorData {
  Shape shape;
  std::vector<Real> v;
  std::vector<Real> g;  // allocated lazily on first accumulation
  bool needs_grad = false;

  std::size_t size() const { return v.size(); }
  void ensure_grad() {
    if (g.size() != v.size()) g.assign(v.size(), Real(0));
  }
};

template <typename Real>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool needs_grad = false) {
    auto d = std::make_shared<TensorData<Real>>();
    d->shape = std::move(shape);
    d->v.assign(shape_numel(d->shape), Real(0));
    d->needs_grad = needs_grad;
    return Tensor(std::move(d));
  }

  static Tensor constant(Shape shape, Real value, bool needs_grad = false) {
    Tensor t = zeros(std::move(shape), needs_grad);
    std::fill(t.values().begin(), t.values().end(), value);
    return t;
  }

  static Tensor from(Shape shape, std::vector<Real> vals,
                     bool needs_grad = false) {
    if (shape_numel(shape) != vals.size())
      throw ShapeError("tensor init: shape " + shape_to_string(shape) +
                       " does not hold " + std::to_string(vals.size()) +
                       " values");
    auto d = std::make_shared<TensorData<Real>>();
    d->shape = std::move(shape);
    d->v = std::move(vals);
    d->needs_grad = needs_grad;
    return Tensor(std::move(d));
  }

  static Tensor from_rows(const std::vector<std::vector<Real>>& rows,
                          bool needs_grad = false) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows[0].size() : 0;
    std::vector<Real> flat;
    flat.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("from_rows: ragged rows");
      flat.insert(flat.end(), row.begin(), row.end());
    }
    return from({r, c}, std::move(flat), needs_grad);
  }

  static Tensor scalar(Real v, bool needs_grad = false) {
    return from({}, {v}, needs_grad);
  }

  static Tensor identity(std::size_t n) {
    Tensor t = zeros({n, n});
    for (std::size_t i = 0; i < n; ++i) t.at(i, i) = Real(1);
    return t;
  }

  bool defined() const { return static_cast<bool>(d_); }
  const Shape& shape() const { return d_->shape; }
  std::size_t rank() const { return d_->shape.size(); }
  std::size_t size() const { return d_->v.size(); }

  std::size_t rows() const {
    require_rank2("rows()");
    return d_->shape[0];
  }
  std::size_t cols() const {
    require_rank2("cols()");
    return d_->shape[1];
  }

  Real& at(std::size_t i, std::size_t j) {
    return d_->v[i * d_->shape[1] + j];
  }
  Real at(std::size_t i, std::size_t j) const {
    return d_->v[i * d_->shape[1] + j];
  }

  std::vector<Real>& values() { return d_->v; }
  const std::vector<Real>& values() const { return d_->v; }

  bool needs_grad() const { return d_->needs_grad; }
  void set_needs_grad(bool b) { d_->needs_grad = b; }

  void ensure_grad() { d_->ensure_grad(); }
  void zero_grad() {
    if (!d_->g.empty()) std::fill(d_->g.begin(), d_->g.end(), Real(0));
  }
  std::vector<Real>& grad() {
    d_->ensure_grad();
    return d_->g;
  }
  const std::vector<Real>& grad() const {
    d_->ensure_grad();
    return d_->g;
  }

  Real item() const {
    if (d_->v.size() != 1)
      throw ShapeError("item(): tensor " + shape_to_string(d_->shape) +
                       " is not a scalar");
    return d_->v[0];
  }

  bool all_finite() const {
    for (Real x : d_->v)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }

  std::shared_ptr<TensorData<Real>> ptr() const { return d_; }

 private:
  explicit Tensor(std::shared_ptr<TensorData<Real>> d) : d_(std::move(d)) {}
  void require_rank2(const char* what) const {
    if (d_->shape.size() != 2)
      throw ShapeError(std::string(what) + " on tensor " +
                       shape_to_string(d_->shape));
  }
  std::shared_ptr<TensorData<Real>> d_;
};

template <typename Real>
class Tape {
 public:
  void record(std::function<void()> fn) { ops_.push_back(std::move(fn)); }

  std::size_t size() const { return ops_.size(); }

  // Seeds d(loss)/d(loss) = 1 and replays every recorded op in reverse.
  void backward(const Tensor<Real>& loss) {
    if (loss.size() != 1)
      throw ShapeError("backward: loss must be scalar, got " +
                       shape_to_string(loss.shape()));
    loss.ptr()->ensure_grad();
    loss.ptr()->g[0] += Real(1);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  }

  void clear() { ops_.clear(); }

 private:
  std::vector<std::function<void()>> ops_;
};

// Boolean attention mask; rows==1 broadcasts over all query rows.
struct AttentionMask {
  std::size_t rows = 0, cols = 0;
  std::vector<std::uint8_t> allow;

  bool allowed(std::size_t i, std::size_t j) const {
    return allow[(rows == 1 ? 0 : i) * cols + j] != 0;
  }
};

namespace detail {

// C += A(mxk) * B(kxn)
template <typename Real>
void gemm_acc(const Real* a, const Real* b, Real* c, std::size_t m,
              std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const Real* arow = a + i * k;
    Real* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const Real av = arow[p];
      if (av == Real(0)) continue;
      const Real* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C += A(mxk) * B(nxk)^T
template <typename Real>
void gemm_nt_acc(const Real* a, const Real* b, Real* c, std::size_t m,
                 std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const Real* arow = a + i * k;
    Real* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const Real* brow = b + j * k;
      Real acc = Real(0);
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

// C += A(kxm)^T * B(kxn)
template <typename Real>
void gemm_tn_acc(const Real* a, const Real* b, Real* c, std::size_t m,
                 std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const Real* arow = a + p * m;
    const Real* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const Real av = arow[i];
      if (av == Real(0)) continue;
      Real* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename Real>
bool track(Tape<Real>* tape, std::initializer_list<const Tensor<Real>*> ins) {
  if (!tape) return false;
  for (const auto* t : ins)
    if (t->needs_grad()) return true;
  return false;
}

template <typename Real>
void require_same_shape(const Tensor<Real>& a, const Tensor<Real>& b,
                        const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
}

}  // namespace detail

// ---- binary elementwise -------------------------------------------------

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b,
                 Tape<Real>* tape = nullptr) {
  detail::require_same_shape(a, b, "add");
  Tensor<Real> out = Tensor<Real>::zeros(a.shape());
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  if (detail::track(tape, {&a, &b})) {
    out.set_needs_grad(true);
    auto ad = a.ptr(), bd = b.ptr(), od = out.ptr();
    tape->record([ad, bd, od] {
      if (od->g.empty()) return;
      if (ad->needs_grad) {
        ad->ensure_grad();
        for (std::size_t i = 0; i < od->g.size(); ++i) ad->g[i] += od->g[i];
      }
      if (bd->needs_grad) {
        bd->ensure_grad();
        for (std::size_t i = 0; i < od->g.size(); ++i) bd->g[i] += od->g[i];
      }
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b,
                 Tape<Real>* tape = nullptr) {
  detail::require_same_shape(a, b, "sub");
  Tensor<Real> out = Tensor<Real>::zeros(a.shape());
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
  if (detail::track(tape, {&a, &b})) {
    out.set_needs_grad(true);
    auto ad = a.ptr(), bd = b.ptr(), od = out.ptr();
    tape->record([ad, bd, od] {
      if (od->g.empty()) return;
      if (ad->needs_grad) {
        ad->ensure_grad();
        for (std::size_t i = 0; i < od->g.size(); ++i) ad->g[i] += od->g[i];
      }
      if (bd->needs_grad) {
        bd->ensure_grad();
        for (std::size_t i = 0; i < od->g.size(); ++i) bd->g[i] -= od->g[i];
      }
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b,
                 Tape<Real>* tape = nullptr) {
  detail::require_same_shape(a, b, "mul");
  Tensor<Real> out = Tensor<Real>::zeros(a.shape());
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  if (detail::track(tape, {&a, &b})) {
    out.set_needs_grad(true);
    auto ad = a.ptr(), bd = b.ptr(), od = out.ptr();
    tape->record([ad, bd, od] {
      if (od->g.empty()) return;
      if (ad->needs_grad) {
        ad->ensure_grad();
        for (std::size_t i = 0; i < od->g.size(); ++i)
          ad->g[i] += od->g[i] * bd->v[i];
      }
      if (bd->needs_grad) {
        bd->ensure_grad();
        for (std::size_t i = 0; i < od->g.size(); ++i)
          bd->g[i] += od->g[i] * ad->v[i];
      }
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> divide(const Tensor<Real>& a, const Tensor<Real>& b,
                    Tape<Real>* tape = nullptr) {
  detail::require_same_shape(a, b, "divide");
  Tensor<Real> out = Tensor<Real>::zeros(a.shape());
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] / bv[i];
  if (detail::track(tape, {&a, &b})) {
    out.set_needs_grad(true);
    auto ad = a.ptr(), bd = b.ptr(), od = out.ptr();
    tape->record([ad, bd, od] {
      if (od->g.empty()) return;
      if (ad->needs_grad) {
        ad->ensure_grad();
        for (std::size_t i = 0; i < od->g.size(); ++i)
          ad->g[i] += od->g[i] / bd->v[i];
      }
      if (bd->needs_grad) {
        bd->ensure_grad();
        for (std::size_t i = 0; i < od->g.size(); ++i)
          bd->g[i] -= od->g[i] * ad->v[i] / (bd->v[i] * bd->v[i]);
      }
    });
  }
  return out;
}

// broadcast a 1xD row vector over every row of a TxD matrix
template <typename Real>
Tensor<Real> add_rowvec(const Tensor<Real>& x, const Tensor<Real>& b,
                        Tape<Real>* tape = nullptr) {
  if (x.rank() != 2 || b.rank() != 2 || b.rows() != 1 || b.cols() != x.cols())
    throw ShapeError("add_rowvec: " + shape_to_string(x.shape()) + " vs " +
                     shape_to_string(b.shape()));
  Tensor<Real> out = Tensor<Real>::zeros(x.shape());
  const std::size_t r = x.rows(), c = x.cols();
  const auto& xv = x.values();
  const auto& bv = b.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) ov[i * c + j] = xv[i * c + j] + bv[j];
  if (detail::track(tape, {&x, &b})) {
    out.set_needs_grad(true);
    auto xd = x.ptr(), bd = b.ptr(), od = out.ptr();
    tape->record([xd, bd, od, r, c] {
      if (od->g.empty()) return;
      if (xd->needs_grad) {
        xd->ensure_grad();
        for (std::size_t i = 0; i < od->g.size(); ++i) xd->g[i] += od->g[i];
      }
      if (bd->needs_grad) {
        bd->ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) bd->g[j] += od->g[i * c + j];
      }
    });
  }
  return out;
}

// ---- unary elementwise ---------------------------------------------------

namespace detail {

template <typename Real, typename Fwd, typename Bwd>
Tensor<Real> unary_elementwise(const Tensor<Real>& x, Fwd fwd, Bwd bwd,
                               Tape<Real>* tape) {
  Tensor<Real> out = Tensor<Real>::zeros(x.shape());
  const auto& xv = x.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = fwd(xv[i]);
  if (track(tape, {&x})) {
    out.set_needs_grad(true);
    auto xd = x.ptr(), od = out.ptr();
    tape->record([xd, od, bwd] {
      if (od->g.empty()) return;
      xd->ensure_grad();
      for (std::size_t i = 0; i < od->g.size(); ++i)
        xd->g[i] += od->g[i] * bwd(xd->v[i], od->v[i]);
    });
  }
  return out;
}

}  // namespace detail

template <typename Real>
Tensor<Real> relu(const Tensor<Real>& x, Tape<Real>* tape = nullptr) {
  // subgradient at 0 is 0
  return detail::unary_elementwise(
      x, [](Real v) { return v > Real(0) ? v : Real(0); },
      [](Real v, Real) { return v > Real(0) ? Real(1) : Real(0); }, tape);
}

template <typename Real>
Tensor<Real> sigmoid(const Tensor<Real>& x, Tape<Real>* tape = nullptr) {
  return detail::unary_elementwise(
      x, [](Real v) { return Real(1) / (Real(1) + std::exp(-v)); },
      [](Real, Real y) { return y * (Real(1) - y); }, tape);
}

template <typename Real>
Tensor<Real> abs_val(const Tensor<Real>& x, Tape<Real>* tape = nullptr) {
  return detail::unary_elementwise(
      x, [](Real v) { return v < Real(0) ? -v : v; },
      [](Real v, Real) {
        return v > Real(0) ? Real(1) : (v < Real(0) ? Real(-1) : Real(0));
      },
      tape);
}

// huber-style: 0.5 x^2 for |x| < 1, |x| - 0.5 otherwise
template <typename Real>
Tensor<Real> smooth_l1(const Tensor<Real>& x, Tape<Real>* tape = nullptr) {
  return detail::unary_elementwise(
      x,
      [](Real v) {
        const Real a = v < Real(0) ? -v : v;
        return a < Real(1) ? Real(0.5) * v * v : a - Real(0.5);
      },
      [](Real v, Real) {
        if (v > Real(1)) return Real(1);
        if (v < Real(-1)) return Real(-1);
        return v;
      },
      tape);
}

template <typename Real>
Tensor<Real> scale(const Tensor<Real>& x, Real c, Tape<Real>* tape = nullptr) {
  return detail::unary_elementwise(
      x, [c](Real v) { return c * v; }, [c](Real, Real) { return c; }, tape);
}

// Inverted dropout; identity when rate == 0 or no rng is supplied.
template <typename Real>
Tensor<Real> dropout(const Tensor<Real>& x, double rate, Rng* rng,
                     Tape<Real>* tape = nullptr) {
  if (rate == 0.0 || rng == nullptr) return x;
  if (rate < 0.0 || rate >= 1.0)
    throw ConfigError("dropout rate must lie in [0,1)");
  const Real keep_scale = static_cast<Real>(1.0 / (1.0 - rate));
  std::vector<Real> mask(x.size());
  for (auto& m : mask)
    m = rng->uniform() < rate ? Real(0) : keep_scale;
  Tensor<Real> out = Tensor<Real>::zeros(x.shape());
  for (std::size_t i = 0; i < mask.size(); ++i)
    out.values()[i] = x.values()[i] * mask[i];
  if (detail::track(tape, {&x})) {
    out.set_needs_grad(true);
    auto xd = x.ptr(), od = out.ptr();
    tape->record([xd, od, mask = std::move(mask)] {
      if (od->g.empty()) return;
      xd->ensure_grad();
      for (std::size_t i = 0; i < od->g.size(); ++i)
        xd->g[i] += od->g[i] * mask[i];
    });
  }
  return out;
}

// ---- matmul family --------------------------------------------------------

template <typename Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b,
                    Tape<Real>* tape = nullptr) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
    throw ShapeError("matmul: incompatible shapes " +
                     shape_to_string(a.shape()) + " and " +
                     shape_to_string(b.shape()));
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor<Real> out = Tensor<Real>::zeros({m, n});
  detail::gemm_acc(a.values().data(), b.values().data(), out.values().data(),
                   m, k, n);
  if (detail::track(tape, {&a, &b})) {
    out.set_needs_grad(true);
    auto ad = a.ptr(), bd = b.ptr(), od = out.ptr();
    tape->record([ad, bd, od, m, k, n] {
      if (od->g.empty()) return;
      if (ad->needs_grad) {
        ad->ensure_grad();  // dA += dC * B^T
        detail::gemm_nt_acc(od->g.data(), bd->v.data(), ad->g.data(), m, n, k);
      }
      if (bd->needs_grad) {
        bd->ensure_grad();  // dB += A^T * dC
        detail::gemm_tn_acc(ad->v.data(), od->g.data(), bd->g.data(), k, m, n);
      }
    });
  }
  return out;
}

// A (mxk) * B(nxk)^T without materializing the transpose
template <typename Real>
Tensor<Real> matmul_nt(const Tensor<Real>& a, const Tensor<Real>& b,
                       Tape<Real>* tape = nullptr) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols())
    throw ShapeError("matmul_nt: incompatible shapes " +
                     shape_to_string(a.shape()) + " and " +
                     shape_to_string(b.shape()));
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  Tensor<Real> out = Tensor<Real>::zeros({m, n});
  detail::gemm_nt_acc(a.values().data(), b.values().data(),
                      out.values().data(), m, k, n);
  if (detail::track(tape, {&a, &b})) {
    out.set_needs_grad(true);
    auto ad = a.ptr(), bd = b.ptr(), od = out.ptr();
    tape->record([ad, bd, od, m, k, n] {
      if (od->g.empty()) return;
      if (ad->needs_grad) {
        ad->ensure_grad();  // dA += dC * B
        detail::gemm_acc(od->g.data(), bd->v.data(), ad->g.data(), m, n, k);
      }
      if (bd->needs_grad) {
        bd->ensure_grad();  // dB += dC^T * A
        detail::gemm_tn_acc(od->g.data(), ad->v.data(), bd->g.data(), n, m, k);
      }
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> transpose(const Tensor<Real>& x, Tape<Real>* tape = nullptr) {
  if (x.rank() != 2)
    throw ShapeError("transpose on tensor " + shape_to_string(x.shape()));
  const std::size_t r = x.rows(), c = x.cols();
  Tensor<Real> out = Tensor<Real>::zeros({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(j, i) = x.at(i, j);
  if (detail::track(tape, {&x})) {
    out.set_needs_grad(true);
    auto xd = x.ptr(), od = out.ptr();
    tape->record([xd, od, r, c] {
      if (od->g.empty()) return;
      xd->ensure_grad();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j)
          xd->g[i * c + j] += od->g[j * r + i];
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> linear(const Tensor<Real>& x, const Tensor<Real>& w,
                    const Tensor<Real>& b, Tape<Real>* tape = nullptr) {
  return add_rowvec(matmul(x, w, tape), b, tape);
}

// ---- reductions ------------------------------------------------------------

template <typename Real>
Tensor<Real> sum(const Tensor<Real>& x, Tape<Real>* tape = nullptr) {
  Real acc = Real(0);
  for (Real v : x.values()) acc += v;
  Tensor<Real> out = Tensor<Real>::scalar(acc);
  if (detail::track(tape, {&x})) {
    out.set_needs_grad(true);
    auto xd = x.ptr(), od = out.ptr();
    tape->record([xd, od] {
      if (od->g.empty()) return;
      xd->ensure_grad();
      for (auto& g : xd->g) g += od->g[0];
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> mean(const Tensor<Real>& x, Tape<Real>* tape = nullptr) {
  const Real inv = Real(1) / static_cast<Real>(x.size());
  Real acc = Real(0);
  for (Real v : x.values()) acc += v;
  Tensor<Real> out = Tensor<Real>::scalar(acc * inv);
  if (detail::track(tape, {&x})) {
    out.set_needs_grad(true);
    auto xd = x.ptr(), od = out.ptr();
    tape->record([xd, od, inv] {
      if (od->g.empty()) return;
      xd->ensure_grad();
      for (auto& g : xd->g) g += od->g[0] * inv;
    });
  }
  return out;
}

// ---- slicing / concatenation ----------------------------------------------

template <typename Real>
Tensor<Real> slice_rows(const Tensor<Real>& x, std::size_t r0, std::size_t r1,
                        Tape<Real>* tape = nullptr) {
  if (x.rank() != 2 || r0 > r1 || r1 > x.rows())
    throw ShapeError("slice_rows [" + std::to_string(r0) + "," +
                     std::to_string(r1) + ") of " +
                     shape_to_string(x.shape()));
  const std::size_t c = x.cols();
  Tensor<Real> out = Tensor<Real>::zeros({r1 - r0, c});
  std::copy(x.values().begin() + r0 * c, x.values().begin() + r1 * c,
            out.values().begin());
  if (detail::track(tape, {&x})) {
    out.set_needs_grad(true);
    auto xd = x.ptr(), od = out.ptr();
    tape->record([xd, od, r0, c] {
      if (od->g.empty()) return;
      xd->ensure_grad();
      for (std::size_t i = 0; i < od->g.size(); ++i)
        xd->g[r0 * c + i] += od->g[i];
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> slice_cols(const Tensor<Real>& x, std::size_t c0, std::size_t c1,
                        Tape<Real>* tape = nullptr) {
  if (x.rank() != 2 || c0 > c1 || c1 > x.cols())
    throw ShapeError("slice_cols [" + std::to_string(c0) + "," +
                     std::to_string(c1) + ") of " +
                     shape_to_string(x.shape()));
  const std::size_t r = x.rows(), c = x.cols(), w = c1 - c0;
  Tensor<Real> out = Tensor<Real>::zeros({r, w});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < w; ++j) out.at(i, j) = x.at(i, c0 + j);
  if (detail::track(tape, {&x})) {
    out.set_needs_grad(true);
    auto xd = x.ptr(), od = out.ptr();
    tape->record([xd, od, r, c, c0, w] {
      if (od->g.empty()) return;
      xd->ensure_grad();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < w; ++j)
          xd->g[i * c + c0 + j] += od->g[i * w + j];
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> concat_rows(const std::vector<Tensor<Real>>& parts,
                         Tape<Real>* tape = nullptr) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t c = parts[0].cols();
  std::size_t r = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.cols() != c)
      throw ShapeError("concat_rows: column mismatch " +
                       shape_to_string(p.shape()));
    r += p.rows();
  }
  Tensor<Real> out = Tensor<Real>::zeros({r, c});
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.values().begin(), p.values().end(),
              out.values().begin() + off);
    off += p.size();
  }
  bool any = false;
  if (tape)
    for (const auto& p : parts) any = any || p.needs_grad();
  if (any) {
    out.set_needs_grad(true);
    std::vector<std::shared_ptr<TensorData<Real>>> pd;
    pd.reserve(parts.size());
    for (const auto& p : parts) pd.push_back(p.ptr());
    auto od = out.ptr();
    tape->record([pd, od] {
      if (od->g.empty()) return;
      std::size_t off = 0;
      for (auto& p : pd) {
        if (p->needs_grad) {
          p->ensure_grad();
          for (std::size_t i = 0; i < p->v.size(); ++i)
            p->g[i] += od->g[off + i];
        }
        off += p->v.size();
      }
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> concat_cols(const std::vector<Tensor<Real>>& parts,
                         Tape<Real>* tape = nullptr) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t r = parts[0].rows();
  std::size_t c = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.rows() != r)
      throw ShapeError("concat_cols: row mismatch " +
                       shape_to_string(p.shape()));
    c += p.cols();
  }
  Tensor<Real> out = Tensor<Real>::zeros({r, c});
  std::size_t coff = 0;
  for (const auto& p : parts) {
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < p.cols(); ++j)
        out.at(i, coff + j) = p.at(i, j);
    coff += p.cols();
  }
  bool any = false;
  if (tape)
    for (const auto& p : parts) any = any || p.needs_grad();
  if (any) {
    out.set_needs_grad(true);
    std::vector<std::shared_ptr<TensorData<Real>>> pd;
    std::vector<std::size_t> widths;
    for (const auto& p : parts) {
      pd.push_back(p.ptr());
      widths.push_back(p.cols());
    }
    auto od = out.ptr();
    tape->record([pd, widths, od, r, c] {
      if (od->g.empty()) return;
      std::size_t coff = 0;
      for (std::size_t k = 0; k < pd.size(); ++k) {
        auto& p = pd[k];
        const std::size_t w = widths[k];
        if (p->needs_grad) {
          p->ensure_grad();
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < w; ++j)
              p->g[i * w + j] += od->g[i * c + coff + j];
        }
        coff += w;
      }
    });
  }
  return out;
}

// ---- softmax / layer norm ---------------------------------------------------

// Masked positions are excluded before the row-max subtraction, so their
// values can never leak into unmasked outputs (not even through rounding).
template <typename Real>
Tensor<Real> softmax_lastdim(const Tensor<Real>& x,
                             const AttentionMask* mask = nullptr,
                             Tape<Real>* tape = nullptr) {
  if (x.rank() != 2)
    throw ShapeError("softmax_lastdim on tensor " +
                     shape_to_string(x.shape()));
  const std::size_t r = x.rows(), c = x.cols();
  if (mask) {
    if (mask->cols != c || (mask->rows != r && mask->rows != 1))
      throw ShapeError("softmax mask " + std::to_string(mask->rows) + "x" +
                       std::to_string(mask->cols) +
                       " does not broadcast to " + shape_to_string(x.shape()));
  }
  Tensor<Real> out = Tensor<Real>::zeros({r, c});
  for (std::size_t i = 0; i < r; ++i) {
    Real mx = -std::numeric_limits<Real>::infinity();
    for (std::size_t j = 0; j < c; ++j)
      if (!mask || mask->allowed(i, j)) mx = std::max(mx, x.at(i, j));
    if (mx == -std::numeric_limits<Real>::infinity())
      throw DegenerateMaskError("softmax: row " + std::to_string(i) +
                                " has every position masked");
    Real denom = Real(0);
    for (std::size_t j = 0; j < c; ++j) {
      if (!mask || mask->allowed(i, j)) {
        const Real e = std::exp(x.at(i, j) - mx);
        out.at(i, j) = e;
        denom += e;
      }
    }
    const Real inv = Real(1) / denom;
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) *= inv;
  }
  if (detail::track(tape, {&x})) {
    out.set_needs_grad(true);
    auto xd = x.ptr(), od = out.ptr();
    tape->record([xd, od, r, c] {
      if (od->g.empty()) return;
      xd->ensure_grad();
      for (std::size_t i = 0; i < r; ++i) {
        Real dot = Real(0);
        for (std::size_t j = 0; j < c; ++j)
          dot += od->g[i * c + j] * od->v[i * c + j];
        for (std::size_t j = 0; j < c; ++j)
          xd->g[i * c + j] +=
              od->v[i * c + j] * (od->g[i * c + j] - dot);
      }
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> layer_norm(const Tensor<Real>& x, const Tensor<Real>& gain,
                        const Tensor<Real>& bias, Real eps,
                        Tape<Real>* tape = nullptr) {
  if (x.rank() != 2 || gain.rank() != 2 || bias.rank() != 2 ||
      gain.rows() != 1 || bias.rows() != 1 || gain.cols() != x.cols() ||
      bias.cols() != x.cols())
    throw ShapeError("layer_norm: x " + shape_to_string(x.shape()) +
                     ", gain " + shape_to_string(gain.shape()) + ", bias " +
                     shape_to_string(bias.shape()));
  const std::size_t r = x.rows(), c = x.cols();
  Tensor<Real> out = Tensor<Real>::zeros({r, c});
  std::vector<Real> xhat(r * c);
  std::vector<Real> inv_std(r);
  const Real invc = Real(1) / static_cast<Real>(c);
  for (std::size_t i = 0; i < r; ++i) {
    Real mu = Real(0);
    for (std::size_t j = 0; j < c; ++j) mu += x.at(i, j);
    mu *= invc;
    Real var = Real(0);
    for (std::size_t j = 0; j < c; ++j) {
      const Real d = x.at(i, j) - mu;
      var += d * d;
    }
    var *= invc;
    const Real is = Real(1) / std::sqrt(var + eps);
    inv_std[i] = is;
    for (std::size_t j = 0; j < c; ++j) {
      const Real h = (x.at(i, j) - mu) * is;
      xhat[i * c + j] = h;
      out.at(i, j) = gain.at(0, j) * h + bias.at(0, j);
    }
  }
  if (detail::track(tape, {&x, &gain, &bias})) {
    out.set_needs_grad(true);
    auto xd = x.ptr(), gd = gain.ptr(), bd = bias.ptr(), od = out.ptr();
    tape->record([xd, gd, bd, od, xhat = std::move(xhat),
                  inv_std = std::move(inv_std), r, c, invc] {
      if (od->g.empty()) return;
      for (std::size_t i = 0; i < r; ++i) {
        if (gd->needs_grad) {
          gd->ensure_grad();
          for (std::size_t j = 0; j < c; ++j)
            gd->g[j] += od->g[i * c + j] * xhat[i * c + j];
        }
        if (bd->needs_grad) {
          bd->ensure_grad();
          for (std::size_t j = 0; j < c; ++j) bd->g[j] += od->g[i * c + j];
        }
        if (xd->needs_grad) {
          xd->ensure_grad();
          // dxhat = g * gain; dx = inv_std * (dxhat - mean(dxhat)
          //                                   - xhat * mean(dxhat .* xhat))
          Real mean_dh = Real(0), mean_dhh = Real(0);
          for (std::size_t j = 0; j < c; ++j) {
            const Real dh = od->g[i * c + j] * gd->v[j];
            mean_dh += dh;
            mean_dhh += dh * xhat[i * c + j];
          }
          mean_dh *= invc;
          mean_dhh *= invc;
          for (std::size_t j = 0; j < c; ++j) {
            const Real dh = od->g[i * c + j] * gd->v[j];
            xd->g[i * c + j] +=
                inv_std[i] * (dh - mean_dh - xhat[i * c + j] * mean_dhh);
          }
        }
      }
    });
  }
  return out;
}

// ---- lookup / likelihood ----------------------------------------------------

// rows of `table` gathered by index; gradients scatter-add back
template <typename Real>
Tensor<Real> embed_rows(const Tensor<Real>& table,
                        const std::vector<int>& idx,
                        Tape<Real>* tape = nullptr) {
  if (table.rank() != 2) throw ShapeError("embed_rows: table must be rank 2");
  const std::size_t c = table.cols();
  Tensor<Real> out = Tensor<Real>::zeros({idx.size(), c});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= table.rows())
      throw ShapeError("embed_rows: index " + std::to_string(idx[i]) +
                       " out of range for table " +
                       shape_to_string(table.shape()));
    for (std::size_t j = 0; j < c; ++j)
      out.at(i, j) = table.at(static_cast<std::size_t>(idx[i]), j);
  }
  if (detail::track(tape, {&table})) {
    out.set_needs_grad(true);
    auto td = table.ptr(), od = out.ptr();
    tape->record([td, od, idx, c] {
      if (od->g.empty()) return;
      td->ensure_grad();
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < c; ++j)
          td->g[static_cast<std::size_t>(idx[i]) * c + j] +=
              od->g[i * c + j];
    });
  }
  return out;
}

// -sum_i log(probs[i, targets[i]]) on an already-normalized matrix
template <typename Real>
Tensor<Real> nll_sum(const Tensor<Real>& probs, const std::vector<int>& targets,
                     Tape<Real>* tape = nullptr) {
  if (probs.rank() != 2 || targets.size() != probs.rows())
    throw ShapeError("nll_sum: probs " + shape_to_string(probs.shape()) +
                     " vs " + std::to_string(targets.size()) + " targets");
  const std::size_t c = probs.cols();
  constexpr Real tiny = sizeof(Real) == 8 ? Real(1e-300) : Real(1e-35);
  Real acc = Real(0);
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= c)
      throw ShapeError("nll_sum: target " + std::to_string(targets[i]) +
                       " out of range [0," + std::to_string(c) + ")");
    acc -= std::log(std::max(probs.at(i, static_cast<std::size_t>(targets[i])),
                             tiny));
  }
  Tensor<Real> out = Tensor<Real>::scalar(acc);
  if (detail::track(tape, {&probs})) {
    out.set_needs_grad(true);
    auto pd = probs.ptr(), od = out.ptr();
    tape->record([pd, od, targets, c] {
      if (od->g.empty()) return;
      constexpr Real floor = sizeof(Real) == 8 ? Real(1e-300) : Real(1e-35);
      pd->ensure_grad();
      for (std::size_t i = 0; i < targets.size(); ++i) {
        const std::size_t k = i * c + static_cast<std::size_t>(targets[i]);
        pd->g[k] -= od->g[0] / std::max(pd->v[k], floor);
      }
    });
  }
  return out;
}

}  // namespace futr
