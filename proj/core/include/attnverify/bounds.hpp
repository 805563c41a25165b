#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <vector>

#include "attnverify/autodiff.hpp"
#include "attnverify/errors.hpp"
#include "attnverify/relaxations.hpp"
#include "attnverify/types.hpp"

namespace attnverify {

// Largest relative endpoint inversion concretize() treats as summation noise
// rather than a bug: 64 ulps.
inline constexpr double kOrderRepairSlack = 64.0 * 2.220446049250313e-16;

struct PerturbationSpec {
  Eigen::MatrixXd X0;           // clean input, n x m
  std::vector<int> positions;   // perturbed rows, 0-based, sorted unique
  double epsilon = 0.0;
  PNorm norm = PNorm::L1;

  int num_perturbed() const { return static_cast<int>(positions.size()); }
  int row_dim() const { return static_cast<int>(X0.cols()); }
  // Width of the coefficient matrices: one column per perturbed input entry.
  int K() const { return num_perturbed() * row_dim(); }

  void validate() const {
    if (positions.empty()) throw ValueError("positions: must be non-empty");
    if (epsilon < 0.0) throw ValueError("epsilon: must be >= 0");
    if (!X0.allFinite()) throw ValueError("X0: non-finite entry");
    for (std::size_t i = 0; i < positions.size(); ++i) {
      if (positions[i] < 0 || positions[i] >= X0.rows())
        throw ValueError("positions: index " + std::to_string(positions[i]) +
                         " out of range for " + std::to_string(X0.rows()) + " rows");
      if (i > 0 && positions[i] <= positions[i - 1])
        throw ValueError("positions: must be strictly increasing");
    }
  }
};

inline std::vector<int> normalized_positions(std::vector<int> positions) {
  std::sort(positions.begin(), positions.end());
  positions.erase(std::unique(positions.begin(), positions.end()), positions.end());
  return positions;
}

// Per-scalar affine sandwich over the flattened perturbed entries x:
//   omega_lo[r]*x + theta_lo[r] <= value_r <= omega_hi[r]*x + theta_hi[r].
// The pair carries a logical (rows, cols) shape with row-major scalar order.
// No ordering is imposed between omega_lo and omega_hi entries themselves.
template <typename T>
struct AffineBoundPair {
  int rows = 0;
  int cols = 0;
  int num_inputs = 0;  // K
  std::vector<T> omega_lo, omega_hi;  // (rows*cols) x K, row-major
  std::vector<T> theta_lo, theta_hi;  // rows*cols

  int num_outputs() const { return rows * cols; }
  int at(int r, int c) const { return r * cols + c; }

  static AffineBoundPair zeros(int rows, int cols, int num_inputs) {
    AffineBoundPair b;
    b.rows = rows;
    b.cols = cols;
    b.num_inputs = num_inputs;
    const std::size_t n = static_cast<std::size_t>(rows) * cols;
    b.omega_lo.assign(n * num_inputs, T(0.0));
    b.omega_hi.assign(n * num_inputs, T(0.0));
    b.theta_lo.assign(n, T(0.0));
    b.theta_hi.assign(n, T(0.0));
    return b;
  }
};

template <typename T>
struct IntervalVec {
  int rows = 0;
  int cols = 0;
  std::vector<T> lo, hi;

  int at(int r, int c) const { return r * cols + c; }
  Interval<T> interval(int flat) const { return {lo[flat], hi[flat]}; }
};

// Exact bounds of the input tensor itself: perturbed entries get unit
// coefficient columns, clean entries are constants folded into theta.
template <typename T>
AffineBoundPair<T> input_bounds(const PerturbationSpec& spec) {
  spec.validate();
  const int n = static_cast<int>(spec.X0.rows());
  const int m = spec.row_dim();
  AffineBoundPair<T> b = AffineBoundPair<T>::zeros(n, m, spec.K());
  std::vector<int> rank(n, -1);
  for (std::size_t r = 0; r < spec.positions.size(); ++r)
    rank[spec.positions[r]] = static_cast<int>(r);
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < m; ++c) {
      const int out = b.at(i, c);
      if (rank[i] >= 0) {
        const std::size_t col = static_cast<std::size_t>(rank[i]) * m + c;
        b.omega_lo[static_cast<std::size_t>(out) * spec.K() + col] = T(1.0);
        b.omega_hi[static_cast<std::size_t>(out) * spec.K() + col] = T(1.0);
      } else {
        b.theta_lo[out] = T(spec.X0(i, c));
        b.theta_hi[out] = T(spec.X0(i, c));
      }
    }
  }
  return b;
}

namespace detail {

// Dual-norm of one per-row coefficient block: q = inf for L1 balls, 2 for L2,
// 1 for Linf.
template <typename T>
T dual_norm(const T* w, int m, PNorm norm) {
  switch (norm) {
    case PNorm::L1: {
      T best = t_abs(w[0]);
      for (int i = 1; i < m; ++i) best = t_max(best, t_abs(w[i]));
      return best;
    }
    case PNorm::L2: {
      T sq = T(0.0);
      for (int i = 0; i < m; ++i) sq += w[i] * w[i];
      return t_sqrt(sq);
    }
    case PNorm::Linf: {
      T sum = t_abs(w[0]);
      for (int i = 1; i < m; ++i) sum += t_abs(w[i]);
      return sum;
    }
  }
  return T(0.0);
}

}  // namespace detail

// Interval of every output over the perturbation ball:
//   lo_r = theta_lo_r + sum_d (omega_block . x0_d - eps * dualnorm(omega_block))
// and symmetrically for hi.
template <typename T>
IntervalVec<T> concretize(const AffineBoundPair<T>& b, const PerturbationSpec& spec) {
  const int m = spec.row_dim();
  const int R = spec.num_perturbed();
  IntervalVec<T> out;
  out.rows = b.rows;
  out.cols = b.cols;
  const int num = b.num_outputs();
  out.lo.reserve(num);
  out.hi.reserve(num);
  for (int r = 0; r < num; ++r) {
    T lo = b.theta_lo[r];
    T hi = b.theta_hi[r];
    const T* wlo = b.omega_lo.data() + static_cast<std::size_t>(r) * b.num_inputs;
    const T* whi = b.omega_hi.data() + static_cast<std::size_t>(r) * b.num_inputs;
    for (int d = 0; d < R; ++d) {
      const int row = spec.positions[d];
      T dot_lo = T(0.0);
      T dot_hi = T(0.0);
      for (int c = 0; c < m; ++c) {
        const double x0 = spec.X0(row, c);
        dot_lo += wlo[d * m + c] * x0;
        dot_hi += whi[d * m + c] * x0;
      }
      lo += dot_lo - spec.epsilon * detail::dual_norm(wlo + d * m, m, spec.norm);
      hi += dot_hi + spec.epsilon * detail::dual_norm(whi + d * m, m, spec.norm);
    }
    // The affine sandwich guarantees lo <= hi in exact arithmetic, but the
    // two endpoints are summed in different orders and can cross by a few
    // ulps when the true interval is degenerate. Sort those back; larger
    // inversions are bugs and stay visible to the domain checks downstream.
    const double vlo = value_of(lo);
    const double vhi = value_of(hi);
    if (vlo > vhi && vlo - vhi <= kOrderRepairSlack *
                                      std::max({1.0, std::fabs(vlo), std::fabs(vhi)})) {
      const T a = t_min(lo, hi);
      const T b = t_max(lo, hi);
      lo = a;
      hi = b;
    }
    out.lo.push_back(lo);
    out.hi.push_back(hi);
  }
  return out;
}

// y = W x + bias on the flattened outputs, with the usual sign split:
// positive weights keep sides, negative weights swap them. Exact when the
// two sides of the source coincide.
template <typename T>
AffineBoundPair<T> propagate_affine(const AffineBoundPair<T>& b, const Eigen::MatrixXd& W,
                                    const Eigen::VectorXd* bias = nullptr) {
  if (W.cols() != b.num_outputs())
    throw ShapeError("propagate_affine: W has " + std::to_string(W.cols()) +
                     " columns, bound pair has " + std::to_string(b.num_outputs()) +
                     " outputs");
  if (bias && bias->size() != W.rows())
    throw ShapeError("propagate_affine: bias length mismatch");
  const int K = b.num_inputs;
  AffineBoundPair<T> out = AffineBoundPair<T>::zeros(static_cast<int>(W.rows()), 1, K);
  for (int r = 0; r < out.rows; ++r) {
    T* olo = out.omega_lo.data() + static_cast<std::size_t>(r) * K;
    T* ohi = out.omega_hi.data() + static_cast<std::size_t>(r) * K;
    T tlo = bias ? T((*bias)(r)) : T(0.0);
    T thi = tlo;
    for (int c = 0; c < W.cols(); ++c) {
      const double w = W(r, c);
      if (w == 0.0) continue;
      const T* slo = b.omega_lo.data() + static_cast<std::size_t>(c) * K;
      const T* shi = b.omega_hi.data() + static_cast<std::size_t>(c) * K;
      if (w > 0.0) {
        for (int k = 0; k < K; ++k) {
          olo[k] += w * slo[k];
          ohi[k] += w * shi[k];
        }
        tlo += w * b.theta_lo[c];
        thi += w * b.theta_hi[c];
      } else {
        for (int k = 0; k < K; ++k) {
          olo[k] += w * shi[k];
          ohi[k] += w * slo[k];
        }
        tlo += w * b.theta_hi[c];
        thi += w * b.theta_lo[c];
      }
    }
    out.theta_lo[r] = tlo;
    out.theta_hi[r] = thi;
  }
  return out;
}

// Row-wise affine map: out(r, j) = sum_c in(r, c) * W(c, j) + bias(j).
template <typename T>
AffineBoundPair<T> matmul_right(const AffineBoundPair<T>& b, const Eigen::MatrixXd& W,
                                const Eigen::VectorXd* bias = nullptr) {
  if (W.rows() != b.cols)
    throw ShapeError("matmul_right: W rows must match bound pair columns");
  if (bias && bias->size() != W.cols())
    throw ShapeError("matmul_right: bias length mismatch");
  const int K = b.num_inputs;
  AffineBoundPair<T> out =
      AffineBoundPair<T>::zeros(b.rows, static_cast<int>(W.cols()), K);
  for (int r = 0; r < b.rows; ++r) {
    for (int j = 0; j < out.cols; ++j) {
      const int o = out.at(r, j);
      T* olo = out.omega_lo.data() + static_cast<std::size_t>(o) * K;
      T* ohi = out.omega_hi.data() + static_cast<std::size_t>(o) * K;
      T tlo = bias ? T((*bias)(j)) : T(0.0);
      T thi = tlo;
      for (int c = 0; c < b.cols; ++c) {
        const double w = W(c, j);
        if (w == 0.0) continue;
        const int s = b.at(r, c);
        const T* slo = b.omega_lo.data() + static_cast<std::size_t>(s) * K;
        const T* shi = b.omega_hi.data() + static_cast<std::size_t>(s) * K;
        if (w > 0.0) {
          for (int k = 0; k < K; ++k) {
            olo[k] += w * slo[k];
            ohi[k] += w * shi[k];
          }
          tlo += w * b.theta_lo[s];
          thi += w * b.theta_hi[s];
        } else {
          for (int k = 0; k < K; ++k) {
            olo[k] += w * shi[k];
            ohi[k] += w * slo[k];
          }
          tlo += w * b.theta_hi[s];
          thi += w * b.theta_lo[s];
        }
      }
      out.theta_lo[o] = tlo;
      out.theta_hi[o] = thi;
    }
  }
  return out;
}

// Elementwise sandwich through per-scalar linear relaxations.
template <typename T>
AffineBoundPair<T> propagate_unary(const AffineBoundPair<T>& b,
                                   const std::vector<LinearRelaxation<T>>& relax) {
  if (static_cast<int>(relax.size()) != b.num_outputs())
    throw ShapeError("propagate_unary: relaxation count mismatch");
  const int K = b.num_inputs;
  AffineBoundPair<T> out = AffineBoundPair<T>::zeros(b.rows, b.cols, K);
  for (int r = 0; r < b.num_outputs(); ++r) {
    const LinearRelaxation<T>& lr = relax[r];
    const T* slo = b.omega_lo.data() + static_cast<std::size_t>(r) * K;
    const T* shi = b.omega_hi.data() + static_cast<std::size_t>(r) * K;
    T* olo = out.omega_lo.data() + static_cast<std::size_t>(r) * K;
    T* ohi = out.omega_hi.data() + static_cast<std::size_t>(r) * K;
    if (branch_nonneg(lr.slope_hi)) {
      for (int k = 0; k < K; ++k) ohi[k] = lr.slope_hi * shi[k];
      out.theta_hi[r] = lr.slope_hi * b.theta_hi[r] + lr.intercept_hi;
    } else {
      for (int k = 0; k < K; ++k) ohi[k] = lr.slope_hi * slo[k];
      out.theta_hi[r] = lr.slope_hi * b.theta_lo[r] + lr.intercept_hi;
    }
    if (branch_nonneg(lr.slope_lo)) {
      for (int k = 0; k < K; ++k) olo[k] = lr.slope_lo * slo[k];
      out.theta_lo[r] = lr.slope_lo * b.theta_lo[r] + lr.intercept_lo;
    } else {
      for (int k = 0; k < K; ++k) olo[k] = lr.slope_lo * shi[k];
      out.theta_lo[r] = lr.slope_lo * b.theta_hi[r] + lr.intercept_lo;
    }
  }
  return out;
}

// Exact elementwise sum.
template <typename T>
AffineBoundPair<T> add_bounds(const AffineBoundPair<T>& a, const AffineBoundPair<T>& b) {
  if (a.rows != b.rows || a.cols != b.cols || a.num_inputs != b.num_inputs)
    throw ShapeError("add_bounds: shape mismatch");
  AffineBoundPair<T> out = a;
  const std::size_t nomega = out.omega_lo.size();
  for (std::size_t i = 0; i < nomega; ++i) {
    out.omega_lo[i] += b.omega_lo[i];
    out.omega_hi[i] += b.omega_hi[i];
  }
  for (std::size_t i = 0; i < out.theta_lo.size(); ++i) {
    out.theta_lo[i] += b.theta_lo[i];
    out.theta_hi[i] += b.theta_hi[i];
  }
  return out;
}

// Structural helpers used by the propagation engine. All are exact.

template <typename T>
void scale_in_place(AffineBoundPair<T>& b, double s) {
  if (!(s > 0.0)) throw ValueError("scale_in_place: scale must be positive");
  for (auto& v : b.omega_lo) v *= s;
  for (auto& v : b.omega_hi) v *= s;
  for (auto& v : b.theta_lo) v *= s;
  for (auto& v : b.theta_hi) v *= s;
}

template <typename T>
AffineBoundPair<T> select_cols(const AffineBoundPair<T>& b, int first, int count) {
  if (first < 0 || first + count > b.cols)
    throw ShapeError("select_cols: range out of bounds");
  AffineBoundPair<T> out = AffineBoundPair<T>::zeros(b.rows, count, b.num_inputs);
  const int K = b.num_inputs;
  for (int r = 0; r < b.rows; ++r) {
    for (int c = 0; c < count; ++c) {
      const int src = b.at(r, first + c);
      const int dst = out.at(r, c);
      std::copy_n(b.omega_lo.data() + static_cast<std::size_t>(src) * K, K,
                  out.omega_lo.data() + static_cast<std::size_t>(dst) * K);
      std::copy_n(b.omega_hi.data() + static_cast<std::size_t>(src) * K, K,
                  out.omega_hi.data() + static_cast<std::size_t>(dst) * K);
      out.theta_lo[dst] = b.theta_lo[src];
      out.theta_hi[dst] = b.theta_hi[src];
    }
  }
  return out;
}

template <typename T>
void paste_cols(AffineBoundPair<T>& dest, const AffineBoundPair<T>& src, int first) {
  if (src.rows != dest.rows || first + src.cols > dest.cols ||
      src.num_inputs != dest.num_inputs)
    throw ShapeError("paste_cols: shape mismatch");
  const int K = dest.num_inputs;
  for (int r = 0; r < src.rows; ++r) {
    for (int c = 0; c < src.cols; ++c) {
      const int s = src.at(r, c);
      const int d = dest.at(r, first + c);
      std::copy_n(src.omega_lo.data() + static_cast<std::size_t>(s) * K, K,
                  dest.omega_lo.data() + static_cast<std::size_t>(d) * K);
      std::copy_n(src.omega_hi.data() + static_cast<std::size_t>(s) * K, K,
                  dest.omega_hi.data() + static_cast<std::size_t>(d) * K);
      dest.theta_lo[d] = src.theta_lo[s];
      dest.theta_hi[d] = src.theta_hi[s];
    }
  }
}

// (R, C) -> (R, 1): sums the scalars of each row, exact.
template <typename T>
AffineBoundPair<T> row_sums(const AffineBoundPair<T>& b) {
  AffineBoundPair<T> out = AffineBoundPair<T>::zeros(b.rows, 1, b.num_inputs);
  const int K = b.num_inputs;
  for (int r = 0; r < b.rows; ++r) {
    T* olo = out.omega_lo.data() + static_cast<std::size_t>(r) * K;
    T* ohi = out.omega_hi.data() + static_cast<std::size_t>(r) * K;
    for (int c = 0; c < b.cols; ++c) {
      const int s = b.at(r, c);
      const T* slo = b.omega_lo.data() + static_cast<std::size_t>(s) * K;
      const T* shi = b.omega_hi.data() + static_cast<std::size_t>(s) * K;
      for (int k = 0; k < K; ++k) {
        olo[k] += slo[k];
        ohi[k] += shi[k];
      }
      out.theta_lo[r] += b.theta_lo[s];
      out.theta_hi[r] += b.theta_hi[s];
    }
  }
  return out;
}

template <typename T>
AffineBoundPair<T> mean_rows(const AffineBoundPair<T>& b) {
  AffineBoundPair<T> out = AffineBoundPair<T>::zeros(1, b.cols, b.num_inputs);
  const int K = b.num_inputs;
  const double w = 1.0 / b.rows;
  for (int c = 0; c < b.cols; ++c) {
    T* olo = out.omega_lo.data() + static_cast<std::size_t>(c) * K;
    T* ohi = out.omega_hi.data() + static_cast<std::size_t>(c) * K;
    for (int r = 0; r < b.rows; ++r) {
      const int s = b.at(r, c);
      const T* slo = b.omega_lo.data() + static_cast<std::size_t>(s) * K;
      const T* shi = b.omega_hi.data() + static_cast<std::size_t>(s) * K;
      for (int k = 0; k < K; ++k) {
        olo[k] += w * slo[k];
        ohi[k] += w * shi[k];
      }
      out.theta_lo[c] += w * b.theta_lo[s];
      out.theta_hi[c] += w * b.theta_hi[s];
    }
  }
  return out;
}

template <typename T>
AffineBoundPair<T> select_row(const AffineBoundPair<T>& b, int row) {
  if (row < 0 || row >= b.rows) throw ShapeError("select_row: out of range");
  AffineBoundPair<T> out = AffineBoundPair<T>::zeros(1, b.cols, b.num_inputs);
  const int K = b.num_inputs;
  for (int c = 0; c < b.cols; ++c) {
    const int s = b.at(row, c);
    std::copy_n(b.omega_lo.data() + static_cast<std::size_t>(s) * K, K,
                out.omega_lo.data() + static_cast<std::size_t>(c) * K);
    std::copy_n(b.omega_hi.data() + static_cast<std::size_t>(s) * K, K,
                out.omega_hi.data() + static_cast<std::size_t>(c) * K);
    out.theta_lo[c] = b.theta_lo[s];
    out.theta_hi[c] = b.theta_hi[s];
  }
  return out;
}

}  // namespace attnverify
