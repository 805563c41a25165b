#pragma once

#include <cmath>
#include <sstream>
#include <utility>

#include "attnverify/autodiff.hpp"
#include "attnverify/errors.hpp"
#include "attnverify/types.hpp"

namespace attnverify {

// Intervals narrower than this are treated as a point; both relaxation lines
// then pass through the point exactly, which keeps eps = 0 propagation exact.
inline constexpr double kPointIntervalWidth = 1e-12;

template <typename T>
struct Interval {
  T lo{};
  T hi{};
};

// y is bounded by slope_hi*x + intercept_hi above and slope_lo*x + intercept_lo
// below for all x in the interval the relaxation was built from.
template <typename T>
struct LinearRelaxation {
  T slope_hi{};
  T intercept_hi{};
  T slope_lo{};
  T intercept_lo{};
};

// x*y <= (>=) coef_x*x + coef_y*y + constant over a box.
template <typename T>
struct PlanarBound {
  T coef_x{};
  T coef_y{};
  T constant{};
};

template <typename T>
struct PlanarPair {
  PlanarBound<T> upper;
  PlanarBound<T> lower;
};

namespace detail {
template <typename T>
void require_ordered(const Interval<T>& iv, const char* what) {
  if (!(value_of(iv.lo) <= value_of(iv.hi))) {
    std::ostringstream os;
    os.precision(17);
    os << what << ": interval lower bound " << value_of(iv.lo)
       << " exceeds upper bound " << value_of(iv.hi);
    throw DomainError(os.str());
  }
}
}  // namespace detail

// ReLU: identity when fully active, zero when fully inactive, otherwise the
// chord above and a 0- or 1-slope line below, picked by the larger sub-domain
// (area heuristic, ties take slope 0).
template <typename T>
LinearRelaxation<T> relu_relaxation(const Interval<T>& iv) {
  detail::require_ordered(iv, "relu_relaxation");
  LinearRelaxation<T> r;
  if (branch_nonneg(iv.lo)) {
    r.slope_hi = T(1.0);
    r.slope_lo = T(1.0);
    r.intercept_hi = T(0.0);
    r.intercept_lo = T(0.0);
    return r;
  }
  if (!branch_nonneg(iv.hi)) {
    r.slope_hi = T(0.0);
    r.slope_lo = T(0.0);
    r.intercept_hi = T(0.0);
    r.intercept_lo = T(0.0);
    return r;
  }
  // lo < 0 < hi up to the sign convention above
  r.slope_hi = iv.hi / (iv.hi - iv.lo);
  r.intercept_hi = T(0.0) - r.slope_hi * iv.lo;
  const bool negative_dominates =
      !(std::fabs(value_of(iv.lo)) < std::fabs(value_of(iv.hi)));
  record_branch(negative_dominates,
                std::fabs(std::fabs(value_of(iv.lo)) - std::fabs(value_of(iv.hi))));
  r.slope_lo = negative_dominates ? T(0.0) : T(1.0);
  r.intercept_lo = T(0.0);
  return r;
}

// exp: chord above, tangent at the midpoint below.
template <typename T>
LinearRelaxation<T> exp_relaxation(const Interval<T>& iv) {
  detail::require_ordered(iv, "exp_relaxation");
  LinearRelaxation<T> r;
  const T mid = (iv.lo + iv.hi) * 0.5;
  const T emid = t_exp(mid);
  r.slope_lo = emid;
  r.intercept_lo = emid - emid * mid;
  const bool point = value_of(iv.hi) - value_of(iv.lo) < kPointIntervalWidth;
  record_branch(point, value_of(iv.hi) - value_of(iv.lo));
  if (point) {
    r.slope_hi = r.slope_lo;
    r.intercept_hi = r.intercept_lo;
  } else {
    const T elo = t_exp(iv.lo);
    const T ehi = t_exp(iv.hi);
    r.slope_hi = (ehi - elo) / (iv.hi - iv.lo);
    r.intercept_hi = elo - r.slope_hi * iv.lo;
  }
  return r;
}

// 1/x on a strictly positive interval: tangent at the midpoint below, chord
// above (1/x is convex there).
template <typename T>
LinearRelaxation<T> reciprocal_relaxation(const Interval<T>& iv) {
  detail::require_ordered(iv, "reciprocal_relaxation");
  if (!(value_of(iv.lo) > 0.0))
    throw DomainError("reciprocal_relaxation: interval must be strictly positive");
  LinearRelaxation<T> r;
  const T mid = (iv.lo + iv.hi) * 0.5;
  const T inv_mid = T(1.0) / mid;
  r.slope_lo = T(0.0) - inv_mid * inv_mid;
  r.intercept_lo = inv_mid + inv_mid;
  const bool point = value_of(iv.hi) - value_of(iv.lo) < kPointIntervalWidth;
  record_branch(point, value_of(iv.hi) - value_of(iv.lo));
  if (point) {
    r.slope_hi = r.slope_lo;
    r.intercept_hi = r.intercept_lo;
  } else {
    r.slope_hi = T(0.0) - T(1.0) / (iv.lo * iv.hi);
    r.intercept_hi = T(1.0) / iv.lo + T(1.0) / iv.hi;
  }
  return r;
}

// Primary planes anchored at (q_lo, k_hi): sound over the whole box, tight on
// two of its edges.
template <typename T>
PlanarPair<T> dot_plane_a(const Interval<T>& q, const Interval<T>& k) {
  detail::require_ordered(q, "dot_plane_a(q)");
  detail::require_ordered(k, "dot_plane_a(k)");
  PlanarPair<T> p;
  p.upper.coef_x = k.hi;
  p.upper.coef_y = q.lo;
  p.upper.constant = T(0.0) - q.lo * k.hi;
  p.lower.coef_x = k.lo;
  p.lower.coef_y = q.lo;
  p.lower.constant = T(0.0) - q.lo * k.lo;
  return p;
}

// Dual planes anchored at the opposite corner (q_hi, k_lo).
template <typename T>
PlanarPair<T> dot_plane_b(const Interval<T>& q, const Interval<T>& k) {
  detail::require_ordered(q, "dot_plane_b(q)");
  detail::require_ordered(k, "dot_plane_b(k)");
  PlanarPair<T> p;
  p.upper.coef_x = k.lo;
  p.upper.coef_y = q.hi;
  p.upper.constant = T(0.0) - q.hi * k.lo;
  p.lower.coef_x = k.hi;
  p.lower.coef_y = q.hi;
  p.lower.constant = T(0.0) - q.hi * k.hi;
  return p;
}

template <typename T, typename S>
T evaluate_plane(const PlanarBound<T>& p, const S& x, const S& y) {
  return p.coef_x * x + p.coef_y * y + p.constant;
}

// Pointwise combination of both plane families through the ReLU form:
//   upper = upperA - ReLU(upperA - upperB), lower = lowerA + ReLU(lowerB - lowerA).
// Where the ReLU is active the expression simplifies to the dual plane, so
// each region evaluates one plane's own coefficients; a zero difference is
// only produced by exactly equal planes, hence the region choice agrees with
// direct min/max selection bit for bit.
inline Interval<double> fused_dot_value(double q, double k,
                                        const PlanarPair<double>& planes_a,
                                        const PlanarPair<double>& planes_b) {
  const double ua = evaluate_plane(planes_a.upper, q, k);
  const double ub = evaluate_plane(planes_b.upper, q, k);
  const double la = evaluate_plane(planes_a.lower, q, k);
  const double lb = evaluate_plane(planes_b.lower, q, k);
  Interval<double> out;
  out.hi = std::max(ua - ub, 0.0) > 0.0 ? ub : ua;
  out.lo = std::max(lb - la, 0.0) > 0.0 ? lb : la;
  return out;
}

// Range of the difference fed to the ReLU in the fused form.  The difference
// of the two planes is affine in (Q, K), so its range over the box is attained
// at corners; expanding either side's corner values collapses to the same
// product, exactly symmetric about zero:
//   [-(q_hi-q_lo)*(k_hi-k_lo), +(q_hi-q_lo)*(k_hi-k_lo)]
// The product form rounds once per endpoint, so the symmetry survives in
// floating point; summing the corner terms separately would not preserve it.
template <typename T>
Interval<T> relu_input_interval(const Interval<T>& q, const Interval<T>& k, Side side) {
  detail::require_ordered(q, "relu_input_interval(q)");
  detail::require_ordered(k, "relu_input_interval(k)");
  (void)side;
  Interval<T> out;
  out.hi = (q.hi - q.lo) * (k.hi - k.lo);
  out.lo = T(0.0) - out.hi;
  return out;
}

// Interpolated plane: alpha = 0 reproduces the primary plane, alpha = 1 the
// dual plane; every alpha in [0, 1] stays sound because both endpoints bound
// the same side.
template <typename T>
PlanarBound<T> alpha_plane(const Interval<T>& q, const Interval<T>& k, Side side,
                           const T& alpha) {
  detail::require_ordered(q, "alpha_plane(q)");
  detail::require_ordered(k, "alpha_plane(k)");
  const T one_minus = T(1.0) - alpha;
  PlanarBound<T> p;
  if (side == Side::Upper) {
    p.coef_x = one_minus * k.hi + alpha * k.lo;
    p.coef_y = one_minus * q.lo + alpha * q.hi;
    p.constant = T(0.0) - (one_minus * (q.lo * k.hi) + alpha * (q.hi * k.lo));
  } else {
    p.coef_x = alpha * k.hi + one_minus * k.lo;
    p.coef_y = alpha * q.hi + one_minus * q.lo;
    p.constant = T(0.0) - (alpha * (q.hi * k.hi) + one_minus * (q.lo * k.lo));
  }
  return p;
}

}  // namespace attnverify
