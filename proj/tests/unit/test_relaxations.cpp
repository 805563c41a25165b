#include <cmath>
#include <random>

#include "attnverify/errors.hpp"
#include "attnverify/relaxations.hpp"
#include "attnverify/sampling.hpp"
#include "doctest.h"

using namespace attnverify;

namespace {

using DI = Interval<double>;

DI box(std::mt19937_64& g, double lo = -3.0, double hi = 3.0, double min_width = 0.0) {
  double a = uniform_in(g, lo, hi);
  double b = uniform_in(g, lo, hi);
  if (a > b) std::swap(a, b);
  if (b - a < min_width) b = a + min_width;
  return {a, b};
}

}  // namespace

TEST_SUITE("relaxations") {

TEST_CASE("relu crossing interval, positive side dominates") {
  const auto r = relu_relaxation(DI{-1.0, 2.0});
  CHECK(r.slope_hi == 2.0 / 3.0);
  CHECK(r.intercept_hi == 2.0 / 3.0);
  CHECK(r.slope_lo == 1.0);
  CHECK(r.intercept_lo == 0.0);
}

TEST_CASE("relu crossing interval, negative side dominates") {
  const auto r = relu_relaxation(DI{-2.0, 1.0});
  CHECK(r.slope_hi == 1.0 / 3.0);
  CHECK(r.intercept_hi == 2.0 * (1.0 / 3.0));
  CHECK(r.slope_lo == 0.0);
  CHECK(r.intercept_lo == 0.0);
}

TEST_CASE("relu tie takes the zero lower slope") {
  const auto r = relu_relaxation(DI{-1.0, 1.0});
  CHECK(r.slope_hi == 0.5);
  CHECK(r.intercept_hi == 0.5);
  CHECK(r.slope_lo == 0.0);
}

TEST_CASE("relu inactive and active intervals are exact") {
  const auto active = relu_relaxation(DI{0.5, 2.0});
  CHECK(active.slope_hi == 1.0);
  CHECK(active.slope_lo == 1.0);
  CHECK(active.intercept_hi == 0.0);

  const auto dead = relu_relaxation(DI{-2.0, -0.5});
  CHECK(dead.slope_hi == 0.0);
  CHECK(dead.slope_lo == 0.0);

  // lo == 0 counts as active, hi == 0 degenerates to the zero function.
  CHECK(relu_relaxation(DI{0.0, 2.0}).slope_lo == 1.0);
  CHECK(relu_relaxation(DI{-2.0, 0.0}).slope_hi == 0.0);
}

TEST_CASE("relu relaxation sandwiches the function") {
  std::mt19937_64 g(11);
  for (int t = 0; t < 2000; ++t) {
    const DI iv = box(g, -4.0, 4.0);
    const auto r = relu_relaxation(iv);
    for (int s = 0; s < 20; ++s) {
      const double x = uniform_in(g, iv.lo, iv.hi);
      const double f = std::max(x, 0.0);
      CHECK(r.slope_lo * x + r.intercept_lo <= f + 1e-12);
      CHECK(r.slope_hi * x + r.intercept_hi >= f - 1e-12);
    }
  }
}

TEST_CASE("relu rejects inverted intervals") {
  CHECK_THROWS_AS(relu_relaxation(DI{1.0, -1.0}), DomainError);
}

TEST_CASE("exp relaxation on [0, 2] has frozen coefficients") {
  const auto r = exp_relaxation(DI{0.0, 2.0});
  const double e1 = std::exp(1.0);
  CHECK(r.slope_lo == e1);
  CHECK(r.intercept_lo == 0.0);
  CHECK(r.slope_hi == (std::exp(2.0) - 1.0) / 2.0);
  CHECK(r.intercept_hi == 1.0);
}

TEST_CASE("exp relaxation collapses on point intervals") {
  const auto r = exp_relaxation(DI{0.7, 0.7});
  CHECK(r.slope_hi == r.slope_lo);
  CHECK(r.intercept_hi == r.intercept_lo);
  CHECK(r.slope_lo == std::exp(0.7));
}

TEST_CASE("exp relaxation sandwiches the function") {
  std::mt19937_64 g(12);
  for (int t = 0; t < 2000; ++t) {
    const DI iv = box(g, -3.0, 3.0);
    const auto r = exp_relaxation(iv);
    for (int s = 0; s < 20; ++s) {
      const double x = uniform_in(g, iv.lo, iv.hi);
      const double f = std::exp(x);
      const double slack = 1e-11 * std::max(1.0, f);
      CHECK(r.slope_lo * x + r.intercept_lo <= f + slack);
      CHECK(r.slope_hi * x + r.intercept_hi >= f - slack);
    }
  }
}

TEST_CASE("reciprocal relaxation on [1, 2] has frozen coefficients") {
  const auto r = reciprocal_relaxation(DI{1.0, 2.0});
  const double inv_mid = 1.0 / 1.5;
  CHECK(r.slope_lo == -(inv_mid * inv_mid));
  CHECK(r.intercept_lo == inv_mid + inv_mid);
  CHECK(r.slope_hi == -0.5);
  CHECK(r.intercept_hi == 1.5);
}

TEST_CASE("reciprocal requires a strictly positive interval") {
  CHECK_THROWS_AS(reciprocal_relaxation(DI{0.0, 1.0}), DomainError);
  CHECK_THROWS_AS(reciprocal_relaxation(DI{-1.0, 2.0}), DomainError);
}

TEST_CASE("reciprocal relaxation sandwiches the function") {
  std::mt19937_64 g(13);
  for (int t = 0; t < 2000; ++t) {
    DI iv = box(g, 0.05, 4.0);
    const auto r = reciprocal_relaxation(iv);
    for (int s = 0; s < 20; ++s) {
      const double x = uniform_in(g, iv.lo, iv.hi);
      const double f = 1.0 / x;
      const double slack = 1e-11 * std::max(1.0, f);
      CHECK(r.slope_lo * x + r.intercept_lo <= f + slack);
      CHECK(r.slope_hi * x + r.intercept_hi >= f - slack);
    }
  }
}

TEST_CASE("dot planes bound the product and touch their anchors bit-exactly") {
  std::mt19937_64 g(14);
  for (int t = 0; t < 5000; ++t) {
    const DI q = box(g);
    const DI k = box(g);
    const auto a = dot_plane_a(q, k);
    const auto b = dot_plane_b(q, k);

    CHECK(evaluate_plane(a.upper, q.lo, k.hi) == q.lo * k.hi);
    CHECK(evaluate_plane(a.lower, q.lo, k.lo) == q.lo * k.lo);
    CHECK(evaluate_plane(b.upper, q.hi, k.lo) == q.hi * k.lo);
    CHECK(evaluate_plane(b.lower, q.hi, k.hi) == q.hi * k.hi);

    for (int s = 0; s < 8; ++s) {
      const double x = uniform_in(g, q.lo, q.hi);
      const double y = uniform_in(g, k.lo, k.hi);
      const double xy = x * y;
      CHECK(evaluate_plane(a.upper, x, y) >= xy - 1e-12);
      CHECK(evaluate_plane(a.lower, x, y) <= xy + 1e-12);
      CHECK(evaluate_plane(b.upper, x, y) >= xy - 1e-12);
      CHECK(evaluate_plane(b.lower, x, y) <= xy + 1e-12);
    }
  }
}

TEST_CASE("dot planes reject inverted intervals") {
  CHECK_THROWS_AS(dot_plane_a(DI{1.0, -1.0}, DI{0.0, 1.0}), DomainError);
  CHECK_THROWS_AS(dot_plane_b(DI{0.0, 1.0}, DI{2.0, 1.0}), DomainError);
}

TEST_CASE("fused value equals direct min/max selection bit-exactly") {
  std::mt19937_64 g(15);
  for (int t = 0; t < 20000; ++t) {
    const DI q = box(g);
    const DI k = box(g);
    const auto a = dot_plane_a(q, k);
    const auto b = dot_plane_b(q, k);
    const double x = uniform_in(g, q.lo, q.hi);
    const double y = uniform_in(g, k.lo, k.hi);
    const auto f = fused_dot_value(x, y, a, b);
    CHECK(f.hi == std::min(evaluate_plane(a.upper, x, y), evaluate_plane(b.upper, x, y)));
    CHECK(f.lo == std::max(evaluate_plane(a.lower, x, y), evaluate_plane(b.lower, x, y)));
    CHECK(f.lo <= x * y + 1e-12);
    CHECK(f.hi >= x * y - 1e-12);
  }
}

TEST_CASE("fused value handles exactly equal planes") {
  const DI q{0.25, 1.5};
  const DI k{-2.0, 0.5};
  const auto a = dot_plane_a(q, k);
  const auto f = fused_dot_value(0.75, -1.0, a, a);
  CHECK(f.hi == evaluate_plane(a.upper, 0.75, -1.0));
  CHECK(f.lo == evaluate_plane(a.lower, 0.75, -1.0));
}

TEST_CASE("relu input interval is symmetric and covers the plane difference") {
  std::mt19937_64 g(16);
  for (int t = 0; t < 3000; ++t) {
    const DI q = box(g);
    const DI k = box(g);
    const double width = (q.hi - q.lo) * (k.hi - k.lo);
    for (const Side side : {Side::Upper, Side::Lower}) {
      const auto iv = relu_input_interval(q, k, side);
      CHECK(iv.lo <= iv.hi);
      CHECK(std::fabs(iv.hi - width) <= 1e-12 * std::max(1.0, width));
      CHECK(std::fabs(iv.lo + width) <= 1e-12 * std::max(1.0, width));
    }

    const auto a = dot_plane_a(q, k);
    const auto b = dot_plane_b(q, k);
    const auto up = relu_input_interval(q, k, Side::Upper);
    const auto lo = relu_input_interval(q, k, Side::Lower);
    for (int s = 0; s < 10; ++s) {
      const double x = uniform_in(g, q.lo, q.hi);
      const double y = uniform_in(g, k.lo, k.hi);
      const double du = evaluate_plane(a.upper, x, y) - evaluate_plane(b.upper, x, y);
      const double dl = evaluate_plane(b.lower, x, y) - evaluate_plane(a.lower, x, y);
      CHECK(du >= up.lo - 1e-12);
      CHECK(du <= up.hi + 1e-12);
      CHECK(dl >= lo.lo - 1e-12);
      CHECK(dl <= lo.hi + 1e-12);
    }
  }
}

TEST_CASE("alpha plane endpoints reproduce both plane families bit-exactly") {
  std::mt19937_64 g(17);
  for (int t = 0; t < 5000; ++t) {
    const DI q = box(g);
    const DI k = box(g);
    const auto a = dot_plane_a(q, k);
    const auto b = dot_plane_b(q, k);
    for (const Side side : {Side::Upper, Side::Lower}) {
      const auto& pa = side == Side::Upper ? a.upper : a.lower;
      const auto& pb = side == Side::Upper ? b.upper : b.lower;
      const auto at0 = alpha_plane(q, k, side, 0.0);
      const auto at1 = alpha_plane(q, k, side, 1.0);
      CHECK(at0.coef_x == pa.coef_x);
      CHECK(at0.coef_y == pa.coef_y);
      CHECK(at0.constant == pa.constant);
      CHECK(at1.coef_x == pb.coef_x);
      CHECK(at1.coef_y == pb.coef_y);
      CHECK(at1.constant == pb.constant);
    }
  }
}

TEST_CASE("alpha plane midpoint over the unit box is the constant 1 plane") {
  const DI q{-1.0, 1.0};
  const DI k{-1.0, 1.0};
  const auto p = alpha_plane(q, k, Side::Upper, 0.5);
  CHECK(p.coef_x == 0.0);
  CHECK(p.coef_y == 0.0);
  CHECK(p.constant == 1.0);
}

TEST_CASE("alpha plane stays sound across the whole parameter range") {
  std::mt19937_64 g(18);
  for (int t = 0; t < 3000; ++t) {
    const DI q = box(g);
    const DI k = box(g);
    const double alpha = uniform01(g);
    const auto up = alpha_plane(q, k, Side::Upper, alpha);
    const auto dn = alpha_plane(q, k, Side::Lower, alpha);
    for (int s = 0; s < 10; ++s) {
      const double x = uniform_in(g, q.lo, q.hi);
      const double y = uniform_in(g, k.lo, k.hi);
      const double xy = x * y;
      CHECK(evaluate_plane(up, x, y) >= xy - 1e-12);
      CHECK(evaluate_plane(dn, x, y) <= xy + 1e-12);
    }
  }
}

}  // TEST_SUITE
