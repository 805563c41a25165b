#include <cmath>
#include <limits>
#include <memory>
#include <vector>

#include "attnverify/errors.hpp"
#include "attnverify/sites.hpp"
#include "attnverify/strategies.hpp"
#include "doctest.h"

using namespace attnverify;

namespace {

ModelConfig four_site_config() {
  // 1 layer, 1 head, 1 position, head_dim 1: two kinds times two sides.
  ModelConfig c;
  c.num_layers = 1;
  c.num_heads = 1;
  c.seq_len = 1;
  c.hidden_size = 1;
  c.head_dim = 1;
  c.ffn_hidden = 1;
  c.num_classes = 2;
  return c;
}

// Concave quadratic with its peak at alpha = target on every coordinate.
MarginFn quadratic_margin(double target, double offset) {
  return [target, offset](const std::vector<double>& a) {
    double m = offset;
    std::vector<double> g(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      m -= (a[i] - target) * (a[i] - target);
      g[i] = -2.0 * (a[i] - target);
    }
    return std::make_pair(m, g);
  };
}

// Plays back a scripted margin sequence regardless of alpha.
MarginFn scripted_margin(std::vector<double> values) {
  auto call = std::make_shared<std::size_t>(0);
  return [values = std::move(values), call](const std::vector<double>& a) {
    const double m = values[std::min(*call, values.size() - 1)];
    ++*call;
    return std::make_pair(m, std::vector<double>(a.size(), 0.1));
  };
}

}  // namespace

TEST_SUITE("strategies") {

TEST_CASE("site indexer round-trips every flat index") {
  ModelConfig c;
  c.num_layers = 2;
  c.num_heads = 2;
  c.seq_len = 3;
  c.hidden_size = 4;
  c.head_dim = 2;
  c.ffn_hidden = 4;
  c.num_classes = 2;
  const SiteIndexer idx(c);
  // layers * heads * kinds * (n * n * dk) sites, two sides each.
  CHECK(idx.size() == 2u * 2u * 2u * (3u * 3u * 2u) * 2u);
  CHECK(idx.size() == 288);
  std::vector<bool> seen(idx.size(), false);
  for (std::size_t f = 0; f < idx.size(); ++f) {
    const auto [key, side] = idx.unflat(f);
    CHECK(idx.flat(key, side) == f);
    CHECK_FALSE(seen[f]);
    seen[f] = true;
  }
}

TEST_CASE("adam trajectory matches the frozen reference") {
  // Reference computed with an independent transcription of the update rule;
  // margin 0.5 - |alpha - 0.8|^2 from the zero start.
  const SiteIndexer layout(four_site_config());
  REQUIRE(layout.size() == 4);
  OptimizerConfig cfg;
  cfg.max_steps = 3;
  cfg.lr = 0.05;
  const auto res = optimize_alpha(layout, cfg, quadratic_margin(0.8, 0.5));

  const std::vector<double> expected = {-2.0600000000000005, -1.7500000021139765,
                                        -1.461146265094549, -1.1941056120416758};
  REQUIRE(res.trace.size() == expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i)
    CHECK(std::fabs(res.trace[i] - expected[i]) <= 1e-12);
  CHECK(res.steps_taken == 3);
  CHECK_FALSE(res.early_stopped);
  CHECK(std::fabs(res.best_margin - -1.1941056120416758) <= 1e-12);
  for (double a : res.best_alpha)
    CHECK(std::fabs(a - 0.14921093816012942) <= 1e-12);
}

TEST_CASE("positive margin at the start stops before any update") {
  const SiteIndexer layout(four_site_config());
  OptimizerConfig cfg;
  cfg.max_steps = 50;
  const auto res = optimize_alpha(layout, cfg, quadratic_margin(0.1, 0.5));
  CHECK(res.early_stopped);
  CHECK(res.steps_taken == 0);
  CHECK(res.trace.size() == 1);
  CHECK(res.trace[0] > 0.0);
}

TEST_CASE("zero step budget evaluates the start point only") {
  const SiteIndexer layout(four_site_config());
  OptimizerConfig cfg;
  cfg.max_steps = 0;
  const auto res = optimize_alpha(layout, cfg, quadratic_margin(0.8, 0.5));
  CHECK(res.trace.size() == 1);
  CHECK(res.steps_taken == 0);
  CHECK_FALSE(res.early_stopped);
  CHECK(res.best_margin == res.trace[0]);
  for (double a : res.best_alpha) CHECK(a == 0.0);
}

TEST_CASE("early stop triggers as soon as a trace entry is positive") {
  const SiteIndexer layout(four_site_config());
  OptimizerConfig cfg;
  cfg.max_steps = 10;
  const auto res = optimize_alpha(layout, cfg, scripted_margin({-1.0, 0.3, -5.0}));
  CHECK(res.early_stopped);
  CHECK(res.steps_taken == 1);
  CHECK(res.trace.size() == 2);
  CHECK(res.best_margin == 0.3);
}

TEST_CASE("keep-best survives a non-monotone trace") {
  const SiteIndexer layout(four_site_config());
  OptimizerConfig cfg;
  cfg.max_steps = 3;
  cfg.early_stop = false;
  const auto res = optimize_alpha(layout, cfg, scripted_margin({-1.0, -0.2, -0.9, -0.5}));
  CHECK(res.best_margin == -0.2);
  CHECK(res.trace.size() == 4);
  CHECK(res.steps_taken == 3);
}

TEST_CASE("non-finite margins end the run and keep the best iterate") {
  const SiteIndexer layout(four_site_config());
  OptimizerConfig cfg;
  cfg.max_steps = 10;
  const double inf = std::numeric_limits<double>::infinity();
  const auto res = optimize_alpha(layout, cfg, scripted_margin({-1.0, -inf, -0.1}));
  CHECK(res.best_margin == -1.0);
  CHECK(res.trace.size() == 2);
  CHECK(res.steps_taken == 1);
  CHECK_FALSE(res.early_stopped);
}

TEST_CASE("iterates stay inside the unit box") {
  const SiteIndexer layout(four_site_config());
  OptimizerConfig cfg;
  cfg.max_steps = 200;
  cfg.early_stop = false;
  cfg.lr = 0.5;
  // Gradient always points up: alpha must saturate at 1 and stay there.
  const MarginFn up = [](const std::vector<double>& a) {
    double m = -10.0;
    for (double v : a) m += v;
    return std::make_pair(m, std::vector<double>(a.size(), 1.0));
  };
  const auto res = optimize_alpha(layout, cfg, up);
  for (double a : res.best_alpha) {
    CHECK(a >= 0.0);
    CHECK(a <= 1.0);
  }
  CHECK(res.best_margin == -10.0 + 4.0);
}

TEST_CASE("initialization modes are deterministic") {
  const SiteIndexer layout(four_site_config());
  OptimizerConfig cfg;
  cfg.max_steps = 0;
  cfg.init = AlphaInit::One;
  auto res = optimize_alpha(layout, cfg, quadratic_margin(0.8, 0.5));
  for (double a : res.best_alpha) CHECK(a == 1.0);

  cfg.init = AlphaInit::Random;
  cfg.seed = 9;
  const auto r1 = optimize_alpha(layout, cfg, quadratic_margin(0.8, 0.5));
  const auto r2 = optimize_alpha(layout, cfg, quadratic_margin(0.8, 0.5));
  cfg.seed = 10;
  const auto r3 = optimize_alpha(layout, cfg, quadratic_margin(0.8, 0.5));
  CHECK(r1.best_alpha == r2.best_alpha);
  CHECK(r1.best_alpha != r3.best_alpha);
  for (double a : r1.best_alpha) {
    CHECK(a >= 0.0);
    CHECK(a < 1.0);
  }
}

TEST_CASE("optimizer rejects bad configuration") {
  const SiteIndexer layout(four_site_config());
  OptimizerConfig cfg;
  cfg.max_steps = -1;
  CHECK_THROWS_AS(optimize_alpha(layout, cfg, quadratic_margin(0.5, 0.0)), ValueError);
  cfg.max_steps = 1;
  cfg.lr = 0.0;
  CHECK_THROWS_AS(optimize_alpha(layout, cfg, quadratic_margin(0.5, 0.0)), ValueError);
}

TEST_CASE("rule policy follows the sign and magnitude cases") {
  CHECK(rule_alpha(-1.0, -0.5) == 0.0);
  CHECK(rule_alpha(-1.0, 0.0) == 0.0);
  CHECK(rule_alpha(0.0, 1.0) == 1.0);
  CHECK(rule_alpha(0.5, 2.0) == 1.0);
  CHECK(rule_alpha(-2.0, 1.0) == 0.0);
  CHECK(rule_alpha(-1.0, 2.0) == 1.0);
  CHECK(rule_alpha(-1.0, 1.0) == 0.0);  // tie keeps the primary plane
}

TEST_CASE("assignment factories cover the layout") {
  const ModelConfig c = four_site_config();
  const auto base = alpha_baseline(c);
  const auto dual = alpha_dual(c);
  const auto half = alpha_constant(c, 0.5);
  const auto rnd1 = alpha_random(c, 4);
  const auto rnd2 = alpha_random(c, 4);
  CHECK(base.values == std::vector<double>(4, 0.0));
  CHECK(dual.values == std::vector<double>(4, 1.0));
  CHECK(half.values == std::vector<double>(4, 0.5));
  CHECK(rnd1.values == rnd2.values);
  CHECK(rnd1.values.size() == 4);

  const auto stats = alpha_stats({0.0, 0.0, 1.0, 0.5});
  CHECK(stats.count == 4);
  CHECK(stats.frac_zero == 0.5);
  CHECK(stats.frac_one == 0.25);
  CHECK(stats.min == 0.0);
  CHECK(stats.max == 1.0);
  CHECK(stats.mean == 0.375);
}

TEST_CASE("logistic loss frozen values and monotonicity") {
  CHECK(logistic_loss(0.0) == std::log(2.0));
  CHECK(std::fabs(logistic_loss(10.0) - std::log1p(std::exp(-10.0))) <= 1e-15);
  CHECK(std::fabs(logistic_loss(-10.0) - (10.0 + std::log1p(std::exp(-10.0)))) <= 1e-15);
  CHECK(logistic_loss(-1.0) > logistic_loss(0.0));
  CHECK(logistic_loss(0.0) > logistic_loss(1.0));
}

}  // TEST_SUITE
