#include "attnverify/strategies.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "attnverify/errors.hpp"
#include "attnverify/sampling.hpp"

namespace attnverify {

AlphaAssignment alpha_constant(const ModelConfig& config, double value) {
  AlphaAssignment a;
  a.layout = SiteIndexer(config);
  a.values.assign(a.layout.size(), value);
  return a;
}

AlphaAssignment alpha_baseline(const ModelConfig& config) {
  return alpha_constant(config, 0.0);
}

AlphaAssignment alpha_dual(const ModelConfig& config) {
  return alpha_constant(config, 1.0);
}

AlphaAssignment alpha_random(const ModelConfig& config, std::uint64_t seed) {
  AlphaAssignment a;
  a.layout = SiteIndexer(config);
  a.values.resize(a.layout.size());
  std::mt19937_64 g(seed);
  for (double& v : a.values) v = uniform01(g);
  return a;
}

double rule_alpha(double lo, double hi) {
  if (hi <= 0.0) return 0.0;  // ReLU term vanishes, primary plane already exact
  if (lo >= 0.0) return 1.0;  // ReLU is the identity, dual plane is exact
  return std::fabs(lo) >= std::fabs(hi) ? 0.0 : 1.0;
}

double logistic_loss(double margin) {
  return std::max(-margin, 0.0) + std::log1p(std::exp(-std::fabs(margin)));
}

OptimizeResult optimize_alpha(const SiteIndexer& layout, const OptimizerConfig& config,
                              const MarginFn& margin_fn) {
  if (config.max_steps < 0) throw ValueError("optimize_alpha: max_steps must be >= 0");
  if (!(config.lr > 0.0)) throw ValueError("optimize_alpha: lr must be positive");

  const std::size_t dim = layout.size();
  std::vector<double> alpha(dim, 0.0);
  switch (config.init) {
    case AlphaInit::Zero:
      break;
    case AlphaInit::One:
      std::fill(alpha.begin(), alpha.end(), 1.0);
      break;
    case AlphaInit::Random: {
      std::mt19937_64 g(config.seed);
      for (double& v : alpha) v = uniform01(g);
      break;
    }
  }

  OptimizeResult result;
  result.best_alpha = alpha;

  auto [margin, grad] = margin_fn(alpha);
  result.trace.push_back(margin);
  result.best_margin = margin;

  std::vector<double> m(dim, 0.0);
  std::vector<double> v(dim, 0.0);
  for (int step = 1; step <= config.max_steps; ++step) {
    if (config.early_stop && margin > 0.0) {
      result.early_stopped = true;
      break;
    }
    if (!std::isfinite(margin)) break;  // bounds blew up at this iterate

    // Gradient of the logistic loss: d/dalpha log(1+exp(-m)) = -sigma(-m) m'.
    const double sig = 1.0 / (1.0 + std::exp(margin));
    const double bc1 = 1.0 - std::pow(config.beta1, step);
    const double bc2 = 1.0 - std::pow(config.beta2, step);
    for (std::size_t i = 0; i < dim; ++i) {
      const double g = -sig * grad[i];
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      alpha[i] -= config.lr * mhat / (std::sqrt(vhat) + config.eps);
      alpha[i] = std::clamp(alpha[i], 0.0, 1.0);
    }

    std::tie(margin, grad) = margin_fn(alpha);
    result.trace.push_back(margin);
    result.steps_taken = step;
    if (margin > result.best_margin) {
      result.best_margin = margin;
      result.best_alpha = alpha;
    }
  }
  return result;
}

}  // namespace attnverify
