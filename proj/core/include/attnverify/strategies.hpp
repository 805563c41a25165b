#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "attnverify/sites.hpp"
#include "attnverify/types.hpp"

namespace attnverify {

enum class AlphaInit { Zero, Random, One };

inline std::string to_string(AlphaInit i) {
  switch (i) {
    case AlphaInit::Zero: return "zero";
    case AlphaInit::Random: return "random";
    case AlphaInit::One: return "one";
  }
  return "?";
}

inline AlphaInit alpha_init_from_string(const std::string& s) {
  if (s == "zero") return AlphaInit::Zero;
  if (s == "random") return AlphaInit::Random;
  if (s == "one") return AlphaInit::One;
  throw ValueError("unknown init '" + s + "' (expected zero, random, one)");
}

struct OptimizerConfig {
  int max_steps = 1000;
  double lr = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  AlphaInit init = AlphaInit::Zero;
  bool early_stop = true;
  std::uint64_t seed = 0;
};

AlphaAssignment alpha_baseline(const ModelConfig& config);
AlphaAssignment alpha_dual(const ModelConfig& config);
AlphaAssignment alpha_constant(const ModelConfig& config, double value);
AlphaAssignment alpha_random(const ModelConfig& config, std::uint64_t seed);

// Area-heuristic selection from the fused-ReLU input range: the larger
// sub-domain wins, ties and always-nonpositive inputs take the primary plane.
double rule_alpha(double lo, double hi);

// log(1 + exp(-margin)) in overflow-safe form.
double logistic_loss(double margin);

// Margin and its gradient with respect to the flat alpha vector.
using MarginFn =
    std::function<std::pair<double, std::vector<double>>(const std::vector<double>&)>;

struct OptimizeResult {
  std::vector<double> best_alpha;
  double best_margin = 0.0;
  std::vector<double> trace;  // margin per evaluated iterate, starting at init
  int steps_taken = 0;
  bool early_stopped = false;
};

// Projected Adam ascent on the margin through the logistic loss. Keeps the
// best iterate seen; stops early at the first positive margin if configured.
OptimizeResult optimize_alpha(const SiteIndexer& layout, const OptimizerConfig& config,
                              const MarginFn& margin_fn);

}  // namespace attnverify
