#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "attnverify/engine.hpp"
#include "attnverify/model.hpp"
#include "attnverify/strategies.hpp"

namespace attnverify {

struct VerificationTask {
  PerturbationSpec spec;
  int label = 0;
};

// Builds a validated task. label = -1 takes the clean prediction (first
// argmax of the forward logits).
VerificationTask make_task(const Model& model, const Matrix& X0,
                           std::vector<int> positions, double epsilon, PNorm norm,
                           int label = -1);

// Exact forward margin of the unperturbed input: min over other classes of
// logit[label] - logit[other].
double clean_margin(const Model& model, const Matrix& X0, int label);

// One plain propagation with a fixed per-site alpha vector.
NetworkBounds<double> bounds_with_alpha(const Model& model, const VerificationTask& task,
                                        const std::vector<double>& alpha,
                                        const EngineOptions& engine = EngineOptions{});

// Margin lower bound and its gradient with respect to the flat alpha vector,
// from one taped propagation. Throws GradientError on non-finite partials.
std::pair<double, std::vector<double>> margin_gradient(const Model& model,
                                                       const VerificationTask& task,
                                                       const std::vector<double>& alpha,
                                                       const EngineOptions& engine = EngineOptions{});

// Margin of a plain propagation together with the branch decisions it took.
// Evaluations with different signatures straddle a kink of the piecewise
// bound computation. min_branch_distance is the smallest nonzero margin by
// which any branch was decided; exact ties are structural and excluded.
struct TracedMargin {
  double margin = 0.0;
  std::uint64_t signature = 0;
  std::uint64_t decisions = 0;
  double min_branch_distance = 0.0;
};
TracedMargin margin_with_trace(const Model& model, const VerificationTask& task,
                               const std::vector<double>& alpha);

struct Report {
  Verdict verdict = Verdict::Unknown;
  Strategy strategy = Strategy::Baseline;
  double margin_lb = 0.0;
  int worst_class = -1;            // class attaining the margin lower bound
  IntervalVec<double> logits;      // concretized output bounds, 1 x c
  std::vector<double> alpha;       // flat assignment actually used
  AlphaStats alpha_stats;
  std::vector<double> trace;       // optimizer margins per iterate (opt only)
  int steps_taken = 0;
  bool early_stopped = false;
  bool blown = false;              // bound magnitudes exceeded the guard
  std::string note;                // reason when verdict == Unverifiable
  double wall_time_seconds = 0.0;
};

// Runs one strategy end to end. Softmax denominator failures surface as
// verdict Unverifiable (mid-optimization they stop the run and keep the best
// iterate so far); they never throw out of this call.
Report verify(const Model& model, const VerificationTask& task, Strategy strategy,
              const OptimizerConfig& opt = OptimizerConfig{},
              const EngineOptions& engine = EngineOptions{});

struct SearchProbe {
  double epsilon = 0.0;
  bool verified = false;
};

struct SearchResult {
  double certified_eps = 0.0;      // largest radius that verified
  double bracket_hi = 0.0;         // smallest radius that failed
  int doubling_calls = 0;
  int bisection_calls = 0;
  std::vector<SearchProbe> probes;
};

// Exponential bracketing from 0.01 followed by num_iters bisections over an
// arbitrary monotone predicate. The doubling count includes the first failing
// call; radii past the cap raise SearchError(CapReached).
SearchResult search_max_eps(const std::function<bool(double)>& verified_at,
                            int num_iters, double initial = 0.01, double cap = 40.0);

// Same search driven by the verifier; task.spec.epsilon is ignored. Raises
// SearchError(LabelMismatch) when even the unperturbed input has non-positive
// margin.
SearchResult search_max_eps(const Model& model, const VerificationTask& task,
                            Strategy strategy, const OptimizerConfig& opt,
                            int num_iters);

struct SoundnessReport {
  long long samples = 0;
  long long violations = 0;
  // Smallest slack seen; negative beyond tolerance means a violation.
  double min_margin_slack = 0.0;   // concrete margin minus certified bound
  double min_logit_slack = 0.0;    // distance of logits inside their intervals
  Matrix first_violation;          // 0 x 0 when none
};

// Samples perturbations uniformly from the per-row ball and checks that every
// concrete forward run stays inside the certified logits and margin bounds.
SoundnessReport soundness_sample_check(const Model& model, const VerificationTask& task,
                                       const IntervalVec<double>& logits,
                                       double margin_lb, long long num_samples,
                                       std::uint64_t seed, double tol = 1e-9);

// Minimum forward margin over a per-entry grid of the perturbation box,
// filtered to the ball; the center point is always included. The grid size
// points_per_entry^K must stay within budget or BudgetError is raised.
double brute_force_margin(const Model& model, const VerificationTask& task,
                          int points_per_entry, long long budget = 10000000);

}  // namespace attnverify
