#include "attnverify/verifier.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <random>

#include "attnverify/sampling.hpp"

namespace attnverify {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Installs a fresh branch trace for the duration of one propagation.
struct BranchScope {
  BranchTrace trace;
  BranchTrace* prev;
  BranchScope() : prev(BranchTrace::active()) { BranchTrace::active() = &trace; }
  ~BranchScope() { BranchTrace::active() = prev; }
  BranchScope(const BranchScope&) = delete;
  BranchScope& operator=(const BranchScope&) = delete;
};

double margin_of_logits(const Vector& logits, int label) {
  double margin = kInf;
  for (int cls = 0; cls < logits.size(); ++cls) {
    if (cls == label) continue;
    margin = std::min(margin, logits(label) - logits(cls));
  }
  return margin;
}

double row_norm(const Eigen::RowVectorXd& delta, PNorm norm) {
  switch (norm) {
    case PNorm::L1:
      return delta.cwiseAbs().sum();
    case PNorm::L2:
      return delta.norm();
    case PNorm::Linf:
      return delta.cwiseAbs().maxCoeff();
  }
  return 0.0;
}

}  // namespace

VerificationTask make_task(const Model& model, const Matrix& X0,
                           std::vector<int> positions, double epsilon, PNorm norm,
                           int label) {
  const ModelConfig& cfg = model.config;
  if (X0.rows() != cfg.seq_len || X0.cols() != cfg.hidden_size)
    throw ShapeError("X0: expected " + std::to_string(cfg.seq_len) + "x" +
                     std::to_string(cfg.hidden_size) + ", got " +
                     std::to_string(X0.rows()) + "x" + std::to_string(X0.cols()));
  VerificationTask task;
  task.spec.X0 = X0;
  task.spec.positions = normalized_positions(std::move(positions));
  task.spec.epsilon = epsilon;
  task.spec.norm = norm;
  task.spec.validate();
  if (label == -1) {
    const Vector logits = forward(model, X0);
    int best = 0;
    for (int cls = 1; cls < logits.size(); ++cls)
      if (logits(cls) > logits(best)) best = cls;
    task.label = best;
  } else {
    if (label < 0 || label >= cfg.num_classes)
      throw ValueError("label " + std::to_string(label) + " out of range for " +
                       std::to_string(cfg.num_classes) + " classes");
    task.label = label;
  }
  return task;
}

double clean_margin(const Model& model, const Matrix& X0, int label) {
  if (label < 0 || label >= model.config.num_classes)
    throw ValueError("label out of range");
  return margin_of_logits(forward(model, X0), label);
}

NetworkBounds<double> bounds_with_alpha(const Model& model, const VerificationTask& task,
                                        const std::vector<double>& alpha,
                                        const EngineOptions& engine) {
  const SiteIndexer layout(model.config);
  if (alpha.size() != layout.size())
    throw ValueError("alpha vector has " + std::to_string(alpha.size()) +
                     " entries, model has " + std::to_string(layout.size()) +
                     " relaxation sites");
  const auto src = AlphaSource<double>::external_source(model.config, alpha);
  return propagate_network(model, task.spec, task.label, src, engine);
}

std::pair<double, std::vector<double>> margin_gradient(const Model& model,
                                                       const VerificationTask& task,
                                                       const std::vector<double>& alpha,
                                                       const EngineOptions& engine) {
  const SiteIndexer layout(model.config);
  if (alpha.size() != layout.size())
    throw ValueError("alpha vector has " + std::to_string(alpha.size()) +
                     " entries, model has " + std::to_string(layout.size()) +
                     " relaxation sites");
  Tape tape;
  tape.reserve(1u << 16);
  Tape::Scope scope(tape);
  std::vector<Rev> leaves;
  leaves.reserve(alpha.size());
  for (double a : alpha) leaves.push_back(Rev::make_leaf(a));

  const auto src = AlphaSource<Rev>::external_source(model.config, leaves);
  const NetworkBounds<Rev> nb = propagate_network(model, task.spec, task.label, src, engine);

  std::vector<double> grad(alpha.size(), 0.0);
  if (nb.margin_lb.idx >= 0) {
    const std::vector<double> bar = tape.adjoints(nb.margin_lb.idx);
    for (std::size_t i = 0; i < leaves.size(); ++i)
      grad[i] = bar[static_cast<std::size_t>(leaves[i].idx)];
  }
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!std::isfinite(grad[i])) {
      const auto [key, side] = layout.unflat(i);
      throw GradientError("non-finite partial derivative at " + to_string(key, side));
    }
  }
  return {value_of(nb.margin_lb), std::move(grad)};
}

TracedMargin margin_with_trace(const Model& model, const VerificationTask& task,
                               const std::vector<double>& alpha) {
  BranchScope scope;
  const NetworkBounds<double> nb = bounds_with_alpha(model, task, alpha);
  TracedMargin out;
  out.margin = nb.margin_lb;
  out.signature = scope.trace.signature;
  out.decisions = scope.trace.decisions;
  out.min_branch_distance = scope.trace.min_positive;
  return out;
}

Report verify(const Model& model, const VerificationTask& task, Strategy strategy,
              const OptimizerConfig& opt, const EngineOptions& engine) {
  const auto start = std::chrono::steady_clock::now();
  const SiteIndexer layout(model.config);

  Report rep;
  rep.strategy = strategy;
  rep.alpha.assign(layout.size(), 0.0);

  try {
    if (strategy == Strategy::Optimized) {
      long long evals = 0;
      bool cut_short = false;
      const MarginFn fn = [&](const std::vector<double>& a) {
        try {
          auto r = margin_gradient(model, task, a, engine);
          ++evals;
          return r;
        } catch (const UnverifiableError&) {
          if (evals == 0) throw;
          cut_short = true;
          return std::make_pair(-kInf, std::vector<double>(a.size(), 0.0));
        }
      };
      const OptimizeResult res = optimize_alpha(layout, opt, fn);
      rep.alpha = res.best_alpha;
      rep.trace = res.trace;
      rep.steps_taken = res.steps_taken;
      rep.early_stopped = res.early_stopped;
      if (cut_short && !std::isfinite(res.best_margin)) {
        // Every complete evaluation failed in the softmax denominator.
        throw UnverifiableError("softmax denominator bound failed at every iterate");
      }
      const NetworkBounds<double> nb = bounds_with_alpha(model, task, rep.alpha, engine);
      rep.margin_lb = nb.margin_lb;
      rep.worst_class = nb.worst_class;
      rep.logits = nb.logits;
      rep.blown = nb.blown;
    } else {
      AlphaSource<double> src;
      switch (strategy) {
        case Strategy::Baseline:
          src = AlphaSource<double>::constant_source(model.config, 0.0);
          break;
        case Strategy::Dual:
          src = AlphaSource<double>::constant_source(model.config, 1.0);
          break;
        case Strategy::Rule:
          src = AlphaSource<double>::rule_source(model.config);
          break;
        case Strategy::Optimized:
          break;
      }
      src.record = &rep.alpha;
      const NetworkBounds<double> nb =
          propagate_network(model, task.spec, task.label, src, engine);
      rep.margin_lb = nb.margin_lb;
      rep.worst_class = nb.worst_class;
      rep.logits = nb.logits;
      rep.blown = nb.blown;
    }
    rep.verdict = rep.margin_lb > 0.0 ? Verdict::Verified : Verdict::Unknown;
    if (rep.blown) rep.note = "intermediate bound magnitudes exceeded the overflow guard";
  } catch (const UnverifiableError& e) {
    rep.verdict = Verdict::Unverifiable;
    rep.margin_lb = -kInf;
    rep.note = e.what();
    rep.logits.rows = 1;
    rep.logits.cols = model.config.num_classes;
    rep.logits.lo.assign(model.config.num_classes, -kInf);
    rep.logits.hi.assign(model.config.num_classes, kInf);
  }

  rep.alpha_stats = alpha_stats(rep.alpha);
  rep.wall_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

SearchResult search_max_eps(const std::function<bool(double)>& verified_at,
                            int num_iters, double initial, double cap) {
  if (num_iters < 0) throw ValueError("num_iters must be >= 0");
  if (!(initial > 0.0)) throw ValueError("initial radius must be positive");

  SearchResult res;
  double lo = 0.0;
  double hi = initial;
  while (true) {
    if (hi > cap)
      throw SearchError(SearchError::Kind::CapReached,
                        "search radius exceeded cap " + std::to_string(cap));
    ++res.doubling_calls;
    const bool ok = verified_at(hi);
    res.probes.push_back({hi, ok});
    if (!ok) break;
    lo = hi;
    hi *= 2.0;
  }
  for (int it = 0; it < num_iters; ++it) {
    const double mid = 0.5 * (lo + hi);
    ++res.bisection_calls;
    const bool ok = verified_at(mid);
    res.probes.push_back({mid, ok});
    (ok ? lo : hi) = mid;
  }
  res.certified_eps = lo;
  res.bracket_hi = hi;
  return res;
}

SearchResult search_max_eps(const Model& model, const VerificationTask& task,
                            Strategy strategy, const OptimizerConfig& opt,
                            int num_iters) {
  if (clean_margin(model, task.spec.X0, task.label) <= 0.0)
    throw SearchError(SearchError::Kind::LabelMismatch,
                      "clean input does not classify as label " +
                          std::to_string(task.label));
  const auto verified_at = [&](double eps) {
    VerificationTask probe = task;
    probe.spec.epsilon = eps;
    return verify(model, probe, strategy, opt).verdict == Verdict::Verified;
  };
  return search_max_eps(verified_at, num_iters);
}

SoundnessReport soundness_sample_check(const Model& model, const VerificationTask& task,
                                       const IntervalVec<double>& logits,
                                       double margin_lb, long long num_samples,
                                       std::uint64_t seed, double tol) {
  const PerturbationSpec& spec = task.spec;
  const int m = spec.row_dim();
  const int c = model.config.num_classes;
  if (logits.lo.size() != static_cast<std::size_t>(c))
    throw ShapeError("logit bounds have wrong width");

  SoundnessReport rep;
  rep.min_margin_slack = kInf;
  rep.min_logit_slack = kInf;
  std::mt19937_64 gen(seed);
  std::vector<double> delta;
  Matrix X = spec.X0;
  for (long long s = 0; s < num_samples; ++s) {
    X = spec.X0;
    for (int row : spec.positions) {
      delta.clear();
      sample_ball(gen, spec.norm, spec.epsilon, m, delta);
      for (int col = 0; col < m; ++col) X(row, col) += delta[col];
    }
    const Vector l = forward(model, X);
    bool bad = false;
    for (int cls = 0; cls < c; ++cls) {
      const double slack_lo = l(cls) - logits.lo[cls];
      const double slack_hi = logits.hi[cls] - l(cls);
      rep.min_logit_slack = std::min({rep.min_logit_slack, slack_lo, slack_hi});
      if (slack_lo < -tol || slack_hi < -tol) bad = true;
    }
    const double slack = margin_of_logits(l, task.label) - margin_lb;
    rep.min_margin_slack = std::min(rep.min_margin_slack, slack);
    if (slack < -tol) bad = true;
    if (bad) {
      if (rep.violations == 0) rep.first_violation = X;
      ++rep.violations;
    }
  }
  rep.samples = num_samples;
  return rep;
}

double brute_force_margin(const Model& model, const VerificationTask& task,
                          int points_per_entry, long long budget) {
  if (points_per_entry < 1) throw ValueError("points_per_entry must be >= 1");
  const PerturbationSpec& spec = task.spec;
  const int K = spec.K();
  const int m = spec.row_dim();

  long long total = 1;
  for (int i = 0; i < K; ++i) {
    total *= points_per_entry;
    if (total > budget)
      throw BudgetError("grid of " + std::to_string(points_per_entry) + "^" +
                        std::to_string(K) + " points exceeds budget " +
                        std::to_string(budget));
  }

  std::vector<double> offsets(points_per_entry, 0.0);
  if (points_per_entry > 1) {
    for (int t = 0; t < points_per_entry; ++t)
      offsets[t] = -spec.epsilon +
                   2.0 * spec.epsilon * t / static_cast<double>(points_per_entry - 1);
  }

  // The center is always feasible; grids with even point counts may miss it.
  double best = margin_of_logits(forward(model, spec.X0), task.label);

  std::vector<int> idx(K, 0);
  Matrix X = spec.X0;
  Eigen::RowVectorXd delta(m);
  for (long long step = 0; step < total; ++step) {
    bool feasible = true;
    X = spec.X0;
    for (int d = 0; d < spec.num_perturbed() && feasible; ++d) {
      for (int col = 0; col < m; ++col) delta(col) = offsets[idx[d * m + col]];
      if (row_norm(delta, spec.norm) > spec.epsilon) {
        feasible = false;
        break;
      }
      X.row(spec.positions[d]) += delta;
    }
    if (feasible)
      best = std::min(best, margin_of_logits(forward(model, X), task.label));
    for (int i = K - 1; i >= 0; --i) {
      if (++idx[i] < points_per_entry) break;
      idx[i] = 0;
    }
  }
  return best;
}

}  // namespace attnverify
