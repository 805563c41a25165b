#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <limits>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "attnverify/io.hpp"
#include "attnverify/model.hpp"
#include "attnverify/verifier.hpp"
#include "json.hpp"

namespace av = attnverify;
using nlohmann::json;

namespace {

constexpr int kExitVerified = 0;
constexpr int kExitUnknown = 1;
constexpr int kExitUnverifiable = 2;
constexpr int kExitUsage = 3;
constexpr int kExitInternal = 4;

enum class LogLevel { Error = 0, Info = 1, Debug = 2 };

LogLevel log_level() {
  static const LogLevel level = [] {
    const char* env = std::getenv("ATTNVERIFY_LOG");
    if (!env) return LogLevel::Error;
    const std::string s(env);
    if (s == "debug") return LogLevel::Debug;
    if (s == "info") return LogLevel::Info;
    return LogLevel::Error;
  }();
  return level;
}

std::mutex g_log_mutex;

void log_info(const std::string& msg) {
  if (log_level() < LogLevel::Info) return;
  std::lock_guard<std::mutex> lock(g_log_mutex);
  std::cerr << "[info] " << msg << "\n";
}

void log_debug(const std::string& msg) {
  if (log_level() < LogLevel::Debug) return;
  std::lock_guard<std::mutex> lock(g_log_mutex);
  std::cerr << "[debug] " << msg << "\n";
}

json num_or_null(double v) {
  if (std::isfinite(v)) return json(v);
  return json(nullptr);
}

json interval_json(const av::IntervalVec<double>& iv) {
  json lo = json::array();
  json hi = json::array();
  for (double v : iv.lo) lo.push_back(num_or_null(v));
  for (double v : iv.hi) hi.push_back(num_or_null(v));
  return json{{"lo", std::move(lo)}, {"hi", std::move(hi)}};
}

json alpha_json(const av::AlphaStats& s) {
  return json{{"sites", s.count},     {"min", s.min},
              {"mean", s.mean},       {"max", s.max},
              {"frac_zero", s.frac_zero}, {"frac_one", s.frac_one}};
}

void emit(const json& j, const std::string& out_path) {
  const std::string text = j.dump(2) + "\n";
  if (out_path.empty()) {
    std::cout << text;
  } else {
    std::ofstream f(out_path);
    if (!f) throw av::ParseError("cannot open '" + out_path + "' for writing");
    f << text;
  }
}

void emit_text(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << text;
  } else {
    std::ofstream f(out_path);
    if (!f) throw av::ParseError("cannot open '" + out_path + "' for writing");
    f << text;
  }
}

// Shared task options. Positions default to every row of the input.
struct TaskArgs {
  std::string model_path;
  std::string input_path;
  std::vector<int> positions;
  double eps = 0.1;
  std::string norm = "linf";
  int label = -2;  // -2: take the file's label, else the clean prediction
};

struct StrategyArgs {
  std::string strategy = "baseline";
  int steps = 100;
  double lr = 0.05;
  std::string init = "zero";
  std::uint64_t seed = 0;
};

void add_task_flags(CLI::App* cmd, TaskArgs& a, bool with_eps,
                    bool require_io = true) {
  cmd->add_option("--model", a.model_path, "model JSON file")->required(require_io);
  cmd->add_option("--input", a.input_path, "input JSON file")->required(require_io);
  cmd->add_option("--positions", a.positions,
                  "perturbed row indices, 0-based (default: all rows)")
      ->delimiter(',');
  if (with_eps) cmd->add_option("--eps", a.eps, "perturbation radius");
  cmd->add_option("--norm", a.norm, "ball norm: l1, l2, linf")
      ->check(CLI::IsMember({"l1", "l2", "linf"}));
  cmd->add_option("--label", a.label, "true label (default: from input file)");
}

void add_strategy_flags(CLI::App* cmd, StrategyArgs& a) {
  cmd->add_option("--strategy", a.strategy,
                  "bounding strategy: baseline, dual, rule, opt")
      ->check(CLI::IsMember({"baseline", "dual", "rule", "opt"}));
  cmd->add_option("--steps", a.steps, "optimizer step budget (opt only)");
  cmd->add_option("--lr", a.lr, "optimizer learning rate (opt only)");
  cmd->add_option("--init", a.init, "optimizer start point: zero, random, one")
      ->check(CLI::IsMember({"zero", "random", "one"}));
  cmd->add_option("--seed", a.seed, "seed for random initialization");
}

av::OptimizerConfig optimizer_config(const StrategyArgs& a) {
  av::OptimizerConfig oc;
  oc.max_steps = a.steps;
  oc.lr = a.lr;
  oc.init = av::alpha_init_from_string(a.init);
  oc.seed = a.seed;
  return oc;
}

struct LoadedTask {
  av::Model model;
  Eigen::MatrixXd X;
  std::vector<int> positions;
  int label = -1;
};

LoadedTask load_task(const TaskArgs& a) {
  LoadedTask t;
  log_info("loading model " + a.model_path);
  t.model = av::load_model(a.model_path);
  log_info("loading input " + a.input_path);
  const av::LabeledInput in = av::load_input(a.input_path);
  t.X = in.X;
  if (a.label >= -1) {
    t.label = a.label;
  } else if (in.label) {
    t.label = *in.label;
  } else {
    t.label = -1;  // infer from the clean prediction
  }
  t.positions = a.positions;
  if (t.positions.empty()) {
    t.positions.resize(static_cast<std::size_t>(t.X.rows()));
    for (std::size_t i = 0; i < t.positions.size(); ++i)
      t.positions[i] = static_cast<int>(i);
  }
  return t;
}

// Runs fn(0..num_tasks) across a small worker pool; rethrows the first error.
template <typename Fn>
void run_parallel(int jobs, int num_tasks, const Fn& fn) {
  jobs = std::max(1, std::min(jobs, num_tasks));
  if (jobs <= 1) {
    for (int i = 0; i < num_tasks; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> workers;
  workers.reserve(static_cast<std::size_t>(jobs));
  for (int w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      for (;;) {
        const int i = next.fetch_add(1);
        if (i >= num_tasks) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& w : workers) w.join();
  if (error) std::rethrow_exception(error);
}

int run_verify(const TaskArgs& ta, const StrategyArgs& sa, const std::string& out_path,
               bool no_timing, bool mutate) {
  const LoadedTask lt = load_task(ta);
  const av::VerificationTask task =
      av::make_task(lt.model, lt.X, lt.positions, ta.eps,
                    av::pnorm_from_string(ta.norm), lt.label);
  const av::Strategy strategy = av::strategy_from_string(sa.strategy);
  av::EngineOptions engine;
  engine.corrupt_bounds = mutate;
  log_info("verifying with strategy " + sa.strategy + " at eps " +
           av::format_double(ta.eps));
  const av::Report rep = av::verify(lt.model, task, strategy, optimizer_config(sa), engine);

  json j;
  j["schema_version"] = 1;
  j["command"] = "verify";
  j["model"] = ta.model_path;
  j["input"] = ta.input_path;
  j["task"] = json{{"positions", task.spec.positions},
                   {"epsilon", task.spec.epsilon},
                   {"norm", av::to_string(task.spec.norm)},
                   {"label", task.label}};
  j["strategy"] = av::to_string(strategy);
  j["verdict"] = av::to_string(rep.verdict);
  j["margin_lower_bound"] = num_or_null(rep.margin_lb);
  j["worst_class"] = rep.worst_class >= 0 ? json(rep.worst_class) : json(nullptr);
  j["logits"] = interval_json(rep.logits);
  j["alpha"] = alpha_json(rep.alpha_stats);
  j["blown"] = rep.blown;
  if (strategy == av::Strategy::Optimized) {
    json trace = json::array();
    for (double v : rep.trace) trace.push_back(num_or_null(v));
    j["optimizer"] = json{{"steps_taken", rep.steps_taken},
                          {"early_stopped", rep.early_stopped},
                          {"margin_trace", std::move(trace)}};
  }
  if (!rep.note.empty()) j["note"] = rep.note;
  if (!no_timing) j["wall_time_seconds"] = rep.wall_time_seconds;
  emit(j, out_path);

  switch (rep.verdict) {
    case av::Verdict::Verified:
      return kExitVerified;
    case av::Verdict::Unknown:
      return kExitUnknown;
    case av::Verdict::Unverifiable:
      return kExitUnverifiable;
  }
  return kExitInternal;
}

std::string csv_time(double seconds, bool no_timing) {
  return av::format_double(no_timing ? 0.0 : seconds);
}

int run_search(const TaskArgs& ta, const StrategyArgs& sa, int num_iters, int jobs,
               const std::string& out_path, bool no_timing,
               std::optional<double> oracle_threshold) {
  std::ostringstream csv;
  csv << "task_id,position,strategy,certified_eps,bracket_hi,doubling_calls,"
         "bisection_calls,wall_time_seconds\n";

  if (oracle_threshold) {
    // Synthetic mode: the verifier is replaced by a fixed threshold predicate.
    const double t = *oracle_threshold;
    const auto start = std::chrono::steady_clock::now();
    const av::SearchResult res = av::search_max_eps(
        [t](double eps) { return eps <= t; }, num_iters);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    csv << "0,-1," << sa.strategy << "," << av::format_double(res.certified_eps) << ","
        << av::format_double(res.bracket_hi) << "," << res.doubling_calls << ","
        << res.bisection_calls << "," << csv_time(secs, no_timing) << "\n";
    emit_text(csv.str(), out_path);
    return kExitVerified;
  }

  const LoadedTask lt = load_task(ta);
  const av::Strategy strategy = av::strategy_from_string(sa.strategy);
  const av::OptimizerConfig oc = optimizer_config(sa);
  const av::PNorm norm = av::pnorm_from_string(ta.norm);

  struct Row {
    av::SearchResult res;
    double seconds = 0.0;
  };
  std::vector<Row> rows(lt.positions.size());
  run_parallel(jobs, static_cast<int>(lt.positions.size()), [&](int i) {
    const av::VerificationTask task =
        av::make_task(lt.model, lt.X, {lt.positions[static_cast<std::size_t>(i)]},
                      0.0, norm, lt.label);
    log_debug("searching position " + std::to_string(lt.positions[i]));
    const auto start = std::chrono::steady_clock::now();
    rows[static_cast<std::size_t>(i)].res =
        av::search_max_eps(lt.model, task, strategy, oc, num_iters);
    rows[static_cast<std::size_t>(i)].seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  });

  for (std::size_t i = 0; i < rows.size(); ++i) {
    const av::SearchResult& r = rows[i].res;
    csv << i << "," << lt.positions[i] << "," << sa.strategy << ","
        << av::format_double(r.certified_eps) << "," << av::format_double(r.bracket_hi)
        << "," << r.doubling_calls << "," << r.bisection_calls << ","
        << csv_time(rows[i].seconds, no_timing) << "\n";
  }
  emit_text(csv.str(), out_path);
  return kExitVerified;
}

int run_compare(const TaskArgs& ta, const StrategyArgs& sa,
                std::vector<std::string> strategies, int num_iters, int jobs,
                const std::string& out_path, bool no_timing) {
  if (strategies.empty()) strategies = {"baseline", "opt"};
  std::vector<av::Strategy> parsed;
  parsed.reserve(strategies.size());
  for (const auto& s : strategies) parsed.push_back(av::strategy_from_string(s));

  const LoadedTask lt = load_task(ta);
  const av::OptimizerConfig oc = optimizer_config(sa);
  const av::PNorm norm = av::pnorm_from_string(ta.norm);

  const int P = static_cast<int>(lt.positions.size());
  const int S = static_cast<int>(parsed.size());
  struct Cell {
    av::SearchResult res;
    double seconds = 0.0;
  };
  std::vector<Cell> cells(static_cast<std::size_t>(P) * S);
  run_parallel(jobs, P * S, [&](int t) {
    const int pi = t / S;
    const int si = t % S;
    const av::VerificationTask task = av::make_task(
        lt.model, lt.X, {lt.positions[static_cast<std::size_t>(pi)]}, 0.0, norm,
        lt.label);
    const auto start = std::chrono::steady_clock::now();
    cells[static_cast<std::size_t>(t)].res =
        av::search_max_eps(lt.model, task, parsed[static_cast<std::size_t>(si)], oc,
                           num_iters);
    cells[static_cast<std::size_t>(t)].seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  });

  std::ostringstream csv;
  csv << "task_id,position,strategy,certified_eps,eps_ratio,doubling_calls,"
         "bisection_calls,wall_time_seconds,time_ratio\n";
  for (int pi = 0; pi < P; ++pi) {
    const Cell& base = cells[static_cast<std::size_t>(pi) * S];
    for (int si = 0; si < S; ++si) {
      const Cell& c = cells[static_cast<std::size_t>(pi) * S + si];
      // Ratio of certified radii against the first strategy listed.
      double ratio;
      if (c.res.certified_eps == base.res.certified_eps) {
        ratio = 1.0;
      } else if (base.res.certified_eps > 0.0) {
        ratio = c.res.certified_eps / base.res.certified_eps;
      } else {
        ratio = std::numeric_limits<double>::infinity();
      }
      const double tratio =
          no_timing ? 0.0
                    : (base.seconds > 0.0 ? c.seconds / base.seconds : 0.0);
      csv << pi << "," << lt.positions[static_cast<std::size_t>(pi)] << ","
          << strategies[static_cast<std::size_t>(si)] << ","
          << av::format_double(c.res.certified_eps) << "," << av::format_double(ratio)
          << "," << c.res.doubling_calls << "," << c.res.bisection_calls << ","
          << csv_time(c.seconds, no_timing) << "," << av::format_double(tratio) << "\n";
    }
  }
  emit_text(csv.str(), out_path);
  return kExitVerified;
}

int run_check(const TaskArgs& ta, const StrategyArgs& sa, long long samples,
              std::uint64_t sample_seed, double tol, const std::string& out_path,
              bool no_timing, bool mutate) {
  const LoadedTask lt = load_task(ta);
  const av::VerificationTask task =
      av::make_task(lt.model, lt.X, lt.positions, ta.eps,
                    av::pnorm_from_string(ta.norm), lt.label);
  const av::Strategy strategy = av::strategy_from_string(sa.strategy);
  av::EngineOptions engine;
  engine.corrupt_bounds = mutate;
  const av::Report rep = av::verify(lt.model, task, strategy, optimizer_config(sa), engine);
  log_info("sampling " + std::to_string(samples) + " perturbations");
  const av::SoundnessReport sound = av::soundness_sample_check(
      lt.model, task, rep.logits, rep.margin_lb, samples, sample_seed, tol);

  json j;
  j["schema_version"] = 1;
  j["command"] = "check";
  j["strategy"] = av::to_string(strategy);
  j["verdict"] = av::to_string(rep.verdict);
  j["margin_lower_bound"] = num_or_null(rep.margin_lb);
  j["samples"] = sound.samples;
  j["violations"] = sound.violations;
  j["min_margin_slack"] = num_or_null(sound.min_margin_slack);
  j["min_logit_slack"] = num_or_null(sound.min_logit_slack);
  j["tolerance"] = tol;
  if (!rep.note.empty()) j["note"] = rep.note;
  if (!no_timing) j["wall_time_seconds"] = rep.wall_time_seconds;
  emit(j, out_path);

  if (rep.verdict == av::Verdict::Unverifiable) return kExitUnverifiable;
  return sound.violations == 0 ? kExitVerified : kExitUnknown;
}

int run_genmodel(const av::ModelConfig& cfg, std::uint64_t seed,
                 const std::string& out_path, const std::string& input_path,
                 std::uint64_t input_seed) {
  const av::Model model = av::generate_random_model(cfg, seed);
  av::save_model(model, out_path);
  log_info("wrote model " + out_path);
  if (!input_path.empty()) {
    const Eigen::MatrixXd X = av::generate_random_input(cfg, input_seed);
    const Eigen::VectorXd logits = av::forward(model, X);
    int label = 0;
    for (int c = 1; c < logits.size(); ++c)
      if (logits(c) > logits(label)) label = c;
    av::save_input(input_path, X, label);
    log_info("wrote input " + input_path + " with label " + std::to_string(label));
  }
  return kExitVerified;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Certified robustness bounds for small transformer classifiers"};
  app.require_subcommand(1);
  int rc = kExitVerified;

  TaskArgs ta;
  StrategyArgs sa;
  std::string out_path;
  bool no_timing = false;
  bool mutate = false;
  int num_iters = 20;
  int jobs = 1;
  long long samples = 10000;
  std::uint64_t sample_seed = 0;
  double tol = 1e-9;
  double oracle_threshold = -1.0;
  std::vector<std::string> strategies;

  CLI::App* verify = app.add_subcommand("verify", "bound one perturbation task");
  add_task_flags(verify, ta, /*with_eps=*/true);
  add_strategy_flags(verify, sa);
  verify->add_option("--out", out_path, "write the JSON report here");
  verify->add_flag("--no-timing", no_timing, "omit wall-clock fields");
  verify->add_flag("--mutate", mutate)->group("");  // corruption hook for tests
  verify->callback([&] { rc = run_verify(ta, sa, out_path, no_timing, mutate); });

  CLI::App* search = app.add_subcommand(
      "search", "largest certified radius per position (CSV)");
  add_task_flags(search, ta, /*with_eps=*/false, /*require_io=*/false);
  add_strategy_flags(search, sa);
  search->add_option("--num-iters", num_iters, "bisection iterations");
  search->add_option("--jobs", jobs, "worker threads across tasks");
  search->add_option("--out", out_path, "write the CSV here");
  search->add_flag("--no-timing", no_timing, "zero the wall-clock column");
  search->add_option("--oracle-threshold", oracle_threshold)->group("");
  search->callback([&] {
    std::optional<double> thr;
    if (oracle_threshold >= 0.0) thr = oracle_threshold;
    if (!thr && (ta.model_path.empty() || ta.input_path.empty())) {
      throw CLI::RequiredError("--model and --input");
    }
    rc = run_search(ta, sa, num_iters, jobs, out_path, no_timing, thr);
  });

  CLI::App* compare = app.add_subcommand(
      "compare", "search with several strategies and report ratios (CSV)");
  add_task_flags(compare, ta, /*with_eps=*/false);
  add_strategy_flags(compare, sa);
  compare->add_option("--strategies", strategies, "comma list, first is the reference")
      ->delimiter(',');
  compare->add_option("--num-iters", num_iters, "bisection iterations");
  compare->add_option("--jobs", jobs, "worker threads across tasks");
  compare->add_option("--out", out_path, "write the CSV here");
  compare->add_flag("--no-timing", no_timing, "zero the wall-clock columns");
  compare->callback([&] {
    rc = run_compare(ta, sa, strategies, num_iters, jobs, out_path, no_timing);
  });

  CLI::App* check = app.add_subcommand(
      "check", "verify, then sample perturbations against the certified bounds");
  add_task_flags(check, ta, /*with_eps=*/true);
  add_strategy_flags(check, sa);
  check->add_option("--samples", samples, "number of sampled perturbations");
  check->add_option("--sample-seed", sample_seed, "sampling seed");
  check->add_option("--tol", tol, "containment tolerance");
  check->add_option("--out", out_path, "write the JSON summary here");
  check->add_flag("--no-timing", no_timing, "omit wall-clock fields");
  check->add_flag("--mutate", mutate)->group("");  // corruption hook for tests
  check->callback([&] {
    rc = run_check(ta, sa, samples, sample_seed, tol, out_path, no_timing, mutate);
  });

  av::ModelConfig gen_cfg;
  std::uint64_t gen_seed = 0;
  std::uint64_t gen_input_seed = 1;
  std::string gen_out = "model.json";
  std::string gen_input_out;
  std::string gen_pooling = "mean";
  CLI::App* gen = app.add_subcommand("genmodel", "write a random model file");
  gen->add_option("--layers", gen_cfg.num_layers, "encoder layers");
  gen->add_option("--heads", gen_cfg.num_heads, "attention heads");
  gen->add_option("--seq-len", gen_cfg.seq_len, "token positions");
  gen->add_option("--hidden", gen_cfg.hidden_size, "embedding width");
  gen->add_option("--head-dim", gen_cfg.head_dim, "per-head width");
  gen->add_option("--ffn", gen_cfg.ffn_hidden, "feed-forward width");
  gen->add_option("--classes", gen_cfg.num_classes, "output classes");
  gen->add_option("--pooling", gen_pooling, "mean or first_token")
      ->check(CLI::IsMember({"mean", "first_token"}));
  gen->add_flag("--output-projection", gen_cfg.use_output_projection,
                "draw a random output projection instead of identity");
  gen->add_option("--seed", gen_seed, "weight seed");
  gen->add_option("--out", gen_out, "model file to write");
  gen->add_option("--gen-input", gen_input_out, "also write a labeled input here");
  gen->add_option("--input-seed", gen_input_seed, "input seed");
  gen->callback([&] {
    gen_cfg.pooling = av::pooling_from_string(gen_pooling);
    rc = run_genmodel(gen_cfg, gen_seed, gen_out, gen_input_out, gen_input_seed);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int r = app.exit(e);
    return r == 0 ? 0 : kExitUsage;
  } catch (const av::GradientError& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInternal;
  } catch (const av::SearchError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const av::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
  return rc;
}
