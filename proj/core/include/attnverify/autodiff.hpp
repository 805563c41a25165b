#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

namespace attnverify {

// Records branch decisions taken on perturbation-dependent quantities during a
// plain-double propagation. Two finite-difference evaluations whose signatures
// differ straddled a kink, so their difference quotient is meaningless.
struct BranchTrace {
  std::uint64_t signature = 1469598103934665603ull;
  std::uint64_t decisions = 0;
  double min_abs = std::numeric_limits<double>::infinity();
  // Smallest nonzero branch distance. Exact-zero distances come from
  // structural ties (identical operands by construction) that stay tied under
  // perturbation, so kink-proximity checks should look at this instead.
  double min_positive = std::numeric_limits<double>::infinity();

  void record(bool taken, double distance) {
    signature ^= taken ? 0x9e3779b97f4a7c15ull : 0xc2b2ae3d27d4eb4full;
    signature *= 1099511628211ull;
    ++decisions;
    if (distance < min_abs) min_abs = distance;
    if (distance > 0.0 && distance < min_positive) min_positive = distance;
  }

  static BranchTrace*& active() {
    thread_local BranchTrace* t = nullptr;
    return t;
  }
};

inline void record_branch(bool taken, double distance) {
  if (BranchTrace* t = BranchTrace::active()) t->record(taken, distance);
}

// Operation tape for reverse-mode differentiation. Nodes store parent indices
// and local partials, evaluated eagerly at record time.
class Tape {
 public:
  struct Node {
    std::int32_t a;
    std::int32_t b;
    double wa;
    double wb;
  };

  std::int32_t leaf() {
    nodes_.push_back({-1, -1, 0.0, 0.0});
    return static_cast<std::int32_t>(nodes_.size()) - 1;
  }

  std::int32_t unary(std::int32_t a, double wa) {
    nodes_.push_back({a, -1, wa, 0.0});
    return static_cast<std::int32_t>(nodes_.size()) - 1;
  }

  std::int32_t binary(std::int32_t a, std::int32_t b, double wa, double wb) {
    nodes_.push_back({a, b, wa, wb});
    return static_cast<std::int32_t>(nodes_.size()) - 1;
  }

  std::size_t size() const { return nodes_.size(); }

  void clear() { nodes_.clear(); }

  void reserve(std::size_t n) { nodes_.reserve(n); }

  // Adjoints of every node with respect to the given output node.
  std::vector<double> adjoints(std::int32_t output) const {
    std::vector<double> bar(nodes_.size(), 0.0);
    if (output < 0) return bar;
    bar[static_cast<std::size_t>(output)] = 1.0;
    for (std::int32_t i = output; i >= 0; --i) {
      const double g = bar[static_cast<std::size_t>(i)];
      if (g == 0.0) continue;
      const Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.a >= 0) bar[static_cast<std::size_t>(n.a)] += n.wa * g;
      if (n.b >= 0) bar[static_cast<std::size_t>(n.b)] += n.wb * g;
    }
    return bar;
  }

  static Tape*& active() {
    thread_local Tape* t = nullptr;
    return t;
  }

  struct Scope {
    explicit Scope(Tape& t) : prev_(active()) { active() = &t; }
    ~Scope() { active() = prev_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* prev_;
  };

 private:
  std::vector<Node> nodes_;
};

// Taped scalar. idx < 0 marks a constant that never touches the tape, so
// mixing with plain double weights costs nothing.
struct Rev {
  double v = 0.0;
  std::int32_t idx = -1;

  Rev() = default;
  Rev(double c) : v(c) {}  // NOLINT: implicit by design
  Rev(double value, std::int32_t node) : v(value), idx(node) {}

  static Rev make_leaf(double value) {
    return Rev(value, Tape::active()->leaf());
  }
};

inline double value_of(double x) { return x; }
inline double value_of(const Rev& x) { return x.v; }

namespace detail {
inline Rev taped(double v, std::int32_t a, double wa) {
  if (a < 0) return Rev(v);
  return Rev(v, Tape::active()->unary(a, wa));
}
inline Rev taped(double v, std::int32_t a, double wa, std::int32_t b, double wb) {
  if (a < 0 && b < 0) return Rev(v);
  if (b < 0) return Rev(v, Tape::active()->unary(a, wa));
  if (a < 0) return Rev(v, Tape::active()->unary(b, wb));
  return Rev(v, Tape::active()->binary(a, b, wa, wb));
}
}  // namespace detail

inline Rev operator+(const Rev& a, const Rev& b) {
  return detail::taped(a.v + b.v, a.idx, 1.0, b.idx, 1.0);
}
inline Rev operator-(const Rev& a, const Rev& b) {
  return detail::taped(a.v - b.v, a.idx, 1.0, b.idx, -1.0);
}
inline Rev operator*(const Rev& a, const Rev& b) {
  return detail::taped(a.v * b.v, a.idx, b.v, b.idx, a.v);
}
inline Rev operator/(const Rev& a, const Rev& b) {
  // Value uses real division so taped results stay bit-identical to the
  // untraced evaluation; only the partials go through the reciprocal.
  const double inv = 1.0 / b.v;
  return detail::taped(a.v / b.v, a.idx, inv, b.idx, -a.v * inv * inv);
}
inline Rev operator-(const Rev& a) { return detail::taped(-a.v, a.idx, -1.0); }

inline Rev operator+(const Rev& a, double b) { return detail::taped(a.v + b, a.idx, 1.0); }
inline Rev operator+(double a, const Rev& b) { return detail::taped(a + b.v, b.idx, 1.0); }
inline Rev operator-(const Rev& a, double b) { return detail::taped(a.v - b, a.idx, 1.0); }
inline Rev operator-(double a, const Rev& b) { return detail::taped(a - b.v, b.idx, -1.0); }
inline Rev operator*(const Rev& a, double b) { return detail::taped(a.v * b, a.idx, b); }
inline Rev operator*(double a, const Rev& b) { return detail::taped(a * b.v, b.idx, a); }
inline Rev operator/(const Rev& a, double b) { return detail::taped(a.v / b, a.idx, 1.0 / b); }
inline Rev operator/(double a, const Rev& b) {
  const double inv = 1.0 / b.v;
  return detail::taped(a / b.v, b.idx, -a * inv * inv);
}

inline Rev& operator+=(Rev& a, const Rev& b) { return a = a + b; }
inline Rev& operator-=(Rev& a, const Rev& b) { return a = a - b; }
inline Rev& operator*=(Rev& a, const Rev& b) { return a = a * b; }

// Generic math used by the propagation core; overloads keep double-only
// instantiations free of tape machinery.
inline double t_exp(double x) { return std::exp(x); }
inline Rev t_exp(const Rev& a) {
  const double e = std::exp(a.v);
  return detail::taped(e, a.idx, e);
}

inline double t_sqrt(double x) { return std::sqrt(x); }
inline Rev t_sqrt(const Rev& a) {
  const double s = std::sqrt(a.v);
  return detail::taped(s, a.idx, s > 0.0 ? 0.5 / s : 0.0);
}

// |x| with the left-limit subgradient (-1) at the kink.
inline double t_abs(double x) {
  record_branch(x > 0.0, std::fabs(x));
  return std::fabs(x);
}
inline Rev t_abs(const Rev& a) {
  record_branch(a.v > 0.0, std::fabs(a.v));
  return detail::taped(std::fabs(a.v), a.idx, a.v > 0.0 ? 1.0 : -1.0);
}

// max/min resolve ties toward the first argument.
inline double t_max(double a, double b) {
  record_branch(a >= b, std::fabs(a - b));
  return a >= b ? a : b;
}
inline Rev t_max(const Rev& a, const Rev& b) {
  record_branch(a.v >= b.v, std::fabs(a.v - b.v));
  return a.v >= b.v ? a : b;
}
inline double t_min(double a, double b) {
  record_branch(a <= b, std::fabs(a - b));
  return a <= b ? a : b;
}
inline Rev t_min(const Rev& a, const Rev& b) {
  record_branch(a.v <= b.v, std::fabs(a.v - b.v));
  return a.v <= b.v ? a : b;
}

// Branch on the sign of a perturbation-dependent quantity.
template <typename T>
inline bool branch_nonneg(const T& x) {
  const double v = value_of(x);
  record_branch(v >= 0.0, std::fabs(v));
  return v >= 0.0;
}

}  // namespace attnverify
