#pragma once

#include <string>

#include "attnverify/errors.hpp"

namespace attnverify {

enum class PNorm { L1, L2, Linf };

enum class Pooling { Mean, FirstToken };

enum class Strategy { Baseline, Dual, Rule, Optimized };

enum class Verdict { Verified, Unknown, Unverifiable };

// Which bound of a bilinear product a plane or alpha belongs to.
enum class Side { Upper, Lower };

// The two bilinear products inside an attention layer.
enum class MatmulKind { QK, AV };

inline std::string to_string(PNorm n) {
  switch (n) {
    case PNorm::L1: return "l1";
    case PNorm::L2: return "l2";
    case PNorm::Linf: return "linf";
  }
  return "?";
}

inline PNorm pnorm_from_string(const std::string& s) {
  if (s == "l1") return PNorm::L1;
  if (s == "l2") return PNorm::L2;
  if (s == "linf") return PNorm::Linf;
  throw ValueError("unknown norm '" + s + "' (expected l1, l2, linf)");
}

inline std::string to_string(Pooling p) {
  return p == Pooling::Mean ? "mean" : "first_token";
}

inline Pooling pooling_from_string(const std::string& s) {
  if (s == "mean") return Pooling::Mean;
  if (s == "first_token") return Pooling::FirstToken;
  throw ValueError("unknown pooling '" + s + "' (expected mean, first_token)");
}

inline std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::Baseline: return "baseline";
    case Strategy::Dual: return "dual";
    case Strategy::Rule: return "rule";
    case Strategy::Optimized: return "opt";
  }
  return "?";
}

inline Strategy strategy_from_string(const std::string& s) {
  if (s == "baseline") return Strategy::Baseline;
  if (s == "dual") return Strategy::Dual;
  if (s == "rule") return Strategy::Rule;
  if (s == "opt" || s == "optimized") return Strategy::Optimized;
  throw ValueError("unknown strategy '" + s + "' (expected baseline, dual, rule, opt)");
}

inline std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::Verified: return "Verified";
    case Verdict::Unknown: return "Unknown";
    case Verdict::Unverifiable: return "Unverifiable";
  }
  return "?";
}

}  // namespace attnverify
