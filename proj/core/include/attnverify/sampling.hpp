#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "attnverify/types.hpp"

namespace attnverify {

// Uniform in [0, 1) from the generator's raw 64-bit output. Bit-level mapping
// is pinned here so streams do not depend on std::uniform_real_distribution.
inline double uniform01(std::mt19937_64& g) {
  return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

inline double uniform_in(std::mt19937_64& g, double lo, double hi) {
  return lo + (hi - lo) * uniform01(g);
}

// Box-Muller; consumes exactly two draws per call.
inline double gaussian(std::mt19937_64& g) {
  double u1 = uniform01(g);
  const double u2 = uniform01(g);
  if (u1 <= 0.0) u1 = 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
}

// One point of the radius-eps p-norm ball in dimension m, appended to out.
//   L1:   exponential-sign direction on the L1 sphere, radius factor u^(1/m)
//   L2:   normalized Gaussian direction, radius factor u^(1/m)
//   Linf: independent uniform coordinates in [-eps, eps]
inline void sample_ball(std::mt19937_64& g, PNorm norm, double eps, int m,
                        std::vector<double>& out) {
  const std::size_t base = out.size();
  out.resize(base + static_cast<std::size_t>(m));
  double* d = out.data() + base;
  switch (norm) {
    case PNorm::Linf: {
      for (int i = 0; i < m; ++i) d[i] = uniform_in(g, -eps, eps);
      return;
    }
    case PNorm::L1: {
      double sum = 0.0;
      for (int i = 0; i < m; ++i) {
        double u = uniform01(g);
        if (u <= 0.0) u = 0x1.0p-53;
        const double e = -std::log(u);
        const double s = uniform01(g) < 0.5 ? -1.0 : 1.0;
        d[i] = s * e;
        sum += e;
      }
      const double r = eps * std::pow(uniform01(g), 1.0 / m);
      for (int i = 0; i < m; ++i) d[i] *= r / sum;
      return;
    }
    case PNorm::L2: {
      double sq = 0.0;
      for (int i = 0; i < m; ++i) {
        d[i] = gaussian(g);
        sq += d[i] * d[i];
      }
      double nrm = std::sqrt(sq);
      if (nrm == 0.0) nrm = 1.0;
      const double r = eps * std::pow(uniform01(g), 1.0 / m);
      for (int i = 0; i < m; ++i) d[i] *= r / nrm;
      return;
    }
  }
}

}  // namespace attnverify
