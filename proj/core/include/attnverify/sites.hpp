#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "attnverify/model.hpp"
#include "attnverify/types.hpp"

namespace attnverify {

// One bilinear scalar product inside an attention layer. For QK products the
// contraction index h runs over head dimensions; for AV products it runs over
// sequence positions.
struct SiteKey {
  int layer = 0;
  int head = 0;
  MatmulKind kind = MatmulKind::QK;
  int i = 0;  // output row
  int j = 0;  // output column
  int h = 0;  // contraction index
};

inline std::string to_string(const SiteKey& k, Side side) {
  return "layer " + std::to_string(k.layer) + ", head " + std::to_string(k.head) +
         ", " + (k.kind == MatmulKind::QK ? "QK" : "AV") + "(" + std::to_string(k.i) +
         "," + std::to_string(k.j) + "," + std::to_string(k.h) + "), " +
         (side == Side::Upper ? "upper" : "lower");
}

// Fixed flat layout of every (site, side) pair for a model configuration.
// Per layer and head: first the QK block (i < n, j < n, h < d_k), then the AV
// block (i < n, j < d_k, h < n); both enumerate (i, j, h, side) row-major with
// the side fastest. The two blocks have equal size 2*n*n*d_k.
class SiteIndexer {
 public:
  SiteIndexer() = default;
  explicit SiteIndexer(const ModelConfig& c)
      : layers_(c.num_layers), heads_(c.num_heads), n_(c.seq_len), dk_(c.head_dim) {}

  std::size_t size() const {
    return static_cast<std::size_t>(layers_) * heads_ * 2 * block_size();
  }

  std::size_t flat(const SiteKey& k, Side side) const {
    const std::size_t block =
        (static_cast<std::size_t>(k.layer) * heads_ + k.head) * 2 +
        (k.kind == MatmulKind::QK ? 0 : 1);
    const int J = k.kind == MatmulKind::QK ? n_ : dk_;
    const int H = k.kind == MatmulKind::QK ? dk_ : n_;
    const std::size_t inner =
        ((static_cast<std::size_t>(k.i) * J + k.j) * H + k.h) * 2 +
        (side == Side::Upper ? 0 : 1);
    return block * block_size() + inner;
  }

  std::pair<SiteKey, Side> unflat(std::size_t flat) const {
    SiteKey k;
    const std::size_t block = flat / block_size();
    std::size_t inner = flat % block_size();
    k.kind = (block % 2 == 0) ? MatmulKind::QK : MatmulKind::AV;
    k.head = static_cast<int>((block / 2) % heads_);
    k.layer = static_cast<int>(block / 2 / heads_);
    const int J = k.kind == MatmulKind::QK ? n_ : dk_;
    const int H = k.kind == MatmulKind::QK ? dk_ : n_;
    const Side side = (inner % 2 == 0) ? Side::Upper : Side::Lower;
    inner /= 2;
    k.h = static_cast<int>(inner % H);
    inner /= H;
    k.j = static_cast<int>(inner % J);
    k.i = static_cast<int>(inner / J);
    return {k, side};
  }

  bool operator==(const SiteIndexer& other) const {
    return layers_ == other.layers_ && heads_ == other.heads_ && n_ == other.n_ &&
           dk_ == other.dk_;
  }

 private:
  std::size_t block_size() const {
    return 2ull * n_ * n_ * dk_;
  }

  int layers_ = 0;
  int heads_ = 0;
  int n_ = 0;
  int dk_ = 0;
};

// A value in [0, 1] for every (site, side).
struct AlphaAssignment {
  SiteIndexer layout;
  std::vector<double> values;

  double at(const SiteKey& k, Side side) const { return values[layout.flat(k, side)]; }
  double& at(const SiteKey& k, Side side) { return values[layout.flat(k, side)]; }
};

struct AlphaStats {
  std::size_t count = 0;
  double min = 0.0;
  double mean = 0.0;
  double max = 0.0;
  double frac_zero = 0.0;
  double frac_one = 0.0;
};

inline AlphaStats alpha_stats(const std::vector<double>& values) {
  AlphaStats s;
  s.count = values.size();
  if (values.empty()) return s;
  s.min = values[0];
  s.max = values[0];
  double sum = 0.0;
  std::size_t zeros = 0;
  std::size_t ones = 0;
  for (double v : values) {
    if (v < s.min) s.min = v;
    if (v > s.max) s.max = v;
    sum += v;
    if (v == 0.0) ++zeros;
    if (v == 1.0) ++ones;
  }
  s.mean = sum / static_cast<double>(values.size());
  s.frac_zero = static_cast<double>(zeros) / static_cast<double>(values.size());
  s.frac_one = static_cast<double>(ones) / static_cast<double>(values.size());
  return s;
}

}  // namespace attnverify
