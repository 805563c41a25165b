#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "attnverify/bounds.hpp"
#include "attnverify/model.hpp"
#include "attnverify/relaxations.hpp"
#include "attnverify/sites.hpp"
#include "attnverify/strategies.hpp"

namespace attnverify {

struct EngineOptions {
  // Test hook: reports the margin's upper bound as its certified lower bound.
  // Any sampled perturbation then refutes the certificate, which the sampling
  // checks must flag.
  bool corrupt_bounds = false;
  // Interval magnitudes beyond this abort the propagation with an untightened
  // (-inf) margin instead of feeding overflow into downstream relaxations.
  double magnitude_limit = 1e150;
  // exp relaxations refuse score bounds beyond this (exp would overflow).
  double exp_input_limit = 700.0;
};

namespace detail {
struct BlowupSignal {};

template <typename T>
void guard_magnitude(const IntervalVec<T>& iv, const EngineOptions& opts) {
  for (const T& v : iv.lo) {
    const double x = value_of(v);
    if (!std::isfinite(x) || std::fabs(x) > opts.magnitude_limit) throw BlowupSignal{};
  }
  for (const T& v : iv.hi) {
    const double x = value_of(v);
    if (!std::isfinite(x) || std::fabs(x) > opts.magnitude_limit) throw BlowupSignal{};
  }
}
}  // namespace detail

// Where a propagation gets its alpha for each (site, side).
template <typename T>
struct AlphaSource {
  enum class Kind { Constant, External, Rule };
  Kind kind = Kind::Constant;
  double constant = 0.0;
  const std::vector<T>* external = nullptr;
  SiteIndexer layout;
  std::vector<double>* record = nullptr;

  static AlphaSource constant_source(const ModelConfig& config, double value) {
    AlphaSource s;
    s.kind = Kind::Constant;
    s.constant = value;
    s.layout = SiteIndexer(config);
    return s;
  }

  static AlphaSource external_source(const ModelConfig& config,
                                     const std::vector<T>& values) {
    AlphaSource s;
    s.kind = Kind::External;
    s.external = &values;
    s.layout = SiteIndexer(config);
    return s;
  }

  static AlphaSource rule_source(const ModelConfig& config) {
    AlphaSource s;
    s.kind = Kind::Rule;
    s.layout = SiteIndexer(config);
    return s;
  }

  T alpha(const SiteKey& key, Side side, const Interval<T>& q,
          const Interval<T>& k) const {
    T a{};
    switch (kind) {
      case Kind::Constant:
        a = T(constant);
        break;
      case Kind::External:
        a = (*external)[layout.flat(key, side)];
        break;
      case Kind::Rule: {
        const Interval<T> range = relu_input_interval(q, k, side);
        a = T(rule_alpha(value_of(range.lo), value_of(range.hi)));
        break;
      }
    }
    if (record) (*record)[layout.flat(key, side)] = value_of(a);
    return a;
  }
};

namespace detail {

// Substitutes one factor of a planar bound by the matching affine side:
// positive coefficients keep the side being built, negative ones swap.
template <typename T>
void accumulate_factor(Side side, const T& coef, const AffineBoundPair<T>& X, int xi,
                       T* omega_out, T& theta_out) {
  const int K = X.num_inputs;
  const bool nonneg = branch_nonneg(coef);
  const bool use_hi = (side == Side::Upper) ? nonneg : !nonneg;
  const T* w = (use_hi ? X.omega_hi : X.omega_lo).data() +
               static_cast<std::size_t>(xi) * K;
  for (int k = 0; k < K; ++k) omega_out[k] += coef * w[k];
  theta_out += coef * (use_hi ? X.theta_hi[xi] : X.theta_lo[xi]);
}

}  // namespace detail

// Bilinear product bounds for out = A*B (or A*B^T): every scalar product
// A(i,h)*B(h,j) is replaced by its alpha-interpolated planes over the current
// concretized box, then the plane coefficients are substituted by the affine
// bounds of the factors and summed over the contraction index.
template <typename T>
AffineBoundPair<T> matmul_bounds(const AffineBoundPair<T>& A, const AffineBoundPair<T>& B,
                                 bool b_transposed, const IntervalVec<T>& A_int,
                                 const IntervalVec<T>& B_int, int layer, int head,
                                 MatmulKind kind, const AlphaSource<T>& alphas,
                                 const EngineOptions& opts = {}) {
  const int R = A.rows;
  const int C = A.cols;
  const int S = b_transposed ? B.rows : B.cols;
  if ((b_transposed ? B.cols : B.rows) != C)
    throw ShapeError("matmul_bounds: contraction dimension mismatch");
  if (A.num_inputs != B.num_inputs)
    throw ShapeError("matmul_bounds: input width mismatch");

  const int K = A.num_inputs;
  AffineBoundPair<T> out = AffineBoundPair<T>::zeros(R, S, K);
  for (int i = 0; i < R; ++i) {
    for (int j = 0; j < S; ++j) {
      const int o = out.at(i, j);
      T* olo = out.omega_lo.data() + static_cast<std::size_t>(o) * K;
      T* ohi = out.omega_hi.data() + static_cast<std::size_t>(o) * K;
      T tlo = T(0.0);
      T thi = T(0.0);
      for (int h = 0; h < C; ++h) {
        const int ai = A.at(i, h);
        const int bi = b_transposed ? B.at(j, h) : B.at(h, j);
        const Interval<T> q = A_int.interval(ai);
        const Interval<T> k = B_int.interval(bi);
        const SiteKey key{layer, head, kind, i, j, h};

        {
          const T a = alphas.alpha(key, Side::Upper, q, k);
          const PlanarBound<T> p = alpha_plane(q, k, Side::Upper, a);
          detail::accumulate_factor(Side::Upper, p.coef_x, A, ai, ohi, thi);
          detail::accumulate_factor(Side::Upper, p.coef_y, B, bi, ohi, thi);
          thi += p.constant;
        }
        {
          const T a = alphas.alpha(key, Side::Lower, q, k);
          const PlanarBound<T> p = alpha_plane(q, k, Side::Lower, a);
          detail::accumulate_factor(Side::Lower, p.coef_x, A, ai, olo, tlo);
          detail::accumulate_factor(Side::Lower, p.coef_y, B, bi, olo, tlo);
          tlo += p.constant;
        }
      }
      out.theta_lo[o] = tlo;
      out.theta_hi[o] = thi;
    }
  }
  return out;
}

// Row-wise softmax bounds: exp relaxation per score, exact row sum for the
// denominator, reciprocal relaxation on its concretized (strictly positive)
// interval, and a primary-plane (alpha = 0) bilinear product of numerator and
// reciprocal. Throws UnverifiableError when the denominator bound reaches 0.
template <typename T>
AffineBoundPair<T> softmax_bounds(const AffineBoundPair<T>& S, const IntervalVec<T>& S_int,
                                  const PerturbationSpec& spec,
                                  const EngineOptions& opts = {}) {
  const int num = S.num_outputs();
  for (int e = 0; e < num; ++e) {
    const double lo = value_of(S_int.lo[e]);
    const double hi = value_of(S_int.hi[e]);
    if (!std::isfinite(lo) || !std::isfinite(hi) ||
        std::fabs(lo) > opts.exp_input_limit || std::fabs(hi) > opts.exp_input_limit)
      throw detail::BlowupSignal{};
  }

  std::vector<LinearRelaxation<T>> exp_relax;
  exp_relax.reserve(num);
  for (int e = 0; e < num; ++e) exp_relax.push_back(exp_relaxation(S_int.interval(e)));
  const AffineBoundPair<T> E = propagate_unary(S, exp_relax);

  const AffineBoundPair<T> denom = row_sums(E);
  const IntervalVec<T> denom_int = concretize(denom, spec);
  detail::guard_magnitude(denom_int, opts);
  for (int i = 0; i < denom.rows; ++i) {
    if (!(value_of(denom_int.lo[i]) > 0.0))
      throw UnverifiableError(
          "softmax denominator lower bound is not positive at row " +
          std::to_string(i));
  }

  std::vector<LinearRelaxation<T>> recip_relax;
  recip_relax.reserve(denom.rows);
  for (int i = 0; i < denom.rows; ++i)
    recip_relax.push_back(reciprocal_relaxation(denom_int.interval(i)));
  const AffineBoundPair<T> recip = propagate_unary(denom, recip_relax);

  const IntervalVec<T> E_int = concretize(E, spec);
  const IntervalVec<T> recip_int = concretize(recip, spec);
  detail::guard_magnitude(E_int, opts);
  detail::guard_magnitude(recip_int, opts);

  const int K = S.num_inputs;
  AffineBoundPair<T> out = AffineBoundPair<T>::zeros(S.rows, S.cols, K);
  for (int i = 0; i < S.rows; ++i) {
    for (int j = 0; j < S.cols; ++j) {
      const int o = out.at(i, j);
      T* olo = out.omega_lo.data() + static_cast<std::size_t>(o) * K;
      T* ohi = out.omega_hi.data() + static_cast<std::size_t>(o) * K;
      T tlo = T(0.0);
      T thi = T(0.0);
      const Interval<T> q = E_int.interval(E.at(i, j));
      const Interval<T> k = recip_int.interval(i);
      {
        const PlanarBound<T> p = alpha_plane(q, k, Side::Upper, T(0.0));
        detail::accumulate_factor(Side::Upper, p.coef_x, E, E.at(i, j), ohi, thi);
        detail::accumulate_factor(Side::Upper, p.coef_y, recip, i, ohi, thi);
        thi += p.constant;
      }
      {
        const PlanarBound<T> p = alpha_plane(q, k, Side::Lower, T(0.0));
        detail::accumulate_factor(Side::Lower, p.coef_x, E, E.at(i, j), olo, tlo);
        detail::accumulate_factor(Side::Lower, p.coef_y, recip, i, olo, tlo);
        tlo += p.constant;
      }
      out.theta_lo[o] = tlo;
      out.theta_hi[o] = thi;
    }
  }
  return out;
}

template <typename T>
struct NetworkBounds {
  T margin_lb{};
  IntervalVec<T> logits;       // concretized, 1 x c
  int worst_class = -1;        // class attaining the margin lower bound
  bool blown = false;          // intervals exceeded the magnitude guard
};

namespace detail {

inline Eigen::MatrixXd mean_sub_norm_matrix(const Eigen::VectorXd& gamma) {
  const Eigen::Index m = gamma.size();
  Eigen::MatrixXd W(m, m);
  const double inv = 1.0 / static_cast<double>(m);
  for (Eigen::Index a = 0; a < m; ++a)
    for (Eigen::Index b = 0; b < m; ++b)
      W(a, b) = gamma(b) * ((a == b ? 1.0 : 0.0) - inv);
  return W;
}

inline Eigen::MatrixXd margin_difference_matrix(int num_classes, int label) {
  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(num_classes - 1, num_classes);
  int row = 0;
  for (int cls = 0; cls < num_classes; ++cls) {
    if (cls == label) continue;
    D(row, label) = 1.0;
    D(row, cls) = -1.0;
    ++row;
  }
  return D;
}

}  // namespace detail

// Forward accumulation of affine bounds through the whole network, ending in
// the concretized logits and the label-vs-rest margin lower bound.
template <typename T>
NetworkBounds<T> propagate_network(const Model& model, const PerturbationSpec& spec,
                                   int label, const AlphaSource<T>& alphas,
                                   const EngineOptions& opts = {}) {
  const ModelConfig& cfg = model.config;
  if (spec.X0.rows() != cfg.seq_len || spec.X0.cols() != cfg.hidden_size)
    throw ShapeError("X0: expected " + std::to_string(cfg.seq_len) + "x" +
                     std::to_string(cfg.hidden_size));
  if (label < 0 || label >= cfg.num_classes)
    throw ValueError("label out of range");
  if (alphas.record) alphas.record->assign(SiteIndexer(cfg).size(), 0.0);

  const int n = cfg.seq_len;
  const int m = cfg.hidden_size;
  const int dk = cfg.head_dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

  NetworkBounds<T> nb;
  try {
    AffineBoundPair<T> cur = input_bounds<T>(spec);
    for (int l = 0; l < cfg.num_layers; ++l) {
      const LayerWeights& L = model.layers[l];
      AffineBoundPair<T> Qp = matmul_right(cur, L.W_Q, &L.b_Q);
      scale_in_place(Qp, scale);
      const AffineBoundPair<T> Kp = matmul_right(cur, L.W_K, &L.b_K);
      const AffineBoundPair<T> Vp = matmul_right(cur, L.W_V, &L.b_V);

      AffineBoundPair<T> attn = AffineBoundPair<T>::zeros(n, m, spec.K());
      for (int h = 0; h < cfg.num_heads; ++h) {
        const AffineBoundPair<T> Qh = select_cols(Qp, h * dk, dk);
        const AffineBoundPair<T> Kh = select_cols(Kp, h * dk, dk);
        const AffineBoundPair<T> Vh = select_cols(Vp, h * dk, dk);
        const IntervalVec<T> Q_int = concretize(Qh, spec);
        const IntervalVec<T> K_int = concretize(Kh, spec);
        detail::guard_magnitude(Q_int, opts);
        detail::guard_magnitude(K_int, opts);

        const AffineBoundPair<T> Sp = matmul_bounds(Qh, Kh, /*b_transposed=*/true,
                                                    Q_int, K_int, l, h, MatmulKind::QK,
                                                    alphas, opts);
        const IntervalVec<T> S_int = concretize(Sp, spec);
        const AffineBoundPair<T> Ap = softmax_bounds(Sp, S_int, spec, opts);
        const IntervalVec<T> A_int = concretize(Ap, spec);
        const IntervalVec<T> V_int = concretize(Vh, spec);
        detail::guard_magnitude(A_int, opts);
        detail::guard_magnitude(V_int, opts);

        const AffineBoundPair<T> Oh = matmul_bounds(Ap, Vh, /*b_transposed=*/false,
                                                    A_int, V_int, l, h, MatmulKind::AV,
                                                    alphas, opts);
        paste_cols(attn, Oh, h * dk);
      }
      attn = matmul_right(attn, L.W_O, &L.b_O);

      AffineBoundPair<T> y1 = add_bounds(cur, attn);
      const Eigen::MatrixXd norm1 = detail::mean_sub_norm_matrix(L.norm1_gamma);
      y1 = matmul_right(y1, norm1, &L.norm1_beta);

      const AffineBoundPair<T> z1 = matmul_right(y1, L.W_1, &L.b_1);
      const IntervalVec<T> z1_int = concretize(z1, spec);
      detail::guard_magnitude(z1_int, opts);
      std::vector<LinearRelaxation<T>> relu;
      relu.reserve(z1.num_outputs());
      for (int e = 0; e < z1.num_outputs(); ++e)
        relu.push_back(relu_relaxation(z1_int.interval(e)));
      const AffineBoundPair<T> hidden = propagate_unary(z1, relu);

      const AffineBoundPair<T> z2 = matmul_right(hidden, L.W_2, &L.b_2);
      AffineBoundPair<T> y2 = add_bounds(y1, z2);
      const Eigen::MatrixXd norm2 = detail::mean_sub_norm_matrix(L.norm2_gamma);
      cur = matmul_right(y2, norm2, &L.norm2_beta);
    }

    AffineBoundPair<T> pooled =
        cfg.pooling == Pooling::Mean ? mean_rows(cur) : select_row(cur, 0);
    if (model.pool_weights)
      pooled = matmul_right(pooled, model.pool_weights->W, &model.pool_weights->b);
    const AffineBoundPair<T> logits =
        matmul_right(pooled, model.classifier_W, &model.classifier_b);
    nb.logits = concretize(logits, spec);
    detail::guard_magnitude(nb.logits, opts);

    const Eigen::MatrixXd diff =
        detail::margin_difference_matrix(cfg.num_classes, label);
    const AffineBoundPair<T> margin = propagate_affine(logits, diff);
    const IntervalVec<T> margin_int = concretize(margin, spec);
    detail::guard_magnitude(margin_int, opts);

    nb.margin_lb = margin_int.lo[0];
    int worst_row = 0;
    for (int r = 1; r < margin.num_outputs(); ++r) {
      if (value_of(margin_int.lo[r]) < value_of(nb.margin_lb)) worst_row = r;
      nb.margin_lb = t_min(nb.margin_lb, margin_int.lo[r]);
    }
    nb.worst_class = worst_row >= label ? worst_row + 1 : worst_row;
    if (opts.corrupt_bounds) nb.margin_lb = margin_int.hi[worst_row];
  } catch (const detail::BlowupSignal&) {
    nb.blown = true;
    const double inf = std::numeric_limits<double>::infinity();
    nb.margin_lb = T(-inf);
    nb.logits.rows = 1;
    nb.logits.cols = cfg.num_classes;
    nb.logits.lo.assign(cfg.num_classes, T(-inf));
    nb.logits.hi.assign(cfg.num_classes, T(inf));
    nb.worst_class = -1;
  }
  return nb;
}

}  // namespace attnverify
