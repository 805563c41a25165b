#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "attnverify/types.hpp"

namespace attnverify {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct ModelConfig {
  int num_layers = 1;
  int num_heads = 1;
  int seq_len = 1;
  int hidden_size = 1;
  int head_dim = 1;
  int ffn_hidden = 1;
  int num_classes = 2;
  Pooling pooling = Pooling::Mean;
  bool use_output_projection = false;
  // Unused while the norm has no variance term; kept for format stability.
  double norm_eps = 0.0;
};

struct LayerWeights {
  Matrix W_Q, W_K, W_V;  // m x m, head h owns columns [h*d_k, (h+1)*d_k)
  Vector b_Q, b_K, b_V;  // m
  Matrix W_O;            // m x m, identity when use_output_projection is false
  Vector b_O;            // m
  Vector norm1_gamma, norm1_beta;  // m
  Matrix W_1;            // m x ffn_hidden
  Vector b_1;            // ffn_hidden
  Matrix W_2;            // ffn_hidden x m
  Vector b_2;            // m
  Vector norm2_gamma, norm2_beta;  // m
};

struct PoolerWeights {
  Matrix W;  // m x m
  Vector b;  // m
};

struct Model {
  ModelConfig config;
  std::vector<LayerWeights> layers;
  std::optional<PoolerWeights> pool_weights;
  Matrix classifier_W;  // m x c
  Vector classifier_b;  // c
};

// Throws ShapeError/ValueError naming the offending tensor.
void validate_model(const Model& model);

Model load_model(const std::string& path);
void save_model(const Model& model, const std::string& path);

// Attention matrices captured during forward, one entry per layer*heads+head.
struct ForwardTrace {
  std::vector<Matrix> attention;
};

// Exact inference; returns the c logits.
Vector forward(const Model& model, const Matrix& X, ForwardTrace* trace = nullptr);

// All weights i.i.d. uniform in [-s, s], s = 1/sqrt(hidden_size); draw order is
// fixed (per layer: W_Q, b_Q, W_K, b_K, W_V, b_V, [W_O], b_O, norm1_gamma,
// norm1_beta, W_1, b_1, W_2, b_2, norm2_gamma, norm2_beta; then classifier),
// matrices row-major. W_O is drawn only when use_output_projection is set.
Model generate_random_model(const ModelConfig& config, std::uint64_t seed);

// Companion input with entries uniform in [-1, 1], same generator discipline.
Matrix generate_random_input(const ModelConfig& config, std::uint64_t seed);

}  // namespace attnverify
