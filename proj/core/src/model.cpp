#include "attnverify/model.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include "attnverify/sampling.hpp"
#include "json.hpp"
#include "json_io.hpp"

namespace attnverify {

namespace {

using nlohmann::json;
using detail::field;
using detail::number_at;
using detail::matrix_from;
using detail::matrix_to;
using detail::vector_from;
using detail::vector_to;

void check_shape(const Matrix& t, Eigen::Index rows, Eigen::Index cols,
                 const std::string& name) {
  if (t.rows() != rows || t.cols() != cols)
    throw ShapeError(name + ": expected " + std::to_string(rows) + "x" +
                     std::to_string(cols) + ", got " + std::to_string(t.rows()) +
                     "x" + std::to_string(t.cols()));
}

void check_shape(const Vector& t, Eigen::Index size, const std::string& name) {
  if (t.size() != size)
    throw ShapeError(name + ": expected length " + std::to_string(size) +
                     ", got " + std::to_string(t.size()));
}

void check_finite(const Matrix& t, const std::string& name) {
  if (!t.allFinite()) throw ValueError(name + ": non-finite entry");
}

void check_finite(const Vector& t, const std::string& name) {
  if (!t.allFinite()) throw ValueError(name + ": non-finite entry");
}

Vector softmax_row(const Eigen::RowVectorXd& s) {
  const double mx = s.maxCoeff();
  Eigen::RowVectorXd e = (s.array() - mx).exp();
  return (e / e.sum()).transpose();
}

Eigen::RowVectorXd mean_sub_norm(const Eigen::RowVectorXd& v, const Vector& gamma,
                                 const Vector& beta) {
  const double mean = v.mean();
  return ((v.array() - mean) * gamma.transpose().array()) + beta.transpose().array();
}

void draw(Matrix& t, Eigen::Index rows, Eigen::Index cols, double s,
          std::mt19937_64& g) {
  t.resize(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) t(r, c) = uniform_in(g, -s, s);
}

void draw(Vector& t, Eigen::Index size, double s, std::mt19937_64& g) {
  t.resize(size);
  for (Eigen::Index i = 0; i < size; ++i) t(i) = uniform_in(g, -s, s);
}

}  // namespace

void validate_model(const Model& model) {
  const ModelConfig& c = model.config;
  if (c.num_layers < 1 || c.num_heads < 1 || c.seq_len < 1 || c.hidden_size < 1 ||
      c.head_dim < 1 || c.ffn_hidden < 1)
    throw ValueError("config: dimensions must be positive");
  if (c.num_classes < 2) throw ValueError("config: num_classes must be >= 2");
  if (c.hidden_size != c.num_heads * c.head_dim)
    throw ShapeError("config: hidden_size must equal num_heads * head_dim");
  if (c.norm_eps < 0.0) throw ValueError("config: norm_eps must be >= 0");
  if (static_cast<int>(model.layers.size()) != c.num_layers)
    throw ShapeError("layers: expected " + std::to_string(c.num_layers) +
                     " entries, got " + std::to_string(model.layers.size()));

  const Eigen::Index m = c.hidden_size;
  const Eigen::Index f = c.ffn_hidden;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const LayerWeights& L = model.layers[i];
    const std::string p = "layers[" + std::to_string(i) + "].";
    check_shape(L.W_Q, m, m, p + "W_Q");
    check_shape(L.W_K, m, m, p + "W_K");
    check_shape(L.W_V, m, m, p + "W_V");
    check_shape(L.b_Q, m, p + "b_Q");
    check_shape(L.b_K, m, p + "b_K");
    check_shape(L.b_V, m, p + "b_V");
    check_shape(L.W_O, m, m, p + "W_O");
    check_shape(L.b_O, m, p + "b_O");
    check_shape(L.norm1_gamma, m, p + "norm1_gamma");
    check_shape(L.norm1_beta, m, p + "norm1_beta");
    check_shape(L.W_1, m, f, p + "W_1");
    check_shape(L.b_1, f, p + "b_1");
    check_shape(L.W_2, f, m, p + "W_2");
    check_shape(L.b_2, m, p + "b_2");
    check_shape(L.norm2_gamma, m, p + "norm2_gamma");
    check_shape(L.norm2_beta, m, p + "norm2_beta");
    check_finite(L.W_Q, p + "W_Q");
    check_finite(L.W_K, p + "W_K");
    check_finite(L.W_V, p + "W_V");
    check_finite(L.b_Q, p + "b_Q");
    check_finite(L.b_K, p + "b_K");
    check_finite(L.b_V, p + "b_V");
    check_finite(L.W_O, p + "W_O");
    check_finite(L.b_O, p + "b_O");
    check_finite(L.norm1_gamma, p + "norm1_gamma");
    check_finite(L.norm1_beta, p + "norm1_beta");
    check_finite(L.W_1, p + "W_1");
    check_finite(L.b_1, p + "b_1");
    check_finite(L.W_2, p + "W_2");
    check_finite(L.b_2, p + "b_2");
    check_finite(L.norm2_gamma, p + "norm2_gamma");
    check_finite(L.norm2_beta, p + "norm2_beta");
    if (!c.use_output_projection &&
        !L.W_O.isApprox(Matrix::Identity(m, m), 0.0))
      throw ValueError(p + "W_O: must be the identity when use_output_projection is false");
  }
  if (model.pool_weights) {
    check_shape(model.pool_weights->W, m, m, "pooler.W");
    check_shape(model.pool_weights->b, m, "pooler.b");
    check_finite(model.pool_weights->W, "pooler.W");
    check_finite(model.pool_weights->b, "pooler.b");
  }
  check_shape(model.classifier_W, m, c.num_classes, "classifier.W");
  check_shape(model.classifier_b, c.num_classes, "classifier.b");
  check_finite(model.classifier_W, "classifier.W");
  check_finite(model.classifier_b, "classifier.b");
}

Model load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open model file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ParseError("model file " + path + ": " + e.what());
  }

  Model model;
  const json& jc = field(j, "config", "model");
  auto geti = [&](const char* key) {
    const json& v = field(jc, key, "config");
    if (!v.is_number_integer()) throw ParseError(std::string("config.") + key + ": expected integer");
    return v.get<int>();
  };
  model.config.num_layers = geti("num_layers");
  model.config.num_heads = geti("num_heads");
  model.config.seq_len = geti("seq_len");
  model.config.hidden_size = geti("hidden_size");
  model.config.head_dim = geti("head_dim");
  model.config.ffn_hidden = geti("ffn_hidden");
  model.config.num_classes = geti("num_classes");
  model.config.pooling =
      pooling_from_string(field(jc, "pooling", "config").get<std::string>());
  model.config.use_output_projection =
      field(jc, "use_output_projection", "config").get<bool>();
  model.config.norm_eps = number_at(field(jc, "norm_eps", "config"), "config.norm_eps");

  const json& jl = field(j, "layers", "model");
  if (!jl.is_array()) throw ParseError("layers: expected an array");
  for (std::size_t i = 0; i < jl.size(); ++i) {
    const json& e = jl[i];
    const std::string p = "layers[" + std::to_string(i) + "].";
    LayerWeights L;
    L.W_Q = matrix_from(field(e, "W_Q", p), p + "W_Q");
    L.W_K = matrix_from(field(e, "W_K", p), p + "W_K");
    L.W_V = matrix_from(field(e, "W_V", p), p + "W_V");
    L.b_Q = vector_from(field(e, "b_Q", p), p + "b_Q");
    L.b_K = vector_from(field(e, "b_K", p), p + "b_K");
    L.b_V = vector_from(field(e, "b_V", p), p + "b_V");
    L.W_O = matrix_from(field(e, "W_O", p), p + "W_O");
    L.b_O = vector_from(field(e, "b_O", p), p + "b_O");
    L.norm1_gamma = vector_from(field(e, "norm1_gamma", p), p + "norm1_gamma");
    L.norm1_beta = vector_from(field(e, "norm1_beta", p), p + "norm1_beta");
    L.W_1 = matrix_from(field(e, "W_1", p), p + "W_1");
    L.b_1 = vector_from(field(e, "b_1", p), p + "b_1");
    L.W_2 = matrix_from(field(e, "W_2", p), p + "W_2");
    L.b_2 = vector_from(field(e, "b_2", p), p + "b_2");
    L.norm2_gamma = vector_from(field(e, "norm2_gamma", p), p + "norm2_gamma");
    L.norm2_beta = vector_from(field(e, "norm2_beta", p), p + "norm2_beta");
    model.layers.push_back(std::move(L));
  }

  const json& jp = field(j, "pooler", "model");
  if (!jp.is_null()) {
    PoolerWeights pw;
    pw.W = matrix_from(field(jp, "W", "pooler"), "pooler.W");
    pw.b = vector_from(field(jp, "b", "pooler"), "pooler.b");
    model.pool_weights = std::move(pw);
  }

  const json& jcl = field(j, "classifier", "model");
  model.classifier_W = matrix_from(field(jcl, "W", "classifier"), "classifier.W");
  model.classifier_b = vector_from(field(jcl, "b", "classifier"), "classifier.b");

  validate_model(model);
  return model;
}

void save_model(const Model& model, const std::string& path) {
  json j;
  const ModelConfig& c = model.config;
  j["config"] = {{"num_layers", c.num_layers},
                 {"num_heads", c.num_heads},
                 {"seq_len", c.seq_len},
                 {"hidden_size", c.hidden_size},
                 {"head_dim", c.head_dim},
                 {"ffn_hidden", c.ffn_hidden},
                 {"num_classes", c.num_classes},
                 {"pooling", to_string(c.pooling)},
                 {"use_output_projection", c.use_output_projection},
                 {"norm_eps", c.norm_eps}};
  json layers = json::array();
  for (const LayerWeights& L : model.layers) {
    json e;
    e["W_Q"] = matrix_to(L.W_Q);
    e["W_K"] = matrix_to(L.W_K);
    e["W_V"] = matrix_to(L.W_V);
    e["b_Q"] = vector_to(L.b_Q);
    e["b_K"] = vector_to(L.b_K);
    e["b_V"] = vector_to(L.b_V);
    e["W_O"] = matrix_to(L.W_O);
    e["b_O"] = vector_to(L.b_O);
    e["norm1_gamma"] = vector_to(L.norm1_gamma);
    e["norm1_beta"] = vector_to(L.norm1_beta);
    e["W_1"] = matrix_to(L.W_1);
    e["b_1"] = vector_to(L.b_1);
    e["W_2"] = matrix_to(L.W_2);
    e["b_2"] = vector_to(L.b_2);
    e["norm2_gamma"] = vector_to(L.norm2_gamma);
    e["norm2_beta"] = vector_to(L.norm2_beta);
    layers.push_back(std::move(e));
  }
  j["layers"] = std::move(layers);
  if (model.pool_weights) {
    j["pooler"] = {{"W", matrix_to(model.pool_weights->W)},
                   {"b", vector_to(model.pool_weights->b)}};
  } else {
    j["pooler"] = nullptr;
  }
  j["classifier"] = {{"W", matrix_to(model.classifier_W)},
                     {"b", vector_to(model.classifier_b)}};

  std::ofstream out(path);
  if (!out) throw Error("cannot write model file: " + path);
  out << j.dump(2) << "\n";
}

Vector forward(const Model& model, const Matrix& X, ForwardTrace* trace) {
  const ModelConfig& c = model.config;
  if (X.rows() != c.seq_len || X.cols() != c.hidden_size)
    throw ShapeError("X: expected " + std::to_string(c.seq_len) + "x" +
                     std::to_string(c.hidden_size));
  const Eigen::Index n = c.seq_len;
  const Eigen::Index m = c.hidden_size;
  const Eigen::Index dk = c.head_dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

  Matrix cur = X;
  for (const LayerWeights& L : model.layers) {
    Matrix Q = (cur * L.W_Q).rowwise() + L.b_Q.transpose();
    Matrix K = (cur * L.W_K).rowwise() + L.b_K.transpose();
    Matrix V = (cur * L.W_V).rowwise() + L.b_V.transpose();

    Matrix O(n, m);
    for (int h = 0; h < c.num_heads; ++h) {
      const auto Qh = Q.middleCols(h * dk, dk);
      const auto Kh = K.middleCols(h * dk, dk);
      const auto Vh = V.middleCols(h * dk, dk);
      Matrix S = (Qh * Kh.transpose()) * scale;
      Matrix A(n, n);
      for (Eigen::Index i = 0; i < n; ++i)
        A.row(i) = softmax_row(S.row(i)).transpose();
      if (trace) trace->attention.push_back(A);
      O.middleCols(h * dk, dk) = A * Vh;
    }
    O = (O * L.W_O).rowwise() + L.b_O.transpose();

    Matrix Y1(n, m);
    for (Eigen::Index i = 0; i < n; ++i)
      Y1.row(i) = mean_sub_norm(cur.row(i) + O.row(i), L.norm1_gamma, L.norm1_beta);

    Matrix H = ((Y1 * L.W_1).rowwise() + L.b_1.transpose()).cwiseMax(0.0);
    Matrix Z = (H * L.W_2).rowwise() + L.b_2.transpose();

    for (Eigen::Index i = 0; i < n; ++i)
      cur.row(i) = mean_sub_norm(Y1.row(i) + Z.row(i), L.norm2_gamma, L.norm2_beta);
  }

  Eigen::RowVectorXd pooled;
  if (c.pooling == Pooling::Mean) {
    pooled = cur.colwise().mean();
  } else {
    pooled = cur.row(0);
  }
  if (model.pool_weights)
    pooled = pooled * model.pool_weights->W + model.pool_weights->b.transpose();

  return (pooled * model.classifier_W).transpose() + model.classifier_b;
}

Model generate_random_model(const ModelConfig& config, std::uint64_t seed) {
  Model model;
  model.config = config;
  const Eigen::Index m = config.hidden_size;
  const Eigen::Index f = config.ffn_hidden;
  const double s = 1.0 / std::sqrt(static_cast<double>(m));
  std::mt19937_64 g(seed);

  for (int i = 0; i < config.num_layers; ++i) {
    LayerWeights L;
    draw(L.W_Q, m, m, s, g);
    draw(L.b_Q, m, s, g);
    draw(L.W_K, m, m, s, g);
    draw(L.b_K, m, s, g);
    draw(L.W_V, m, m, s, g);
    draw(L.b_V, m, s, g);
    if (config.use_output_projection) {
      draw(L.W_O, m, m, s, g);
    } else {
      L.W_O = Matrix::Identity(m, m);
    }
    draw(L.b_O, m, s, g);
    draw(L.norm1_gamma, m, s, g);
    draw(L.norm1_beta, m, s, g);
    draw(L.W_1, m, f, s, g);
    draw(L.b_1, f, s, g);
    draw(L.W_2, f, m, s, g);
    draw(L.b_2, m, s, g);
    draw(L.norm2_gamma, m, s, g);
    draw(L.norm2_beta, m, s, g);
    model.layers.push_back(std::move(L));
  }
  draw(model.classifier_W, m, config.num_classes, s, g);
  draw(model.classifier_b, config.num_classes, s, g);
  validate_model(model);
  return model;
}

Matrix generate_random_input(const ModelConfig& config, std::uint64_t seed) {
  std::mt19937_64 g(seed);
  Matrix X(config.seq_len, config.hidden_size);
  for (Eigen::Index r = 0; r < X.rows(); ++r)
    for (Eigen::Index c = 0; c < X.cols(); ++c) X(r, c) = uniform_in(g, -1.0, 1.0);
  return X;
}

}  // namespace attnverify
