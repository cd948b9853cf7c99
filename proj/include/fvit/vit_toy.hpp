#pragma once

// A small single-head ViT: patch embedding, stacked self-attention layers,
// and a linear head on the summary token. Used as a stand-in backbone whose
// attention vector is certified.

#include <Eigen/Dense>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "fvit/core.hpp"
#include "fvit/random.hpp"

namespace fvit {

using Matrix = Eigen::MatrixXd;

enum class AttentionMode { CLS_LAST, CLS_ROLLOUT };

struct ModelOutput {
  PredictionDistribution prediction;
  AttentionVector attention;  // over the patch tokens
};

// Image -> (class distribution, attention vector). Implementations must be
// pure and thread-safe.
class AttentionModel {
 public:
  virtual ~AttentionModel() = default;
  virtual ModelOutput forward(std::span<const double> image) const = 0;
  virtual std::size_t input_size() const = 0;
  virtual std::size_t attention_size() const = 0;
  virtual std::size_t num_classes() const = 0;
};

struct ToyViTDims {
  std::size_t image_size = 16;  // square, single channel
  std::size_t patch_size = 4;
  std::size_t q = 8;
  std::size_t layers = 2;
  std::size_t classes = 2;
};

struct ToyViTParams {
  std::size_t patch_size = 0;
  std::size_t q = 0;
  std::size_t n = 0;  // tokens, including the summary token
  std::size_t layers = 0;
  std::size_t classes = 0;
  std::uint64_t seed = 0;
  Matrix W_embed;  // (patch_size^2) x q
  Matrix W_Q, W_K, W_V, W_L;  // q x q, shared by all layers
  Matrix W_head;  // q x classes

  std::size_t patches() const { return n - 1; }
  std::size_t patches_per_side() const {
    return static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(patches()))));
  }
  std::size_t image_size() const { return patches_per_side() * patch_size; }

  void validate() const {
    if (patch_size == 0 || q == 0 || n < 2 || layers == 0 || classes < 2)
      fail_data("model parameters have an invalid dimension");
    const auto side = patches_per_side();
    if (side * side != patches()) fail_data("model token count does not form a square grid");
    auto check = [](const Matrix& m, Eigen::Index r, Eigen::Index c, const char* name) {
      if (m.rows() != r || m.cols() != c)
        fail_data(std::string("model tensor ") + name + " has the wrong shape");
      if (!m.allFinite()) fail_data(std::string("model tensor ") + name + " is not finite");
    };
    const auto qq = static_cast<Eigen::Index>(q);
    check(W_embed, static_cast<Eigen::Index>(patch_size * patch_size), qq, "W_embed");
    check(W_Q, qq, qq, "W_Q");
    check(W_K, qq, qq, "W_K");
    check(W_V, qq, qq, "W_V");
    check(W_L, qq, qq, "W_L");
    check(W_head, qq, static_cast<Eigen::Index>(classes), "W_head");
  }
};

namespace detail {

// Entries are N(0, 1) * scale rounded to float so files round-trip exactly.
inline Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double scale) {
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      m(r, c) = static_cast<double>(static_cast<float>(rng.normal() * scale));
  return m;
}

inline void softmax_rows(Matrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double mx = m.row(r).maxCoeff();
    m.row(r) = (m.row(r).array() - mx).exp();
    m.row(r) /= m.row(r).sum();
  }
}

}  // namespace detail

// Weights drawn from N(0, 1/q) with a generator seeded by `seed`, in the
// order W_embed, W_Q, W_K, W_V, W_L, W_head (each row-major).
inline ToyViTParams init_params(std::uint64_t seed, const ToyViTDims& dims) {
  if (dims.patch_size == 0 || dims.image_size % dims.patch_size != 0)
    fail_usage("image size must be divisible by the patch size");
  ToyViTParams p;
  p.patch_size = dims.patch_size;
  p.q = dims.q;
  const std::size_t side = dims.image_size / dims.patch_size;
  p.n = side * side + 1;
  p.layers = dims.layers;
  p.classes = dims.classes;
  p.seed = seed;
  Rng rng(seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dims.q));
  p.W_embed = detail::random_matrix(rng, dims.patch_size * dims.patch_size, dims.q, scale);
  p.W_Q = detail::random_matrix(rng, dims.q, dims.q, scale);
  p.W_K = detail::random_matrix(rng, dims.q, dims.q, scale);
  p.W_V = detail::random_matrix(rng, dims.q, dims.q, scale);
  p.W_L = detail::random_matrix(rng, dims.q, dims.q, scale);
  p.W_head = detail::random_matrix(rng, dims.q, dims.classes, scale);
  p.validate();
  return p;
}

// Token matrix X (q x n). Column 0 is the summary token (all ones / sqrt q);
// column 1 + j is patch j in row-major patch order, flattened row-major and
// multiplied by W_embed.
inline Matrix patchify(std::span<const double> image, std::size_t height, std::size_t width,
                       const ToyViTParams& p) {
  const std::size_t ps = p.patch_size;
  if (height % ps != 0 || width % ps != 0) fail_usage("image dimensions not divisible by patch size");
  if (image.size() != height * width) fail_data("image size does not match its dimensions");
  const std::size_t rows = height / ps, cols = width / ps;
  Matrix X(p.q, rows * cols + 1);
  X.col(0).setConstant(1.0 / std::sqrt(static_cast<double>(p.q)));
  Eigen::VectorXd patch(ps * ps);
  for (std::size_t pr = 0; pr < rows; ++pr) {
    for (std::size_t pc = 0; pc < cols; ++pc) {
      for (std::size_t i = 0; i < ps; ++i)
        for (std::size_t j = 0; j < ps; ++j)
          patch(static_cast<Eigen::Index>(i * ps + j)) = image[(pr * ps + i) * width + pc * ps + j];
      X.col(static_cast<Eigen::Index>(1 + pr * cols + pc)) = p.W_embed.transpose() * patch;
    }
  }
  return X;
}

struct AttentionLayerOutput {
  Matrix Z;  // q x n token features
  Matrix A;  // n x n, rows sum to 1
};

// A = row_softmax(Q^T K / sqrt(q)), Q = W_Q X, K = W_K X, V = W_V X,
// Z^T = A V^T W_L.
inline AttentionLayerOutput self_attention(const Matrix& X, const ToyViTParams& p) {
  if (X.rows() != static_cast<Eigen::Index>(p.q)) fail_data("token matrix has the wrong height");
  const Matrix Q = p.W_Q * X;
  const Matrix K = p.W_K * X;
  const Matrix V = p.W_V * X;
  AttentionLayerOutput out;
  out.A = (Q.transpose() * K) / std::sqrt(static_cast<double>(p.q));
  detail::softmax_rows(out.A);
  out.Z = (out.A * V.transpose() * p.W_L).transpose();
  return out;
}

// Per-token mean-centering and unit-variance scaling over the q features.
inline void normalize_tokens(Matrix& Z) {
  for (Eigen::Index c = 0; c < Z.cols(); ++c) {
    auto col = Z.col(c);
    col.array() -= col.mean();
    const double var = col.squaredNorm() / static_cast<double>(Z.rows());
    col /= std::sqrt(var + 1e-6);
  }
}

// Summary-token row over the patch columns, renormalized. Rollout multiplies
// the layer matrices, A_L ... A_1; with one layer it is the raw attention.
inline AttentionVector attention_vector(std::span<const Matrix> layers, AttentionMode mode) {
  if (layers.empty()) fail_usage("attention_vector: empty layer list");
  Matrix M = layers.back();
  if (mode == AttentionMode::CLS_ROLLOUT) {
    M = layers.front();
    for (std::size_t l = 1; l < layers.size(); ++l) M = layers[l] * M;
  }
  const Eigen::Index n = M.cols();
  std::vector<double> w(static_cast<std::size_t>(n - 1));
  for (Eigen::Index j = 1; j < n; ++j) w[static_cast<std::size_t>(j - 1)] = M(0, j);
  return normalize_simplex(w);
}

struct ForwardTrace {
  std::vector<Matrix> attentions;  // one per layer
  Eigen::VectorXd summary;         // final summary-token feature
  Eigen::VectorXd logits;
};

inline ForwardTrace forward_trace(std::span<const double> image, const ToyViTParams& p) {
  const std::size_t side = p.image_size();
  Matrix X = patchify(image, side, side, p);
  ForwardTrace t;
  t.attentions.reserve(p.layers);
  for (std::size_t l = 0; l < p.layers; ++l) {
    auto layer = self_attention(X, p);
    normalize_tokens(layer.Z);
    X = std::move(layer.Z);
    t.attentions.push_back(std::move(layer.A));
  }
  t.summary = X.col(0);
  t.logits = p.W_head.transpose() * t.summary;
  return t;
}

inline PredictionDistribution softmax_distribution(const Eigen::VectorXd& logits) {
  const double mx = logits.maxCoeff();
  std::vector<double> probs(static_cast<std::size_t>(logits.size()));
  double sum = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    probs[static_cast<std::size_t>(i)] = std::exp(logits(i) - mx);
    sum += probs[static_cast<std::size_t>(i)];
  }
  for (auto& v : probs) v /= sum;
  return PredictionDistribution(std::move(probs));
}

inline ModelOutput forward(std::span<const double> image, const ToyViTParams& p,
                           AttentionMode mode = AttentionMode::CLS_LAST) {
  const auto t = forward_trace(image, p);
  return {softmax_distribution(t.logits), attention_vector(t.attentions, mode)};
}

class ToyViT final : public AttentionModel {
 public:
  explicit ToyViT(ToyViTParams params, AttentionMode mode = AttentionMode::CLS_LAST)
      : p_(std::move(params)), mode_(mode) {
    p_.validate();
  }

  ModelOutput forward(std::span<const double> image) const override {
    if (image.size() != input_size()) fail_data("image size does not match the model");
    return fvit::forward(image, p_, mode_);
  }
  std::size_t input_size() const override { return p_.image_size() * p_.image_size(); }
  std::size_t attention_size() const override { return p_.patches(); }
  std::size_t num_classes() const override { return p_.classes; }

  const ToyViTParams& params() const noexcept { return p_; }
  AttentionMode mode() const noexcept { return mode_; }

 private:
  ToyViTParams p_;
  AttentionMode mode_;
};

// Ridge least-squares fit of W_head on the final summary features against
// one-hot targets centred at zero (+1 for the true class, -1 otherwise).
inline ToyViTParams fit_head(ToyViTParams p, std::span<const std::vector<double>> images,
                             std::span<const std::size_t> labels, double ridge = 1e-3) {
  if (images.size() != labels.size() || images.empty()) fail_usage("fit_head: need matching images and labels");
  const auto q = static_cast<Eigen::Index>(p.q);
  Matrix F(static_cast<Eigen::Index>(images.size()), q);
  Matrix Y = Matrix::Constant(F.rows(), static_cast<Eigen::Index>(p.classes), -1.0);
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (labels[i] >= p.classes) fail_data("fit_head: label out of range");
    F.row(static_cast<Eigen::Index>(i)) = forward_trace(images[i], p).summary.transpose();
    Y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(labels[i])) = 1.0;
  }
  const Matrix gram = F.transpose() * F + ridge * Matrix::Identity(q, q);
  const Matrix W = gram.ldlt().solve(F.transpose() * Y);
  p.W_head = W.unaryExpr([](double v) { return static_cast<double>(static_cast<float>(v)); });
  p.validate();
  return p;
}

// ---------------------------------------------------------------------------
// Model directory: model.txt manifest (key = value) plus one FVTN file per
// weight matrix.

namespace detail {

inline Tensor matrix_to_tensor(const Matrix& m) {
  std::vector<float> data(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      data[static_cast<std::size_t>(r * m.cols() + c)] = static_cast<float>(m(r, c));
  return Tensor({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
                std::move(data));
}

inline Matrix tensor_to_matrix(const Tensor& t) {
  if (t.ndim() != 2) fail_data("weight tensor must be two-dimensional");
  Matrix m(static_cast<Eigen::Index>(t.shape()[0]), static_cast<Eigen::Index>(t.shape()[1]));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      m(r, c) = t.data()[static_cast<std::size_t>(r * m.cols() + c)];
  return m;
}

inline std::map<std::string, std::string> read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail_data("cannot open for reading: " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    if (eq == std::string::npos) {
      if (!trim(line).empty()) fail_data(path.string() + ": expected 'key = value'");
      continue;
    }
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

}  // namespace detail

inline const char* const kModelTensorNames[] = {"W_embed", "W_Q", "W_K", "W_V", "W_L", "W_head"};

inline void save_model(const ToyViTParams& p, const std::filesystem::path& dir) {
  p.validate();
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "model.txt", std::ios::trunc);
    if (!out) fail_data("cannot open for writing: " + (dir / "model.txt").string());
    out << "patch_size = " << p.patch_size << "\n"
        << "q = " << p.q << "\n"
        << "n = " << p.n << "\n"
        << "layers = " << p.layers << "\n"
        << "classes = " << p.classes << "\n"
        << "seed = " << p.seed << "\n";
  }
  const Matrix* mats[] = {&p.W_embed, &p.W_Q, &p.W_K, &p.W_V, &p.W_L, &p.W_head};
  for (std::size_t i = 0; i < 6; ++i)
    write_tensor(detail::matrix_to_tensor(*mats[i]), dir / (std::string(kModelTensorNames[i]) + ".fvtn"));
}

inline ToyViTParams load_model(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) fail_usage("model directory not found: " + dir.string());
  const auto kv = detail::read_key_values(dir / "model.txt");
  auto get = [&](const char* key) -> std::uint64_t {
    auto it = kv.find(key);
    if (it == kv.end()) fail_data("model manifest is missing '" + std::string(key) + "'");
    try {
      return std::stoull(it->second);
    } catch (const std::exception&) {
      fail_data("model manifest has a bad value for '" + std::string(key) + "'");
    }
  };
  for (const auto& [key, value] : kv) {
    static const char* known[] = {"patch_size", "q", "n", "layers", "classes", "seed"};
    if (std::find_if(std::begin(known), std::end(known), [&](const char* k) { return key == k; }) ==
        std::end(known))
      fail_data("model manifest has an unknown key '" + key + "'");
  }
  ToyViTParams p;
  p.patch_size = get("patch_size");
  p.q = get("q");
  p.n = get("n");
  p.layers = get("layers");
  p.classes = get("classes");
  p.seed = get("seed");
  Matrix* mats[] = {&p.W_embed, &p.W_Q, &p.W_K, &p.W_V, &p.W_L, &p.W_head};
  for (std::size_t i = 0; i < 6; ++i)
    *mats[i] = detail::tensor_to_matrix(read_tensor(dir / (std::string(kModelTensorNames[i]) + ".fvtn")));
  p.validate();
  return p;
}

}  // namespace fvit
