#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "trajq/types.hpp"

namespace trajq::nn {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;

struct EncoderConfig {
  int T = 32;
  int max_objects = 4;
  int d_model = 64;
  int n_heads = 4;
  int n_layers = 2;
  int d_ff = 128;
  int d_embed = 64;
  double temperature = 0.1;

  /// Throws Error(kConfig).
  void validate() const;
  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

/// A named parameter tensor inside the flat parameter vector.
struct ParamBlock {
  std::string name;
  std::size_t offset = 0;
  int rows = 0;
  int cols = 0;
  std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
};

/// Offsets of every parameter tensor, in serialization order.
struct ParamLayout {
  struct Layer {
    std::size_t ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
  };
  std::size_t in_w, in_b, pos, slot;
  std::vector<Layer> layers;
  std::size_t lnf_g, lnf_b, out_w, out_b;
  std::vector<ParamBlock> blocks;
  std::size_t total = 0;

  explicit ParamLayout(const EncoderConfig& c);
};

class EncoderWeights {
 public:
  explicit EncoderWeights(const EncoderConfig& config);

  /// Scaled-normal initialization; layer-norm gains start at 1, biases at 0.
  static EncoderWeights random(const EncoderConfig& config, std::uint64_t seed);

  const EncoderConfig& config() const { return config_; }
  const ParamLayout& layout() const { return layout_; }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  /// Round every parameter to the nearest float32, i.e. the precision the
  /// weights file carries.
  void round_to_float();

  /// FNV-1a over the float32 serialization.
  std::string hash() const;

  friend bool operator==(const EncoderWeights& a, const EncoderWeights& b) {
    return a.config_ == b.config_ && a.params_ == b.params_;
  }

 private:
  EncoderConfig config_;
  ParamLayout layout_;
  std::vector<double> params_;
};

/// Weights file: "TJQW", u32 version, u32 {T, max_objects, d_model, n_heads,
/// n_layers, d_ff, d_embed}, f32 temperature, u64 parameter count, then the
/// parameters as little-endian f32 in layout order.
void save_weights(const std::filesystem::path& path, const EncoderWeights& weights);
EncoderWeights load_weights(const std::filesystem::path& path);
std::string serialize_weights(const EncoderWeights& weights);
EncoderWeights deserialize_weights(const std::string& bytes);

/// Per-step encoder input: cx, cy, w, h, then velocity (vx, vy) and a signed
/// turn rate derived from consecutive present steps (zero where undefined).
inline constexpr int kInputChannels = 7;

/// [object][t][kInputChannels], zero at masked steps.
std::vector<double> input_channels(const FeatureGrid& grid);

using Embedding = std::vector<double>;

/// Intermediate activations kept for the backward pass.
struct ForwardCache;

/// Unit-length embedding of a feature grid. Throws Error(kCapacity) "object
/// capacity exceeded" and Error(kInvalidArgument) on shape mismatches.
Embedding embed(const EncoderWeights& weights, const FeatureGrid& grid);

class Model {
 public:
  explicit Model(const EncoderWeights& weights) : weights_(weights) {}

  /// Forward pass that records what backward() needs.
  Embedding forward(const FeatureGrid& grid);

  /// Accumulates d(loss)/d(params) into `grad` (same layout as params) given
  /// d(loss)/d(embedding) for the last forward().
  void backward(std::span<const double> d_embedding, std::span<double> grad) const;

  ~Model();
  Model(Model&&) noexcept;
  Model& operator=(Model&&) = delete;

 private:
  const EncoderWeights& weights_;
  ForwardCache* cache_ = nullptr;
};

double cosine(std::span<const double> a, std::span<const double> b);

struct LossResult {
  double loss = 0.0;
  Mat grad;  // d(loss)/d(embeddings), same shape as the input
};

/// Normalized-temperature cross-entropy over rows arranged as B positive
/// pairs (2i, 2i+1). Throws Error(kInvalidArgument) "need negatives" for B < 2.
LossResult nt_xent_loss(const Mat& embeddings, double temperature);

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  double loss = 0.0;
  std::size_t params_checked = 0;
  bool finite = true;
};

/// Compares analytic gradients of nt_xent_loss(embed(grids)) against central
/// differences with step `eps` for every parameter. Relative error is
/// |a - n| / max(|a|, |n|, 1e-6).
GradCheckResult grad_check_batch(const EncoderWeights& weights, std::span<const FeatureGrid> grids, double eps = 1e-5);

/// grad_check_batch on random weights and a random batch of 3 pairs.
GradCheckResult grad_check(const EncoderConfig& config, std::uint64_t seed);

/// The small configuration used for gradient verification.
EncoderConfig small_config();

std::string config_to_json(const EncoderConfig& c);
EncoderConfig encoder_config_from_json(const std::string& text);

}  // namespace trajq::nn
