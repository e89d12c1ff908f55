#include "trajq/encoder.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include <nlohmann/json.hpp>

#include "trajq/error.hpp"
#include "trajq/rng.hpp"

namespace trajq::nn {

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

using MapMat = Eigen::Map<Mat>;
using ConstMapMat = Eigen::Map<const Mat>;
using ConstMapRow = Eigen::Map<const RowVec>;
using MapRow = Eigen::Map<RowVec>;

double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x))); }

double gelu_grad(double x) {
  const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

}  // namespace

void EncoderConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorKind::kConfig, "invalid encoder config: " + what); };
  if (T < 2) fail("T must be >= 2");
  if (max_objects < 1) fail("max_objects must be >= 1");
  if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0) fail("d_model must be a positive multiple of n_heads");
  if (n_layers < 0) fail("n_layers must be >= 0");
  if (d_ff < 1) fail("d_ff must be >= 1");
  if (d_embed < 1) fail("d_embed must be >= 1");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) fail("temperature must be positive");
}

ParamLayout::ParamLayout(const EncoderConfig& c) {
  auto add = [&](const std::string& name, int rows, int cols) {
    ParamBlock b{name, total, rows, cols};
    total += b.size();
    blocks.push_back(b);
    return b.offset;
  };
  const int d = c.d_model;
  in_w = add("input.weight", kInputChannels, d);
  in_b = add("input.bias", 1, d);
  pos = add("temporal_position", c.T, d);
  slot = add("object_slot", c.max_objects, d);
  for (int l = 0; l < c.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    Layer L{};
    L.ln1_g = add(p + "ln1.gamma", 1, d);
    L.ln1_b = add(p + "ln1.beta", 1, d);
    L.wq = add(p + "attn.wq", d, d);
    L.bq = add(p + "attn.bq", 1, d);
    L.wk = add(p + "attn.wk", d, d);
    L.bk = add(p + "attn.bk", 1, d);
    L.wv = add(p + "attn.wv", d, d);
    L.bv = add(p + "attn.bv", 1, d);
    L.wo = add(p + "attn.wo", d, d);
    L.bo = add(p + "attn.bo", 1, d);
    L.ln2_g = add(p + "ln2.gamma", 1, d);
    L.ln2_b = add(p + "ln2.beta", 1, d);
    L.w1 = add(p + "ffn.w1", d, c.d_ff);
    L.b1 = add(p + "ffn.b1", 1, c.d_ff);
    L.w2 = add(p + "ffn.w2", c.d_ff, d);
    L.b2 = add(p + "ffn.b2", 1, d);
    layers.push_back(L);
  }
  lnf_g = add("final_ln.gamma", 1, d);
  lnf_b = add("final_ln.beta", 1, d);
  out_w = add("output.weight", d, c.d_embed);
  out_b = add("output.bias", 1, c.d_embed);
}

EncoderWeights::EncoderWeights(const EncoderConfig& config)
    : config_((config.validate(), config)), layout_(config_), params_(layout_.total, 0.0) {
  for (const auto& b : layout_.blocks) {
    if (b.name.ends_with("gamma")) std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(b.offset), b.size(), 1.0);
  }
}

EncoderWeights EncoderWeights::random(const EncoderConfig& config, std::uint64_t seed) {
  EncoderWeights w(config);
  Rng rng(seed);
  const double residual_scale = 1.0 / std::sqrt(2.0 * std::max(1, config.n_layers));
  for (const auto& b : w.layout_.blocks) {
    double stddev = 0.0;
    if (b.name == "temporal_position") {
      // Sinusoids with periods from 2*pi to 2*pi*T steps, amplitude 0.5.
      for (int t = 0; t < b.rows; ++t) {
        for (int c = 0; c < b.cols; ++c) {
          const double freq = std::pow(static_cast<double>(config.T), -static_cast<double>(c / 2 * 2) / b.cols);
          const double phase = static_cast<double>(t) * freq;
          w.params_[b.offset + static_cast<std::size_t>(t) * b.cols + c] = 0.5 * (c % 2 == 0 ? std::sin(phase) : std::cos(phase));
        }
      }
      continue;
    }
    if (b.name == "object_slot") {
      stddev = 0.5;
    } else if (b.name.ends_with("gamma") || b.name.ends_with("beta") || b.name.ends_with(".bias") ||
               b.rows == 1) {
      continue;
    } else {
      stddev = 1.0 / std::sqrt(static_cast<double>(b.rows));
      if (b.name == "input.weight") stddev = 0.5;
      if (b.name.ends_with("attn.wo") || b.name.ends_with("ffn.w2")) stddev *= residual_scale;
    }
    for (std::size_t i = 0; i < b.size(); ++i) w.params_[b.offset + i] = stddev * rng.normal();
  }
  return w;
}

void EncoderWeights::round_to_float() {
  config_.temperature = static_cast<double>(static_cast<float>(config_.temperature));
  for (auto& p : params_) p = static_cast<double>(static_cast<float>(p));
}

std::string EncoderWeights::hash() const {
  const std::string bytes = serialize_weights(*this);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

constexpr char kMagic[4] = {'T', 'J', 'Q', 'W'};
constexpr std::uint32_t kWeightsVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}
  std::uint64_t get(int width, const char* field) {
    if (pos_ + static_cast<std::size_t>(width) > bytes_.size())
      throw Error(ErrorKind::kParse, std::string("weights file truncated while reading ") + field);
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(width);
    return v;
  }
  std::uint32_t u32(const char* field) { return static_cast<std::uint32_t>(get(4, field)); }
  float f32(const char* field) { return std::bit_cast<float>(u32(field)); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_weights(const EncoderWeights& weights) {
  const auto& c = weights.config();
  std::string out(kMagic, kMagic + 4);
  put_u32(out, kWeightsVersion);
  for (int v : {c.T, c.max_objects, c.d_model, c.n_heads, c.n_layers, c.d_ff, c.d_embed})
    put_u32(out, static_cast<std::uint32_t>(v));
  put_f32(out, static_cast<float>(c.temperature));
  put_u64(out, weights.params().size());
  out.reserve(out.size() + 4 * weights.params().size());
  for (double p : weights.params()) put_f32(out, static_cast<float>(p));
  return out;
}

EncoderWeights deserialize_weights(const std::string& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw Error(ErrorKind::kParse, "not a weights file (bad magic)");
  Reader r(bytes);
  r.get(4, "magic");
  const std::uint32_t version = r.u32("version");
  if (version != kWeightsVersion)
    throw Error(ErrorKind::kParse, "unsupported weights version " + std::to_string(version));
  EncoderConfig c;
  c.T = static_cast<int>(r.u32("T"));
  c.max_objects = static_cast<int>(r.u32("max_objects"));
  c.d_model = static_cast<int>(r.u32("d_model"));
  c.n_heads = static_cast<int>(r.u32("n_heads"));
  c.n_layers = static_cast<int>(r.u32("n_layers"));
  c.d_ff = static_cast<int>(r.u32("d_ff"));
  c.d_embed = static_cast<int>(r.u32("d_embed"));
  c.temperature = static_cast<double>(r.f32("temperature"));
  EncoderWeights w(c);
  const std::uint64_t count = r.get(8, "parameter count");
  if (count != w.params().size())
    throw Error(ErrorKind::kParse, "parameter count " + std::to_string(count) + " does not match config (" +
                                       std::to_string(w.params().size()) + ")");
  if (r.remaining() != 4 * count) throw Error(ErrorKind::kParse, "weights file has wrong payload size");
  for (auto& p : w.params()) {
    p = static_cast<double>(r.f32("parameters"));
    if (!std::isfinite(p)) throw Error(ErrorKind::kParse, "weights file contains non-finite parameters");
  }
  return w;
}

void save_weights(const std::filesystem::path& path, const EncoderWeights& weights) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot open '" + path.string() + "' for writing");
  const std::string bytes = serialize_weights(weights);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::kIo, "write failed for '" + path.string() + "'");
}

EncoderWeights load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open weights '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return deserialize_weights(ss.str());
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Forward / backward

struct LayerNormCache {
  Mat xhat;
  Eigen::VectorXd rstd;
};

struct LayerCache {
  Mat x_in;
  LayerNormCache ln1;
  Mat a;  // ln1 output
  Mat q, k, v;
  std::vector<Mat> probs;  // per head, n x n
  Mat attn;                // concatenated head outputs, before wo
  Mat h1;
  LayerNormCache ln2;
  Mat f;   // ln2 output
  Mat z1;  // ffn pre-activation
  Mat g1;  // gelu(z1)
};

struct ForwardCache {
  std::vector<int> tok_obj;
  std::vector<int> tok_t;
  Mat feats;  // n x 4
  std::vector<LayerCache> layers;
  LayerNormCache lnf;
  RowVec pooled;
  RowVec z;
  double znorm = 0.0;
  RowVec e;
};

namespace {

ConstMapMat mat(const std::vector<double>& p, std::size_t offset, int rows, int cols) {
  return ConstMapMat(p.data() + offset, rows, cols);
}
ConstMapRow row(const std::vector<double>& p, std::size_t offset, int cols) {
  return ConstMapRow(p.data() + offset, cols);
}
MapMat gmat(std::span<double> g, std::size_t offset, int rows, int cols) {
  return MapMat(g.data() + offset, rows, cols);
}
MapRow grow(std::span<double> g, std::size_t offset, int cols) { return MapRow(g.data() + offset, cols); }

Mat layer_norm(const Mat& x, const ConstMapRow& gamma, const ConstMapRow& beta, LayerNormCache* cache) {
  const auto n = x.rows();
  const auto d = x.cols();
  Mat xhat(n, d);
  Eigen::VectorXd rstd(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mean = x.row(i).mean();
    const double var = (x.row(i).array() - mean).square().sum() / static_cast<double>(d);
    rstd(i) = 1.0 / std::sqrt(var + kLayerNormEps);
    xhat.row(i) = (x.row(i).array() - mean) * rstd(i);
  }
  Mat y = (xhat.array().rowwise() * gamma.array()).rowwise() + beta.array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return y;
}

Mat layer_norm_backward(const Mat& dy, const LayerNormCache& c, const ConstMapRow& gamma, MapRow dgamma,
                        MapRow dbeta) {
  dgamma += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  dbeta += dy.colwise().sum();
  const Mat dxhat = dy.array().rowwise() * gamma.array();
  const auto d = static_cast<double>(dy.cols());
  Mat dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const double mean_d = dxhat.row(i).sum() / d;
    const double mean_dx = dxhat.row(i).dot(c.xhat.row(i)) / d;
    dx.row(i) = (dxhat.row(i).array() - mean_d - c.xhat.row(i).array() * mean_dx) * c.rstd(i);
  }
  return dx;
}

void softmax_rows(Mat& s) {
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const double m = s.row(i).maxCoeff();
    s.row(i) = (s.row(i).array() - m).exp();
    s.row(i) /= s.row(i).sum();
  }
}

}  // namespace

Model::~Model() { delete cache_; }
Model::Model(Model&& other) noexcept : weights_(other.weights_), cache_(other.cache_) { other.cache_ = nullptr; }

std::vector<double> input_channels(const FeatureGrid& grid) {
  // Velocity is scaled by T so a window-length traverse has magnitude ~1.
  // The turn channel is cross(v_prev, v) / (|v_prev| |v| + c^2): the sine of
  // the turning angle, damped where the object barely moves.
  constexpr double kDamping = 0.05 * 0.05;
  std::vector<double> out(static_cast<std::size_t>(grid.num_objects) * grid.T * kInputChannels, 0.0);
  for (int o = 0; o < grid.num_objects; ++o) {
    int prev = -1;
    double pvx = 0.0, pvy = 0.0;
    bool have_velocity = false;
    for (int t = 0; t < grid.T; ++t) {
      if (!grid.present(o, t)) continue;
      double* f = &out[(static_cast<std::size_t>(o) * grid.T + t) * kInputChannels];
      for (int c = 0; c < 4; ++c) f[c] = grid.at(o, t, c);
      if (prev >= 0) {
        const double gap = static_cast<double>(t - prev) / grid.T;
        const double vx = (grid.at(o, t, 0) - grid.at(o, prev, 0)) / gap;
        const double vy = (grid.at(o, t, 1) - grid.at(o, prev, 1)) / gap;
        f[4] = vx;
        f[5] = vy;
        if (have_velocity)
          f[6] = (pvx * vy - pvy * vx) / (std::hypot(pvx, pvy) * std::hypot(vx, vy) + kDamping);
        pvx = vx;
        pvy = vy;
        have_velocity = true;
      }
      prev = t;
    }
  }
  return out;
}

Embedding Model::forward(const FeatureGrid& grid) {
  const EncoderConfig& c = weights_.config();
  const ParamLayout& L = weights_.layout();
  const auto& p = weights_.params();
  if (grid.num_objects > c.max_objects) throw Error(ErrorKind::kCapacity, "object capacity exceeded");
  if (grid.num_objects < 1) throw Error(ErrorKind::kInvalidArgument, "feature grid has no objects");
  if (grid.T != c.T)
    throw Error(ErrorKind::kInvalidArgument,
                "feature grid length " + std::to_string(grid.T) + " does not match encoder T=" + std::to_string(c.T));
  if (grid.values.size() != static_cast<std::size_t>(grid.num_objects) * grid.T * 4 ||
      grid.mask.size() != static_cast<std::size_t>(grid.num_objects) * grid.T)
    throw Error(ErrorKind::kInvalidArgument, "feature grid storage does not match its shape");

  if (!cache_) cache_ = new ForwardCache();
  ForwardCache& fc = *cache_;
  fc.tok_obj.clear();
  fc.tok_t.clear();
  for (int o = 0; o < grid.num_objects; ++o)
    for (int t = 0; t < grid.T; ++t)
      if (grid.present(o, t)) {
        fc.tok_obj.push_back(o);
        fc.tok_t.push_back(t);
      }
  const auto n = static_cast<Eigen::Index>(fc.tok_obj.size());
  if (n == 0) throw Error(ErrorKind::kInvalidArgument, "empty window");

  const int d = c.d_model;
  const std::vector<double> channels = input_channels(grid);
  fc.feats.resize(n, kInputChannels);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int ch = 0; ch < kInputChannels; ++ch)
      fc.feats(i, ch) = channels[(static_cast<std::size_t>(fc.tok_obj[i]) * grid.T + fc.tok_t[i]) * kInputChannels + ch];

  Mat x = fc.feats * mat(p, L.in_w, kInputChannels, d);
  x.rowwise() += row(p, L.in_b, d);
  const auto pos = mat(p, L.pos, c.T, d);
  const auto slot = mat(p, L.slot, c.max_objects, d);
  for (Eigen::Index i = 0; i < n; ++i) x.row(i) += pos.row(fc.tok_t[i]) + slot.row(fc.tok_obj[i]);

  const int dh = d / c.n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  fc.layers.resize(static_cast<std::size_t>(c.n_layers));
  for (int l = 0; l < c.n_layers; ++l) {
    const auto& W = L.layers[l];
    LayerCache& lc = fc.layers[l];
    lc.x_in = x;
    lc.a = layer_norm(x, row(p, W.ln1_g, d), row(p, W.ln1_b, d), &lc.ln1);
    lc.q = lc.a * mat(p, W.wq, d, d);
    lc.q.rowwise() += row(p, W.bq, d);
    lc.k = lc.a * mat(p, W.wk, d, d);
    lc.k.rowwise() += row(p, W.bk, d);
    lc.v = lc.a * mat(p, W.wv, d, d);
    lc.v.rowwise() += row(p, W.bv, d);
    lc.attn.resize(n, d);
    lc.probs.resize(static_cast<std::size_t>(c.n_heads));
    for (int h = 0; h < c.n_heads; ++h) {
      Mat s = lc.q.middleCols(h * dh, dh) * lc.k.middleCols(h * dh, dh).transpose() * scale;
      softmax_rows(s);
      lc.attn.middleCols(h * dh, dh).noalias() = s * lc.v.middleCols(h * dh, dh);
      lc.probs[h] = std::move(s);
    }
    Mat proj = lc.attn * mat(p, W.wo, d, d);
    proj.rowwise() += row(p, W.bo, d);
    lc.h1 = x + proj;
    lc.f = layer_norm(lc.h1, row(p, W.ln2_g, d), row(p, W.ln2_b, d), &lc.ln2);
    lc.z1 = lc.f * mat(p, W.w1, d, c.d_ff);
    lc.z1.rowwise() += row(p, W.b1, c.d_ff);
    lc.g1 = lc.z1.unaryExpr([](double v) { return gelu(v); });
    Mat ff = lc.g1 * mat(p, W.w2, c.d_ff, d);
    ff.rowwise() += row(p, W.b2, d);
    x = lc.h1 + ff;
  }

  const Mat y = layer_norm(x, row(p, L.lnf_g, d), row(p, L.lnf_b, d), &fc.lnf);
  fc.pooled = y.colwise().mean();
  fc.z = fc.pooled * mat(p, L.out_w, d, c.d_embed);
  fc.z += row(p, L.out_b, c.d_embed);
  fc.znorm = fc.z.norm();
  if (!(fc.znorm > 0.0) || !std::isfinite(fc.znorm))
    throw Error(ErrorKind::kNumeric, "embedding has zero or non-finite norm");
  fc.e = fc.z / fc.znorm;
  return Embedding(fc.e.data(), fc.e.data() + fc.e.size());
}

void Model::backward(std::span<const double> d_embedding, std::span<double> grad) const {
  if (!cache_) throw Error(ErrorKind::kInvalidArgument, "backward() called before forward()");
  const EncoderConfig& c = weights_.config();
  const ParamLayout& L = weights_.layout();
  const auto& p = weights_.params();
  const ForwardCache& fc = *cache_;
  if (grad.size() != p.size()) throw Error(ErrorKind::kInvalidArgument, "gradient buffer has the wrong size");
  if (static_cast<int>(d_embedding.size()) != c.d_embed)
    throw Error(ErrorKind::kInvalidArgument, "embedding gradient has the wrong size");

  const int d = c.d_model;
  const auto n = static_cast<Eigen::Index>(fc.tok_obj.size());
  const ConstMapRow de(d_embedding.data(), c.d_embed);

  // e = z / |z|
  const RowVec dz = (de - fc.e * fc.e.dot(de)) / fc.znorm;
  gmat(grad, L.out_w, d, c.d_embed).noalias() += fc.pooled.transpose() * dz;
  grow(grad, L.out_b, c.d_embed) += dz;
  const RowVec dpooled = dz * mat(p, L.out_w, d, c.d_embed).transpose();
  Mat dy = dpooled.replicate(n, 1) / static_cast<double>(n);
  Mat dx = layer_norm_backward(dy, fc.lnf, row(p, L.lnf_g, d), grow(grad, L.lnf_g, d), grow(grad, L.lnf_b, d));

  const int dh = d / c.n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int l = c.n_layers - 1; l >= 0; --l) {
    const auto& W = L.layers[l];
    const LayerCache& lc = fc.layers[l];

    // x_out = h1 + ffn(ln2(h1))
    gmat(grad, W.w2, c.d_ff, d).noalias() += lc.g1.transpose() * dx;
    grow(grad, W.b2, d) += dx.colwise().sum();
    Mat dz1 = dx * mat(p, W.w2, c.d_ff, d).transpose();
    dz1.array() *= lc.z1.unaryExpr([](double v) { return gelu_grad(v); }).array();
    gmat(grad, W.w1, d, c.d_ff).noalias() += lc.f.transpose() * dz1;
    grow(grad, W.b1, c.d_ff) += dz1.colwise().sum();
    const Mat df = dz1 * mat(p, W.w1, d, c.d_ff).transpose();
    Mat dh1 = dx + layer_norm_backward(df, lc.ln2, row(p, W.ln2_g, d), grow(grad, W.ln2_g, d), grow(grad, W.ln2_b, d));

    // h1 = x_in + attn(ln1(x_in)) wo + bo
    gmat(grad, W.wo, d, d).noalias() += lc.attn.transpose() * dh1;
    grow(grad, W.bo, d) += dh1.colwise().sum();
    const Mat dattn = dh1 * mat(p, W.wo, d, d).transpose();
    Mat dq(n, d), dk(n, d), dv(n, d);
    for (int h = 0; h < c.n_heads; ++h) {
      const Mat& P = lc.probs[h];
      const auto dO = dattn.middleCols(h * dh, dh);
      const Mat dP = dO * lc.v.middleCols(h * dh, dh).transpose();
      dv.middleCols(h * dh, dh).noalias() = P.transpose() * dO;
      Mat dS = dP;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double r = dP.row(i).dot(P.row(i));
        dS.row(i) = P.row(i).array() * (dP.row(i).array() - r);
      }
      dS *= scale;
      dq.middleCols(h * dh, dh).noalias() = dS * lc.k.middleCols(h * dh, dh);
      dk.middleCols(h * dh, dh).noalias() = dS.transpose() * lc.q.middleCols(h * dh, dh);
    }
    gmat(grad, W.wq, d, d).noalias() += lc.a.transpose() * dq;
    grow(grad, W.bq, d) += dq.colwise().sum();
    gmat(grad, W.wk, d, d).noalias() += lc.a.transpose() * dk;
    grow(grad, W.bk, d) += dk.colwise().sum();
    gmat(grad, W.wv, d, d).noalias() += lc.a.transpose() * dv;
    grow(grad, W.bv, d) += dv.colwise().sum();
    Mat da = dq * mat(p, W.wq, d, d).transpose();
    da.noalias() += dk * mat(p, W.wk, d, d).transpose();
    da.noalias() += dv * mat(p, W.wv, d, d).transpose();
    dx = dh1 + layer_norm_backward(da, lc.ln1, row(p, W.ln1_g, d), grow(grad, W.ln1_g, d), grow(grad, W.ln1_b, d));
  }

  gmat(grad, L.in_w, kInputChannels, d).noalias() += fc.feats.transpose() * dx;
  grow(grad, L.in_b, d) += dx.colwise().sum();
  auto dpos = gmat(grad, L.pos, c.T, d);
  auto dslot = gmat(grad, L.slot, c.max_objects, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    dpos.row(fc.tok_t[i]) += dx.row(i);
    dslot.row(fc.tok_obj[i]) += dx.row(i);
  }
}

Embedding embed(const EncoderWeights& weights, const FeatureGrid& grid) {
  Model m(weights);
  return m.forward(grid);
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw Error(ErrorKind::kInvalidArgument, "embedding dimension mismatch: " + std::to_string(a.size()) + " vs " +
                                                 std::to_string(b.size()));
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

LossResult nt_xent_loss(const Mat& e, double temperature) {
  const auto m = e.rows();
  if (m % 2 != 0) throw Error(ErrorKind::kInvalidArgument, "embeddings must come in pairs");
  if (m < 4) throw Error(ErrorKind::kInvalidArgument, "need negatives");
  if (!(temperature > 0.0)) throw Error(ErrorKind::kInvalidArgument, "temperature must be positive");

  const Mat sim = (e * e.transpose()) / temperature;
  Mat coef = Mat::Zero(m, m);  // d(loss)/d(sim)
  double loss = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    const Eigen::Index pos = i ^ 1;
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < m; ++j)
      if (j != i) mx = std::max(mx, sim(i, j));
    double z = 0.0;
    for (Eigen::Index j = 0; j < m; ++j)
      if (j != i) z += std::exp(sim(i, j) - mx);
    loss += mx + std::log(z) - sim(i, pos);
    for (Eigen::Index j = 0; j < m; ++j)
      if (j != i) coef(i, j) = std::exp(sim(i, j) - mx) / z;
    coef(i, pos) -= 1.0;
  }
  const double inv = 1.0 / static_cast<double>(m);
  LossResult out;
  out.loss = loss * inv;
  // sim = e e^T / tau, so dL/de = (C + C^T) e / tau
  out.grad = ((coef + coef.transpose()) * e) * (inv / temperature);
  return out;
}

EncoderConfig small_config() {
  EncoderConfig c;
  c.T = 8;
  c.max_objects = 3;
  c.d_model = 16;
  c.n_heads = 2;
  c.n_layers = 2;
  c.d_ff = 32;
  c.d_embed = 8;
  c.temperature = 0.5;
  return c;
}

namespace {

double batch_loss(const EncoderWeights& w, std::span<const FeatureGrid> grids, Mat* grad_e,
                  std::vector<Model>* models) {
  const auto m = static_cast<Eigen::Index>(grids.size());
  Mat e(m, w.config().d_embed);
  for (Eigen::Index i = 0; i < m; ++i) {
    Embedding v;
    if (models) {
      v = (*models)[i].forward(grids[i]);
    } else {
      v = embed(w, grids[i]);
    }
    for (int k = 0; k < w.config().d_embed; ++k) e(i, k) = v[k];
  }
  LossResult r = nt_xent_loss(e, w.config().temperature);
  if (grad_e) *grad_e = std::move(r.grad);
  return r.loss;
}

}  // namespace

GradCheckResult grad_check_batch(const EncoderWeights& weights, std::span<const FeatureGrid> grids, double eps) {
  GradCheckResult res;
  std::vector<Model> models;
  models.reserve(grids.size());
  for (std::size_t i = 0; i < grids.size(); ++i) models.emplace_back(weights);
  Mat grad_e;
  res.loss = batch_loss(weights, grids, &grad_e, &models);
  std::vector<double> analytic(weights.params().size(), 0.0);
  for (std::size_t i = 0; i < grids.size(); ++i) {
    const RowVec g = grad_e.row(static_cast<Eigen::Index>(i));
    models[i].backward(std::span<const double>(g.data(), static_cast<std::size_t>(g.size())), analytic);
  }

  EncoderWeights probe = weights;
  auto& params = probe.params();
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double orig = params[k];
    params[k] = orig + eps;
    const double up = batch_loss(probe, grids, nullptr, nullptr);
    params[k] = orig - eps;
    const double down = batch_loss(probe, grids, nullptr, nullptr);
    params[k] = orig;
    const double numeric = (up - down) / (2.0 * eps);
    const double a = analytic[k];
    if (!std::isfinite(a) || !std::isfinite(numeric)) res.finite = false;
    const double abs_err = std::abs(a - numeric);
    const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), 1e-6});
    res.max_abs_error = std::max(res.max_abs_error, abs_err);
    res.max_rel_error = std::max(res.max_rel_error, rel);
    ++res.params_checked;
  }
  if (!std::isfinite(res.loss)) res.finite = false;
  return res;
}

GradCheckResult grad_check(const EncoderConfig& config, std::uint64_t seed) {
  const EncoderWeights w = EncoderWeights::random(config, mix_seed(seed, 1));
  Rng rng(mix_seed(seed, 2));
  std::vector<FeatureGrid> grids;
  for (int i = 0; i < 6; ++i) {
    const int objects = static_cast<int>(rng.uniform_int(1, config.max_objects));
    FeatureGrid g(objects, config.T);
    for (auto& v : g.values) v = rng.uniform();
    for (int o = 0; o < objects; ++o)
      for (int t = 0; t < config.T; ++t) g.set_present(o, t, rng.bernoulli(0.8));
    g.set_present(0, 0, true);
    grids.push_back(std::move(g));
  }
  return grad_check_batch(w, grids);
}

std::string config_to_json(const EncoderConfig& c) {
  return nlohmann::json{{"T", c.T},
                        {"max_objects", c.max_objects},
                        {"d_model", c.d_model},
                        {"n_heads", c.n_heads},
                        {"n_layers", c.n_layers},
                        {"d_ff", c.d_ff},
                        {"d_embed", c.d_embed},
                        {"temperature", c.temperature}}
      .dump();
}

EncoderConfig encoder_config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::kConfig, std::string("encoder config is not valid JSON: ") + e.what());
  }
  EncoderConfig c;
  try {
    c.T = j.value("T", c.T);
    c.max_objects = j.value("max_objects", c.max_objects);
    c.d_model = j.value("d_model", c.d_model);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.n_layers = j.value("n_layers", c.n_layers);
    c.d_ff = j.value("d_ff", c.d_ff);
    c.d_embed = j.value("d_embed", c.d_embed);
    c.temperature = j.value("temperature", c.temperature);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kConfig, std::string("encoder config: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace trajq::nn
