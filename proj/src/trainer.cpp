#include "trajq/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <thread>

#include <nlohmann/json.hpp>

#include "trajq/error.hpp"
#include "trajq/geometry.hpp"
#include "trajq/rng.hpp"

namespace trajq::nn {

using nlohmann::json;

std::string train_config_to_json(const TrainConfig& c) {
  return json{{"model", json::parse(config_to_json(c.model))},
              {"steps", c.steps},
              {"batch_events", c.batch_events},
              {"learning_rate", c.learning_rate},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"adam_eps", c.adam_eps},
              {"cosine_decay", c.cosine_decay},
              {"warmup_steps", c.warmup_steps},
              {"sketch_view_prob", c.sketch_view_prob},
              {"max_roll_rad", c.max_roll_rad},
              {"mirror_twin_prob", c.mirror_twin_prob},
              {"threads", c.threads}}
      .dump(2);
}

TrainConfig train_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::kConfig, std::string("training config is not valid JSON: ") + e.what());
  }
  TrainConfig c;
  try {
    if (auto it = j.find("model"); it != j.end()) c.model = encoder_config_from_json(it->dump());
    c.steps = j.value("steps", c.steps);
    c.batch_events = j.value("batch_events", c.batch_events);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.cosine_decay = j.value("cosine_decay", c.cosine_decay);
    c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
    c.sketch_view_prob = j.value("sketch_view_prob", c.sketch_view_prob);
    c.max_roll_rad = j.value("max_roll_rad", c.max_roll_rad);
    c.mirror_twin_prob = j.value("mirror_twin_prob", c.mirror_twin_prob);
    c.threads = j.value("threads", c.threads);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kConfig, std::string("training config: ") + e.what());
  }
  if (c.steps < 0) throw Error(ErrorKind::kConfig, "training config: steps must be >= 0");
  if (c.batch_events < 2) throw Error(ErrorKind::kConfig, "training config: batch_events must be >= 2");
  if (!(c.learning_rate >= 0.0)) throw Error(ErrorKind::kConfig, "training config: learning_rate must be >= 0");
  if (!(c.sketch_view_prob >= 0.0 && c.sketch_view_prob <= 1.0))
    throw Error(ErrorKind::kConfig, "training config: sketch_view_prob must be within [0, 1]");
  if (!(c.mirror_twin_prob >= 0.0 && c.mirror_twin_prob <= 1.0))
    throw Error(ErrorKind::kConfig, "training config: mirror_twin_prob must be within [0, 1]");
  if (!(c.max_roll_rad >= 0.0)) throw Error(ErrorKind::kConfig, "training config: max_roll_rad must be >= 0");
  if (c.threads < 1) throw Error(ErrorKind::kConfig, "training config: threads must be >= 1");
  return c;
}

FeatureGrid sketch_style_grid(const sim::LabeledClip& clip, int T) {
  ClipWindow w;
  w.range = {0, std::max<Frame>(0, clip.frame_count - 1)};
  w.tracks = clip.tracks;
  for (auto& t : w.tracks) {
    double sw = 0.0;
    double sh = 0.0;
    for (const auto& b : t.boxes) {
      sw += b.w;
      sh += b.h;
    }
    const auto n = static_cast<double>(t.boxes.size());
    for (auto& b : t.boxes) {
      b.w = sw / n;
      b.h = sh / n;
    }
  }
  return window_to_grid(w, T);
}

void roll(std::vector<ResampledTrack>& tracks, double angle) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  for (auto& t : tracks) {
    for (auto& v : t.values) {
      const double x = v[0];
      const double y = v[1];
      v[0] = c * x - s * y;
      v[1] = s * x + c * y;
    }
  }
}

namespace {

// Replaces every size by the mean over present steps.
void flatten_sizes(std::vector<ResampledTrack>& tracks) {
  for (auto& t : tracks) {
    double sw = 0.0;
    double sh = 0.0;
    int n = 0;
    for (std::size_t i = 0; i < t.values.size(); ++i) {
      if (!t.mask[i]) continue;
      sw += t.values[i][2];
      sh += t.values[i][3];
      ++n;
    }
    if (n == 0) continue;
    for (auto& v : t.values) {
      v[2] = sw / n;
      v[3] = sh / n;
    }
  }
}

template <typename Fn>
void parallel_for(int n, int threads, Fn&& fn) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  const int workers = std::min(threads, n);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (int i = w; i < n; i += workers) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace

TrainResult train(const sim::Dataset& dataset, const TrainConfig& config, std::uint64_t seed,
                  const TrainProgress& progress) {
  config.model.validate();
  const int T = config.model.T;

  std::map<std::int64_t, std::vector<std::size_t>> views_of;
  for (std::size_t i = 0; i < dataset.clips.size(); ++i) {
    const auto& clip = dataset.clips[i];
    if (static_cast<int>(clip.tracks.size()) > config.model.max_objects || clip.tracks.empty()) continue;
    views_of[clip.event_id].push_back(i);
  }
  std::vector<std::vector<std::size_t>> events;
  for (auto& [id, views] : views_of)
    if (views.size() >= 2) events.push_back(std::move(views));
  if (events.size() < 2)
    throw Error(ErrorKind::kInvalidArgument, "dataset too small: need at least 2 events with 2 or more camera views");

  std::vector<std::vector<ResampledTrack>> resampled(dataset.clips.size());
  for (const auto& ev : events) {
    for (std::size_t i : ev) {
      const auto& clip = dataset.clips[i];
      const FrameRange whole{0, std::max<Frame>(0, clip.frame_count - 1)};
      for (const auto& t : clip.tracks) resampled[i].push_back(resample(t, whole, T));
    }
  }

  TrainResult result{EncoderWeights::random(config.model, mix_seed(seed, 1)), {}};
  EncoderWeights& weights = result.weights;
  auto& params = weights.params();
  const std::size_t P = params.size();
  std::vector<double> adam_m(P, 0.0);
  std::vector<double> adam_v(P, 0.0);

  Rng rng(mix_seed(seed, 2));
  const int B = std::min<int>(config.batch_events, static_cast<int>(events.size()));
  const int M = 2 * B;
  std::vector<std::size_t> order(events.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::vector<Model> models;
  models.reserve(static_cast<std::size_t>(M));
  for (int i = 0; i < M; ++i) models.emplace_back(weights);
  std::vector<FeatureGrid> batch(static_cast<std::size_t>(M));
  std::vector<std::vector<double>> sample_grad(static_cast<std::size_t>(M), std::vector<double>(P));
  std::vector<double> grad(P);
  Mat emb(M, config.model.d_embed);

  result.loss_history.reserve(static_cast<std::size_t>(config.steps));
  for (int step = 0; step < config.steps; ++step) {
    std::size_t drawn = 0;
    bool prev_regular = false;
    for (int b = 0; b < B; ++b) {
      // A twin is the previous slot's event reflected left-to-right: a
      // distinct event that differs only in handedness.
      const bool twin = prev_regular && rng.bernoulli(config.mirror_twin_prob);
      if (!twin) {
        const auto pick = static_cast<std::size_t>(
            rng.uniform_int(static_cast<std::int64_t>(drawn), static_cast<std::int64_t>(order.size()) - 1));
        std::swap(order[drawn], order[pick]);
        ++drawn;
      }
      prev_regular = !twin;
      const auto& views = events[order[drawn - 1]];
      const auto k = static_cast<std::int64_t>(views.size());
      const auto first = rng.uniform_int(0, k - 1);
      auto second = rng.uniform_int(0, k - 2);
      if (second >= first) ++second;
      for (int side = 0; side < 2; ++side) {
        const std::size_t clip = views[static_cast<std::size_t>(side == 0 ? first : second)];
        auto tracks = resampled[clip];
        if (twin)
          for (auto& t : tracks)
            for (auto& v : t.values) v[0] = -v[0];
        if (rng.bernoulli(config.sketch_view_prob)) flatten_sizes(tracks);
        const double angle = rng.uniform(-config.max_roll_rad, config.max_roll_rad);
        if (angle != 0.0) roll(tracks, angle);
        batch[static_cast<std::size_t>(2 * b + side)] = normalize(tracks);
      }
    }

    parallel_for(M, config.threads, [&](int i) {
      const Embedding e = models[static_cast<std::size_t>(i)].forward(batch[static_cast<std::size_t>(i)]);
      for (int c = 0; c < config.model.d_embed; ++c) emb(i, c) = e[static_cast<std::size_t>(c)];
    });
    const LossResult loss = nt_xent_loss(emb, config.model.temperature);
    if (!std::isfinite(loss.loss))
      throw Error(ErrorKind::kNumeric, "training diverged: non-finite loss at step " + std::to_string(step));
    result.loss_history.push_back(loss.loss);

    parallel_for(M, config.threads, [&](int i) {
      auto& g = sample_grad[static_cast<std::size_t>(i)];
      std::fill(g.begin(), g.end(), 0.0);
      const RowVec de = loss.grad.row(i);
      models[static_cast<std::size_t>(i)].backward(
          std::span<const double>(de.data(), static_cast<std::size_t>(de.size())), g);
    });
    std::fill(grad.begin(), grad.end(), 0.0);
    for (const auto& g : sample_grad)
      for (std::size_t k = 0; k < P; ++k) grad[k] += g[k];

    double lr = config.learning_rate;
    if (config.warmup_steps > 0 && step < config.warmup_steps)
      lr *= static_cast<double>(step + 1) / static_cast<double>(config.warmup_steps);
    if (config.cosine_decay && config.steps > 1) {
      const double progress_frac = static_cast<double>(step) / static_cast<double>(config.steps - 1);
      lr *= 0.1 + 0.9 * 0.5 * (1.0 + std::cos(std::numbers::pi * progress_frac));
    }
    const double bc1 = 1.0 - std::pow(config.beta1, step + 1);
    const double bc2 = 1.0 - std::pow(config.beta2, step + 1);
    for (std::size_t k = 0; k < P; ++k) {
      adam_m[k] = config.beta1 * adam_m[k] + (1.0 - config.beta1) * grad[k];
      adam_v[k] = config.beta2 * adam_v[k] + (1.0 - config.beta2) * grad[k] * grad[k];
      params[k] -= lr * (adam_m[k] / bc1) / (std::sqrt(adam_v[k] / bc2) + config.adam_eps);
    }
    if (progress) progress(step, loss.loss);
  }
  weights.round_to_float();
  return result;
}

}  // namespace trajq::nn
