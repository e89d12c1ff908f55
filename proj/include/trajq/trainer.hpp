#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "trajq/encoder.hpp"
#include "trajq/geometry.hpp"
#include "trajq/simulator.hpp"

namespace trajq::nn {

struct TrainConfig {
  EncoderConfig model;
  int steps = 2000;
  int batch_events = 32;  // B; each contributes two camera views
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  bool cosine_decay = true;  // decay to 10% of learning_rate over `steps`
  int warmup_steps = 50;
  // Probability that a view is featurized with its boxes replaced by a
  // constant mean size, the way sketched objects look.
  double sketch_view_prob = 0.25;
  // Each view's centers are rotated about the origin by an angle drawn
  // uniformly from [-max_roll_rad, max_roll_rad] (in-plane camera roll).
  double max_roll_rad = 3.141592653589793;
  // Probability that a batch slot holds the mirror image of the previous
  // slot's event instead of a fresh event.
  double mirror_twin_prob = 0.5;
  int threads = 1;
};

std::string train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const std::string& text);

struct TrainResult {
  EncoderWeights weights;
  std::vector<double> loss_history;
};

/// Called after every step with (step, loss).
using TrainProgress = std::function<void(int, double)>;

/// Mini-batch Adam on nt_xent_loss over pairs of camera views of the same
/// event. Deterministic in `seed` regardless of `threads`. Throws
/// Error(kInvalidArgument) when fewer than 2 events have 2+ views and
/// Error(kNumeric) on a non-finite loss.
TrainResult train(const sim::Dataset& dataset, const TrainConfig& config, std::uint64_t seed,
                  const TrainProgress& progress = {});

/// Rotates every center by `angle` radians; sizes are unchanged.
void roll(std::vector<ResampledTrack>& tracks, double angle);

/// Constant-size variant of a clip's grid (every track's boxes take the
/// track's mean width and height).
FeatureGrid sketch_style_grid(const sim::LabeledClip& clip, int T);

}  // namespace trajq::nn
