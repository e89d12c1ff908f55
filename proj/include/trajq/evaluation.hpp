#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "trajq/encoder.hpp"
#include "trajq/simulator.hpp"

namespace trajq {

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
double roc_auc(std::span<const double> positives, std::span<const double> negatives);

struct RetrievalMetrics {
  double recall_at_1 = 0.0;
  double recall_at_5 = 0.0;
  double auc = 0.0;
  std::int64_t queries = 0;
  int distractors = 0;
};

/// For every event with at least two views: camera 0 is the query, camera 1
/// the positive, and `distractors` clips of other events (seeded choice of
/// event and view) complete the corpus. A tie with a distractor counts as a
/// miss.
RetrievalMetrics evaluate_retrieval(const sim::Dataset& dataset, const nn::EncoderWeights& weights,
                                    std::uint64_t seed, int distractors = 99);

struct TurnMetrics {
  double auc = 0.0;
  std::int64_t same_pairs = 0;
  std::int64_t cross_pairs = 0;
};

/// `per_class` left-turn and right-turn scenario events, each seen by two
/// sampled cameras; AUC of clip-pair cosine for same- versus cross-maneuver
/// pairs.
TurnMetrics evaluate_turns(const nn::EncoderWeights& weights, std::uint64_t seed, int per_class = 100,
                           const sim::CameraConfig& camera = {});

std::string metrics_to_json(const RetrievalMetrics& m);

}  // namespace trajq
