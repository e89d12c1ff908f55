#include "trajq/evaluation.hpp"

#include <algorithm>
#include <map>
#include <vector>

#include <nlohmann/json.hpp>

#include "trajq/error.hpp"
#include "trajq/rng.hpp"
#include "trajq/scenarios.hpp"

namespace trajq {

double roc_auc(std::span<const double> positives, std::span<const double> negatives) {
  if (positives.empty() || negatives.empty())
    throw Error(ErrorKind::kInvalidArgument, "AUC needs positive and negative scores");
  // Mann-Whitney U with midranks for ties.
  std::vector<std::pair<double, bool>> all;
  all.reserve(positives.size() + negatives.size());
  for (double p : positives) all.emplace_back(p, true);
  for (double n : negatives) all.emplace_back(n, false);
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  double rank_sum = 0.0;
  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t j = i;
    while (j < all.size() && all[j].first == all[i].first) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (all[k].second) rank_sum += midrank;
    i = j;
  }
  const auto np = static_cast<double>(positives.size());
  const auto nn = static_cast<double>(negatives.size());
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

RetrievalMetrics evaluate_retrieval(const sim::Dataset& dataset, const nn::EncoderWeights& weights,
                                    std::uint64_t seed, int distractors) {
  if (distractors < 1) throw Error(ErrorKind::kInvalidArgument, "need at least one distractor");
  const int T = weights.config().T;
  std::map<std::int64_t, std::vector<std::size_t>> views_of;
  for (std::size_t i = 0; i < dataset.clips.size(); ++i) views_of[dataset.clips[i].event_id].push_back(i);

  struct Event {
    std::size_t query;
    std::size_t positive;
    std::vector<std::size_t> views;
  };
  std::vector<Event> events;
  for (const auto& [id, views] : views_of) {
    const sim::LabeledClip* q = nullptr;
    const sim::LabeledClip* p = nullptr;
    std::size_t qi = 0;
    std::size_t pi = 0;
    for (std::size_t v : views) {
      if (dataset.clips[v].camera_index == 0) q = &dataset.clips[qi = v];
      if (dataset.clips[v].camera_index == 1) p = &dataset.clips[pi = v];
    }
    if (q != nullptr && p != nullptr) events.push_back({qi, pi, views});
  }
  if (static_cast<int>(events.size()) < distractors + 1)
    throw Error(ErrorKind::kInvalidArgument, "evaluation needs at least " + std::to_string(distractors + 1) +
                                                 " events with cameras 0 and 1, found " + std::to_string(events.size()));

  std::vector<nn::Embedding> emb(dataset.clips.size());
  for (const auto& ev : views_of)
    for (std::size_t v : ev.second) emb[v] = nn::embed(weights, sim::clip_to_grid(dataset.clips[v], T));

  Rng rng(seed);
  RetrievalMetrics m;
  m.distractors = distractors;
  double hits1 = 0.0;
  double hits5 = 0.0;
  double auc_sum = 0.0;
  std::vector<std::size_t> others(events.size());
  for (std::size_t e = 0; e < events.size(); ++e) {
    const auto& ev = events[e];
    const double pos = nn::cosine(emb[ev.query], emb[ev.positive]);
    // Partial Fisher-Yates over the other events.
    others.clear();
    for (std::size_t o = 0; o < events.size(); ++o)
      if (o != e) others.push_back(o);
    int above = 0;
    double below = 0.0;
    for (int d = 0; d < distractors; ++d) {
      const auto pick = static_cast<std::size_t>(rng.uniform_int(d, static_cast<std::int64_t>(others.size()) - 1));
      std::swap(others[static_cast<std::size_t>(d)], others[pick]);
      const auto& views = events[others[static_cast<std::size_t>(d)]].views;
      const std::size_t clip = views[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(views.size()) - 1))];
      const double s = nn::cosine(emb[ev.query], emb[clip]);
      if (s >= pos) ++above;
      if (s < pos) below += 1.0;
      else if (s == pos) below += 0.5;
    }
    hits1 += above == 0 ? 1.0 : 0.0;
    hits5 += above < 5 ? 1.0 : 0.0;
    auc_sum += below / distractors;
  }
  m.queries = static_cast<std::int64_t>(events.size());
  m.recall_at_1 = hits1 / static_cast<double>(m.queries);
  m.recall_at_5 = hits5 / static_cast<double>(m.queries);
  m.auc = auc_sum / static_cast<double>(m.queries);
  return m;
}

TurnMetrics evaluate_turns(const nn::EncoderWeights& weights, std::uint64_t seed, int per_class,
                           const sim::CameraConfig& camera) {
  if (per_class < 1) throw Error(ErrorKind::kInvalidArgument, "per_class must be >= 1");
  const int T = weights.config().T;
  std::vector<nn::Embedding> emb;
  std::vector<int> label;
  for (int cls = 0; cls < 2; ++cls) {
    const auto scenario = cls == 0 ? sim::Scenario::kLeftTurn : sim::Scenario::kRightTurn;
    for (int i = 0; i < per_class; ++i) {
      const auto id = static_cast<std::uint64_t>(cls * per_class + i);
      const sim::SyntheticEvent ev = sim::make_scenario_event(scenario, mix_seed(seed, 2 * id), static_cast<std::int64_t>(id));
      const std::uint64_t stream = mix_seed(seed, 2 * id + 1);
      int recorded = 0;
      for (int attempt = 0; recorded < 2 && attempt < camera.max_attempts; ++attempt) {
        const std::uint64_t cam_seed = mix_seed(stream, static_cast<std::uint64_t>(attempt));
        sim::LabeledClip clip;
        try {
          clip = sim::project(ev, sim::sample_camera(cam_seed, camera, ev), mix_seed(cam_seed, 0xC0FFEE), recorded);
        } catch (const Error& err) {
          if (err.kind() != ErrorKind::kInvalidArgument) throw;
          continue;
        }
        emb.push_back(nn::embed(weights, sim::clip_to_grid(clip, T)));
        label.push_back(cls);
        ++recorded;
      }
      if (recorded < 2) throw Error(ErrorKind::kConfig, "turn event " + std::to_string(id) + " could not be recorded");
    }
  }
  std::vector<double> same;
  std::vector<double> cross;
  for (std::size_t a = 0; a < emb.size(); ++a) {
    for (std::size_t b = a + 1; b < emb.size(); ++b) {
      const double s = nn::cosine(emb[a], emb[b]);
      (label[a] == label[b] ? same : cross).push_back(s);
    }
  }
  return {roc_auc(same, cross), static_cast<std::int64_t>(same.size()), static_cast<std::int64_t>(cross.size())};
}

std::string metrics_to_json(const RetrievalMetrics& m) {
  return nlohmann::json{{"recall_at_1", m.recall_at_1},
                        {"recall_at_5", m.recall_at_5},
                        {"auc", m.auc},
                        {"queries", m.queries},
                        {"distractors", m.distractors}}
      .dump();
}

}  // namespace trajq
