#include "trajq/matcher.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <thread>
#include <tuple>

#include "trajq/error.hpp"
#include "trajq/geometry.hpp"

namespace trajq {

void SearchConfig::validate() const {
  if (stride_frames < 1) throw FieldError("search.stride_frames", "must be >= 1");
  if (length_factors.empty()) throw FieldError("search.length_factors", "must not be empty");
  for (std::size_t i = 0; i < length_factors.size(); ++i)
    if (!(length_factors[i] > 0.0) || !std::isfinite(length_factors[i]))
      throw FieldError("search.length_factors[" + std::to_string(i) + "]", "must be a positive number");
  if (k < 1) throw FieldError("k", "must be >= 1");
  if (!(nms_iou >= 0.0 && nms_iou <= 1.0)) throw FieldError("search.nms_iou", "must be within [0, 1]");
  if (max_assignments_per_window < 1) throw FieldError("search.max_assignments_per_window", "must be >= 1");
  if (ticks_per_second && (!(*ticks_per_second > 0.0) || !std::isfinite(*ticks_per_second)))
    throw FieldError("search.ticks_per_second", "must be a positive number");
  if (threads < 1) throw FieldError("search.threads", "must be >= 1");
}

double query_span_frames(const VisualQuery& query, double store_fps, const SearchConfig& cfg) {
  const double tps = cfg.ticks_per_second.value_or(store_fps);
  // Inclusive frame count: a sketch replaying frames a..b spans b - a + 1.
  return (query.panel_finish() - query.panel_begin()) * store_fps / tps + 1.0;
}

std::vector<Frame> window_lengths(const VisualQuery& query, double store_fps, const SearchConfig& cfg) {
  const double span = query_span_frames(query, store_fps, cfg);
  std::set<Frame> lengths;
  for (double f : cfg.length_factors) lengths.insert(std::max<Frame>(2, std::llround(span * f)));
  return {lengths.begin(), lengths.end()};
}

bool eligible(const Trajectory& traj, FrameRange window) {
  const Frame overlap = std::min(traj.last_frame(), window.end) - std::max(traj.first_frame(), window.start) + 1;
  if (2 * overlap < window.length()) return false;
  const auto by_frame = [](const BoundingBox& b, Frame f) { return b.frame < f; };
  const auto lo = std::lower_bound(traj.boxes.begin(), traj.boxes.end(), window.start, by_frame);
  const auto hi = std::lower_bound(lo, traj.boxes.end(), window.end + 1, by_frame);
  return hi - lo >= 2;
}

namespace {

bool type_matches(const std::string& wanted, const std::string& actual) {
  return wanted == kAnyType || wanted == actual;
}

void check_query(const VisualQuery& query, const nn::EncoderWeights& weights) {
  validate_query(query);
  const int cap = weights.config().max_objects;
  if (static_cast<int>(query.objects.size()) > cap)
    throw Error(ErrorKind::kCapacity, "query has " + std::to_string(query.objects.size()) +
                                          " objects but the encoder supports at most " + std::to_string(cap));
}

// Ordered tuples of distinct ids, role r drawn from pools[r], in
// lexicographic order; stops once `out` holds `cap` tuples.
void assignments(const std::vector<std::vector<const std::string*>>& pools, std::size_t role,
                 std::vector<const std::string*>& current, std::vector<std::vector<std::string>>& out, std::size_t cap) {
  if (out.size() >= cap) return;
  if (role == pools.size()) {
    std::vector<std::string> ids;
    ids.reserve(current.size());
    for (const auto* id : current) ids.push_back(*id);
    out.push_back(std::move(ids));
    return;
  }
  for (const auto* id : pools[role]) {
    if (std::find(current.begin(), current.end(), id) != current.end()) continue;
    current.push_back(id);
    assignments(pools, role + 1, current, out, cap);
    current.pop_back();
    if (out.size() >= cap) return;
  }
}

template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  const auto workers = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace

std::vector<Candidate> enumerate_candidates(const TrackStore& store, const VisualQuery& query, const SearchConfig& cfg) {
  if (!store.initialized()) throw Error(ErrorKind::kInvalidArgument, "store not initialized");
  cfg.validate();
  std::vector<Candidate> out;
  const auto cap = static_cast<std::size_t>(cfg.max_assignments_per_window);
  for (Frame len : window_lengths(query, store.fps(), cfg)) {
    for (Frame s = 0; s + len - 1 <= store.frame_count() - 1; s += cfg.stride_frames) {
      const FrameRange window{s, s + len - 1};
      std::vector<const Trajectory*> fits;
      for (const auto& [id, traj] : store.trajectories())
        if (eligible(traj, window)) fits.push_back(&traj);
      if (fits.size() < query.objects.size()) continue;

      std::vector<std::vector<const std::string*>> pools(query.objects.size());
      bool empty_role = false;
      for (std::size_t r = 0; r < query.objects.size(); ++r) {
        for (const auto* t : fits)
          if (type_matches(query.objects[r].object_type, t->object_type)) pools[r].push_back(&t->object_id);
        empty_role = empty_role || pools[r].empty();
      }
      if (empty_role) continue;

      std::vector<std::vector<std::string>> tuples;
      std::vector<const std::string*> current;
      assignments(pools, 0, current, tuples, cap);
      for (auto& ids : tuples) out.push_back({window, std::move(ids)});
    }
  }
  return out;
}

ClipWindow candidate_window(const TrackStore& store, const Candidate& candidate) {
  ClipWindow w;
  w.range = candidate.window;
  w.tracks.reserve(candidate.object_ids.size());
  const auto by_frame = [](const BoundingBox& b, Frame f) { return b.frame < f; };
  for (const auto& id : candidate.object_ids) {
    const Trajectory& full = store.at(id);
    // Interpolation inside the window reads at most one box on either side.
    auto lo = std::lower_bound(full.boxes.begin(), full.boxes.end(), candidate.window.start, by_frame);
    auto hi = std::lower_bound(lo, full.boxes.end(), candidate.window.end + 1, by_frame);
    if (lo != full.boxes.begin()) --lo;
    if (hi != full.boxes.end()) ++hi;
    w.tracks.push_back({full.object_id, full.object_type, {lo, hi}});
  }
  return w;
}

bool result_before(const MatchResult& a, const MatchResult& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.start_frame != b.start_frame) return a.start_frame < b.start_frame;
  if (a.object_ids != b.object_ids) return a.object_ids < b.object_ids;
  return a.end_frame < b.end_frame;
}

std::vector<MatchResult> suppress(const std::vector<MatchResult>& sorted, double nms_iou, int k) {
  std::vector<MatchResult> kept;
  for (const auto& cand : sorted) {
    if (static_cast<int>(kept.size()) >= k) break;
    bool dominated = false;
    for (const auto& acc : kept) {
      const bool shares = std::any_of(cand.object_ids.begin(), cand.object_ids.end(), [&](const std::string& id) {
        return std::find(acc.object_ids.begin(), acc.object_ids.end(), id) != acc.object_ids.end();
      });
      if (shares && temporal_iou(cand.range(), acc.range()) > nms_iou) {
        dominated = true;
        break;
      }
    }
    if (!dominated) kept.push_back(cand);
  }
  return kept;
}

std::vector<MatchResult> search(const TrackStore& store, const VisualQuery& query, const nn::EncoderWeights& weights,
                                const SearchConfig& cfg) {
  if (!store.initialized()) throw Error(ErrorKind::kInvalidArgument, "store not initialized");
  cfg.validate();
  check_query(query, weights);
  const int T = weights.config().T;
  const nn::Embedding q = nn::embed(weights, query_to_grid(query, T));

  const std::vector<Candidate> candidates = enumerate_candidates(store, query, cfg);
  std::vector<MatchResult> scored(candidates.size());
  parallel_for(candidates.size(), cfg.threads, [&](std::size_t i) {
    const Candidate& c = candidates[i];
    const nn::Embedding e = nn::embed(weights, window_to_grid(candidate_window(store, c), T));
    scored[i] = {c.window.start, c.window.end, c.object_ids, nn::cosine(q, e)};
  });
  std::sort(scored.begin(), scored.end(), result_before);
  return suppress(scored, cfg.nms_iou, cfg.k);
}

std::vector<MatchResult> brute_force_search(const TrackStore& store, const VisualQuery& query,
                                            const nn::EncoderWeights& weights, const SearchConfig& cfg) {
  if (!store.initialized()) throw Error(ErrorKind::kInvalidArgument, "store not initialized");
  if (store.size() > 10 || store.frame_count() > 2000) throw Error(ErrorKind::kCapacity, "oracle scale exceeded");
  cfg.validate();
  check_query(query, weights);
  const int T = weights.config().T;
  const nn::Embedding q = nn::embed(weights, query_to_grid(query, T));

  const double tps = cfg.ticks_per_second ? *cfg.ticks_per_second : store.fps();
  const double span = (query.panel_finish() - query.panel_begin()) * store.fps() / tps + 1.0;
  std::vector<Frame> lengths;
  for (double f : cfg.length_factors) {
    Frame len = std::llround(span * f);
    if (len < 2) len = 2;
    if (std::find(lengths.begin(), lengths.end(), len) == lengths.end()) lengths.push_back(len);
  }
  std::sort(lengths.begin(), lengths.end());

  std::vector<const Trajectory*> objects;
  for (const auto& entry : store.trajectories()) objects.push_back(&entry.second);
  const std::size_t roles = query.objects.size();

  std::vector<MatchResult> all;
  for (Frame len : lengths) {
    for (Frame s = 0; s + len <= store.frame_count(); s += cfg.stride_frames) {
      const Frame e = s + len - 1;
      std::vector<bool> ok(objects.size(), false);
      for (std::size_t i = 0; i < objects.size(); ++i) {
        Frame covered = 0;
        for (Frame f = s; f <= e; ++f)
          if (f >= objects[i]->first_frame() && f <= objects[i]->last_frame()) ++covered;
        int inside = 0;
        for (const auto& b : objects[i]->boxes)
          if (b.frame >= s && b.frame <= e) ++inside;
        ok[i] = covered * 2 >= len && inside >= 2;
      }

      // Every ordered tuple over the full object list, filtered afterwards.
      std::vector<std::vector<std::size_t>> tuples{{}};
      for (std::size_t r = 0; r < roles; ++r) {
        std::vector<std::vector<std::size_t>> next;
        for (const auto& t : tuples) {
          for (std::size_t i = 0; i < objects.size(); ++i) {
            auto ext = t;
            ext.push_back(i);
            next.push_back(std::move(ext));
          }
        }
        tuples = std::move(next);
      }
      std::vector<std::vector<std::string>> valid;
      for (const auto& t : tuples) {
        bool good = true;
        for (std::size_t r = 0; r < roles && good; ++r) {
          const Trajectory& obj = *objects[t[r]];
          good = ok[t[r]] && (query.objects[r].object_type == kAnyType || query.objects[r].object_type == obj.object_type);
          for (std::size_t p = 0; p < r && good; ++p) good = t[p] != t[r];
        }
        if (!good) continue;
        std::vector<std::string> ids;
        for (std::size_t idx : t) ids.push_back(objects[idx]->object_id);
        valid.push_back(std::move(ids));
      }
      std::sort(valid.begin(), valid.end());
      if (valid.size() > static_cast<std::size_t>(cfg.max_assignments_per_window))
        valid.resize(static_cast<std::size_t>(cfg.max_assignments_per_window));

      for (auto& ids : valid) {
        ClipWindow w;
        w.range = {s, e};
        for (const auto& id : ids) w.tracks.push_back(store.at(id));
        const nn::Embedding emb = nn::embed(weights, window_to_grid(w, T));
        all.push_back({s, e, std::move(ids), nn::cosine(q, emb)});
      }
    }
  }

  std::sort(all.begin(), all.end(), [](const MatchResult& a, const MatchResult& b) {
    return std::make_tuple(-a.score, a.start_frame, a.object_ids, a.end_frame) <
           std::make_tuple(-b.score, b.start_frame, b.object_ids, b.end_frame);
  });
  std::vector<MatchResult> kept;
  for (const auto& cand : all) {
    if (kept.size() == static_cast<std::size_t>(cfg.k)) break;
    bool clash = false;
    for (const auto& acc : kept) {
      bool shared = false;
      for (const auto& a : cand.object_ids)
        for (const auto& b : acc.object_ids) shared = shared || a == b;
      const Frame inter = std::min(cand.end_frame, acc.end_frame) - std::max(cand.start_frame, acc.start_frame) + 1;
      const Frame uni = std::max(cand.end_frame, acc.end_frame) - std::min(cand.start_frame, acc.start_frame) + 1;
      const double iou = inter > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
      clash = clash || (shared && iou > cfg.nms_iou);
    }
    if (!clash) kept.push_back(cand);
  }
  return kept;
}

namespace {

// Per-object (cx, cy, w, h) at every step with masked steps filled from the
// last present step (or the first present one before it).
std::vector<std::vector<BoxFeature>> carried(const FeatureGrid& g) {
  std::vector<std::vector<BoxFeature>> out(static_cast<std::size_t>(g.num_objects),
                                           std::vector<BoxFeature>(static_cast<std::size_t>(g.T), BoxFeature{}));
  for (int o = 0; o < g.num_objects; ++o) {
    int first = -1;
    for (int t = 0; t < g.T && first < 0; ++t)
      if (g.present(o, t)) first = t;
    if (first < 0) continue;
    BoxFeature last{};
    for (int c = 0; c < 4; ++c) last[c] = g.at(o, first, c);
    for (int t = 0; t < g.T; ++t) {
      if (g.present(o, t))
        for (int c = 0; c < 4; ++c) last[c] = g.at(o, t, c);
      out[o][t] = last;
    }
  }
  return out;
}

}  // namespace

double dtw_distance(const FeatureGrid& a, const FeatureGrid& b) {
  if (a.num_objects != b.num_objects)
    throw Error(ErrorKind::kInvalidArgument, "dtw needs equal object counts (" + std::to_string(a.num_objects) +
                                                 " vs " + std::to_string(b.num_objects) + ")");
  if (a.T < 1 || b.T < 1) throw Error(ErrorKind::kInvalidArgument, "dtw needs non-empty grids");
  const auto va = carried(a);
  const auto vb = carried(b);
  const int n = a.num_objects;
  auto cost = [&](int i, int j) {
    if (n == 0) return 0.0;
    double sum = 0.0;
    for (int o = 0; o < n; ++o) {
      double sq = 0.0;
      for (int c = 0; c < 4; ++c) {
        const double d = va[o][i][c] - vb[o][j][c];
        sq += d * d;
      }
      sum += std::sqrt(sq);
    }
    return sum / n;
  };
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> prev(static_cast<std::size_t>(b.T) + 1, kInf);
  std::vector<double> cur(prev.size(), kInf);
  prev[0] = 0.0;
  for (int i = 1; i <= a.T; ++i) {
    cur[0] = kInf;
    for (int j = 1; j <= b.T; ++j)
      cur[j] = cost(i - 1, j - 1) + std::min({prev[j - 1], prev[j], cur[j - 1]});
    std::swap(prev, cur);
  }
  return prev[b.T];
}

}  // namespace trajq
