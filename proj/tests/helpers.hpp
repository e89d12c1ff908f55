#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "trajq/encoder.hpp"
#include "trajq/rng.hpp"
#include "trajq/store.hpp"
#include "trajq/types.hpp"

namespace testutil {

// Random walk of `len` consecutive frames starting at `start`.
inline trajq::Trajectory random_track(trajq::Rng& rng, const std::string& id, const std::string& type,
                                      trajq::Frame start, trajq::Frame len) {
  trajq::Trajectory t{id, type, {}};
  double x = rng.uniform(50.0, 1200.0), y = rng.uniform(50.0, 650.0);
  double vx = rng.uniform(-8.0, 8.0), vy = rng.uniform(-8.0, 8.0);
  const double w = rng.uniform(10.0, 80.0), h = rng.uniform(10.0, 80.0);
  for (trajq::Frame f = start; f < start + len; ++f) {
    t.boxes.push_back({f, x, y, w, h});
    vx += rng.uniform(-1.0, 1.0);
    vy += rng.uniform(-1.0, 1.0);
    x += vx;
    y += vy;
  }
  return t;
}

inline trajq::TrackStore random_store(std::uint64_t seed, int objects, trajq::Frame frames) {
  trajq::Rng rng(seed);
  const char* types[] = {"car", "person", "bicycle"};
  std::vector<trajq::Trajectory> ts;
  for (int i = 0; i < objects; ++i) {
    const trajq::Frame len = rng.uniform_int(8, std::max<trajq::Frame>(8, frames / 2));
    const trajq::Frame start = rng.uniform_int(0, frames - len);
    ts.push_back(random_track(rng, "o" + std::to_string(i), types[rng.uniform_int(0, 2)], start, len));
  }
  return trajq::TrackStore::build(std::move(ts), 10.0, "rand", "rand");
}

// Objects of random type with five random points over a shared panel span.
inline trajq::VisualQuery random_query(trajq::Rng& rng, int objects) {
  trajq::VisualQuery q{800, 600, {}};
  const char* types[] = {"car", "person", "any"};
  const double span = rng.uniform(8.0, 40.0);
  for (int o = 0; o < objects; ++o) {
    trajq::QueryObject obj{"q" + std::to_string(o), types[rng.uniform_int(0, 2)], 30, 30, {}};
    trajq::QuerySegment seg{0.0, span, {}};
    for (int p = 0; p < 5; ++p) seg.points.push_back({rng.uniform(0, 800), rng.uniform(0, 600)});
    obj.segments.push_back(seg);
    q.objects.push_back(obj);
  }
  return q;
}

inline trajq::nn::EncoderConfig tiny_config() {
  trajq::nn::EncoderConfig c;
  c.T = 16;
  c.d_model = 16;
  c.n_heads = 2;
  c.n_layers = 1;
  c.d_ff = 32;
  c.d_embed = 16;
  return c;
}

// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    trajq::Rng rng(static_cast<std::uint64_t>(std::hash<std::string>{}(tag)) ^
                   static_cast<std::uint64_t>(reinterpret_cast<std::uintptr_t>(this)));
    path = std::filesystem::temp_directory_path() / ("trajq-" + tag + "-" + std::to_string(rng.next_u64() % 1000000007));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

}  // namespace testutil
