#pragma once

#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "trajq/encoder.hpp"
#include "trajq/matcher.hpp"
#include "trajq/store.hpp"
#include "trajq/types.hpp"

namespace trajq {

inline constexpr int kQuerySchemaVersion = 1;

/// Parses the sketch JSON form. Field errors are reported as FieldError with
/// the path prefixed by `prefix` (e.g. "visual_query."). Missing nominal
/// sizes default to 0.1 x min(canvasW, canvasH).
VisualQuery query_from_json(const nlohmann::json& j, const std::string& prefix = {});
nlohmann::json query_to_json(const VisualQuery& q);

/// Applies the fields present in `j` on top of `base`; paths are
/// "search.<field>".
SearchConfig search_config_from_json(const nlohmann::json& j, SearchConfig base = {});
nlohmann::json search_config_to_json(const SearchConfig& c);

nlohmann::json grid_to_json(const FeatureGrid& g, std::span<const std::string> object_ids);
nlohmann::json match_to_json(const MatchResult& r);

struct QueryOutcome {
  VisualQuery query;
  std::vector<MatchResult> results;
  std::vector<FeatureGrid> previews;  // normalized, resampled tracks per result
};

/// Validates the query against `allowed_types` (empty accepts any), runs
/// search and builds the previews.
QueryOutcome run_query(const TrackStore& store, const VisualQuery& query, const nn::EncoderWeights& weights,
                       const SearchConfig& cfg, std::span<const std::string> allowed_types = {});

/// One record per result: the match fields plus "preview".
std::vector<nlohmann::json> result_records(const QueryOutcome& outcome);

}  // namespace trajq
