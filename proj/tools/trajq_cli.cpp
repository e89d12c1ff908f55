// Operator entry point: every subcommand is a thin wrapper over the library.
// Machine-readable output goes to stdout as JSON lines, summaries to stderr.
// Exit codes: 0 success, 1 runtime error, 2 usage error.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "trajq/encoder.hpp"
#include "trajq/error.hpp"
#include "trajq/evaluation.hpp"
#include "trajq/matcher.hpp"
#include "trajq/query_json.hpp"
#include "trajq/scenarios.hpp"
#include "trajq/service.hpp"
#include "trajq/simulator.hpp"
#include "trajq/store.hpp"
#include "trajq/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw trajq::Error(trajq::ErrorKind::kIo, "cannot open '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct IngestArgs {
  std::string input, out, name;
  double fps = 0.0;
  double min_confidence = 0.0;
};

void run_ingest(const IngestArgs& a) {
  std::ifstream in(a.input, std::ios::binary);
  if (!in) throw trajq::Error(trajq::ErrorKind::kIo, "cannot open '" + a.input + "'");
  trajq::MotParseOptions opts;
  opts.type_map = trajq::default_mot_type_map();
  opts.min_confidence = a.min_confidence;
  auto parsed = trajq::parse_mot(in, opts);
  for (const auto& w : parsed.warnings) std::cerr << "warning: " << w << "\n";
  const std::string name = a.name.empty() ? fs::path(a.input).stem().string() : a.name;
  const auto store = trajq::TrackStore::build(std::move(parsed.trajectories), a.fps, name, name);
  trajq::save_store(a.out, store);
  std::cout << json{{"store", a.out}, {"objects", store.size()}, {"frame_count", store.frame_count()}}.dump() << "\n";
  std::cerr << "ingested " << store.size() << " trajectories over " << store.frame_count() << " frames\n";
}

struct SimulateArgs {
  std::uint64_t seed = 0;
  std::int64_t events = 0;
  int cams = 0;
  std::string out, config;
};

void run_simulate(const SimulateArgs& a) {
  const auto config = a.config.empty() ? trajq::sim::SimConfig{} : trajq::sim::config_from_json(read_text(a.config));
  const auto ds = trajq::sim::make_dataset(a.seed, a.events, a.cams, config);
  fs::create_directories(a.out);
  const fs::path path = fs::path(a.out) / trajq::sim::kDatasetFileName;
  trajq::sim::write_dataset(path, ds);
  std::cout << json{{"dataset", path.string()}, {"clips", ds.manifest.clips}, {"config_hash", ds.manifest.config_hash}}.dump()
            << "\n";
  std::cerr << "wrote " << ds.manifest.clips << " clips to " << path.string() << "\n";
}

struct TrainArgs {
  std::string data, config, out;
  std::uint64_t seed = 0;
  int threads = 0;
};

void run_train(const TrainArgs& a) {
  const auto ds = trajq::sim::read_dataset(trajq::sim::resolve_dataset_path(a.data));
  auto config = a.config.empty() ? trajq::nn::TrainConfig{} : trajq::nn::train_config_from_json(read_text(a.config));
  if (a.threads > 0) config.threads = a.threads;
  const auto result = trajq::nn::train(ds, config, a.seed, [](int step, double loss) {
    std::cout << json{{"step", step}, {"loss", loss}}.dump() << "\n";
  });
  trajq::nn::save_weights(a.out, result.weights);
  const auto& h = result.loss_history;
  std::cerr << "trained " << h.size() << " steps; loss " << h.front() << " -> " << h.back() << "; weights in " << a.out
            << "\n";
}

struct QueryArgs {
  std::string store, weights, query, config;
  int k = 0;
  int threads = 0;
};

void run_query(const QueryArgs& a) {
  trajq::SearchConfig cfg;
  std::vector<std::string> types = trajq::default_object_types();
  if (!a.config.empty()) {
    const auto sc = trajq::load_service_config(a.config);
    cfg = sc.search_defaults;
    types = sc.object_types;
  }
  if (a.k > 0) cfg.k = a.k;
  if (a.threads > 0) cfg.threads = a.threads;
  const auto store = trajq::load_store(a.store);
  const auto weights = trajq::nn::load_weights(a.weights);
  json qj;
  try {
    qj = json::parse(read_text(a.query));
  } catch (const json::parse_error& e) {
    throw trajq::Error(trajq::ErrorKind::kParse, a.query + ": " + e.what());
  }
  const auto query = trajq::query_from_json(qj);
  const auto outcome = trajq::run_query(store, query, weights, cfg, types);
  for (const auto& rec : trajq::result_records(outcome)) std::cout << rec.dump() << "\n";
  std::cerr << outcome.results.size() << " results";
  if (!outcome.results.empty()) std::cerr << "; top score " << outcome.results.front().score;
  std::cerr << "\n";
}

struct EvalArgs {
  std::string data, weights;
  std::uint64_t seed = 0;
  int distractors = 99;
  int turns_per_class = 0;
};

void run_eval(const EvalArgs& a) {
  const auto ds = trajq::sim::read_dataset(trajq::sim::resolve_dataset_path(a.data));
  const auto weights = trajq::nn::load_weights(a.weights);
  const auto m = trajq::evaluate_retrieval(ds, weights, a.seed, a.distractors);
  std::cout << trajq::metrics_to_json(m) << "\n";
  std::cerr << "recall@1 " << m.recall_at_1 << "  recall@5 " << m.recall_at_5 << "  auc " << m.auc << "  ("
            << m.queries << " queries, " << m.distractors << " distractors)\n";
  if (a.turns_per_class > 0) {
    const auto t = trajq::evaluate_turns(weights, a.seed, a.turns_per_class);
    std::cout << json{{"turn_auc", t.auc}, {"same_pairs", t.same_pairs}, {"cross_pairs", t.cross_pairs}}.dump() << "\n";
    std::cerr << "left/right turn auc " << t.auc << "\n";
  }
}

struct DemoArgs {
  std::uint64_t seed = 0;
  int per_scenario = 10;
  std::string out;
};

void run_demo(const DemoArgs& a) {
  const auto demo = trajq::sim::build_demo_store(a.seed, a.per_scenario);
  trajq::save_store(a.out, demo.store);
  for (const auto& ev : demo.events) {
    std::cout << json{{"event_id", ev.event_id},
                      {"scenario", std::string(trajq::sim::scenario_name(ev.scenario))},
                      {"start_frame", ev.frames.start},
                      {"end_frame", ev.frames.end},
                      {"object_ids", ev.object_ids}}
                     .dump()
              << "\n";
  }
  std::cerr << "demo store with " << demo.events.size() << " events written to " << a.out << "\n";
}

struct GradcheckArgs {
  std::uint64_t seed = 0;
};

void run_gradcheck(const GradcheckArgs& a) {
  const auto r = trajq::nn::grad_check(trajq::nn::small_config(), a.seed);
  std::cout << json{{"max_rel_error", r.max_rel_error},
                    {"max_abs_error", r.max_abs_error},
                    {"params_checked", r.params_checked},
                    {"loss", r.loss}}
                   .dump()
            << "\n";
  std::cerr << "max relative error " << r.max_rel_error << " over " << r.params_checked << " parameters\n";
  if (!r.finite || !(r.max_rel_error < 1e-4))
    throw trajq::Error(trajq::ErrorKind::kNumeric, "gradient check failed");
}

struct ServeArgs {
  std::string config, weights, data_dir, host;
  int port = -1;
};

void run_serve(const ServeArgs& a) {
  trajq::ServiceConfig cfg = a.config.empty() ? trajq::ServiceConfig{} : trajq::load_service_config(a.config);
  if (!a.weights.empty()) cfg.weights_path = a.weights;
  if (!a.data_dir.empty()) cfg.data_dir = a.data_dir;
  if (!a.host.empty()) cfg.host = a.host;
  if (a.port >= 0) cfg.port = a.port;
  trajq::Service service(cfg);
  trajq::serve(service, [&](int port) {
    std::cerr << "serving on " << cfg.host << ":" << port << (service.weights_loaded() ? "" : " (no weights loaded)")
              << std::endl;
  });
  std::cerr << "shut down\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Trajectory sketch retrieval toolkit"};
  app.require_subcommand(1);

  IngestArgs ingest;
  auto* c_ingest = app.add_subcommand("ingest", "Convert a MOT tracking file into a store file");
  c_ingest->add_option("mot-file", ingest.input, "MOT rows: frame,id,left,top,width,height[,conf[,class]]")->required();
  c_ingest->add_option("--fps", ingest.fps, "Frame rate of the tracked video")->required()->check(CLI::PositiveNumber);
  c_ingest->add_option("--out", ingest.out, "Output store file")->required();
  c_ingest->add_option("--name", ingest.name, "Dataset name (default: input file stem)");
  c_ingest->add_option("--min-confidence", ingest.min_confidence, "Drop rows below this confidence");

  SimulateArgs simulate;
  auto* c_sim = app.add_subcommand("simulate", "Generate a synthetic multi-camera dataset");
  c_sim->add_option("--seed", simulate.seed)->required();
  c_sim->add_option("--events", simulate.events)->required()->check(CLI::PositiveNumber);
  c_sim->add_option("--cams", simulate.cams, "Cameras per event")->required()->check(CLI::PositiveNumber);
  c_sim->add_option("--out", simulate.out, "Output directory")->required();
  c_sim->add_option("--config", simulate.config, "Simulator config JSON");

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "Train encoder weights on a simulated dataset");
  c_train->add_option("--data", train.data, "Dataset directory or file")->required();
  c_train->add_option("--config", train.config, "Training config JSON");
  c_train->add_option("--seed", train.seed)->required();
  c_train->add_option("--out", train.out, "Output weights file")->required();
  c_train->add_option("--threads", train.threads, "Worker threads (does not change the result)")
      ->check(CLI::PositiveNumber);

  QueryArgs query;
  auto* c_query = app.add_subcommand("query", "Run a sketch query against a store");
  c_query->add_option("--store", query.store, "Store or dataset file")->required();
  c_query->add_option("--weights", query.weights)->required();
  c_query->add_option("--query", query.query, "Visual query JSON")->required();
  c_query->add_option("--k", query.k, "Number of results")->check(CLI::PositiveNumber);
  c_query->add_option("--config", query.config, "Service config supplying search defaults");
  c_query->add_option("--threads", query.threads)->check(CLI::PositiveNumber);

  EvalArgs eval;
  auto* c_eval = app.add_subcommand("eval", "Cross-camera retrieval metrics on a simulated dataset");
  c_eval->add_option("--data", eval.data, "Dataset directory or file")->required();
  c_eval->add_option("--weights", eval.weights)->required();
  c_eval->add_option("--seed", eval.seed, "Distractor sampling seed");
  c_eval->add_option("--distractors", eval.distractors)->check(CLI::PositiveNumber);
  c_eval->add_option("--turns", eval.turns_per_class, "Also score left/right turn separation with N events per class")
      ->check(CLI::PositiveNumber);

  DemoArgs demo;
  auto* c_demo = app.add_subcommand("demo", "Build a store of scripted maneuvers; planted events go to stdout");
  c_demo->add_option("--seed", demo.seed)->required();
  c_demo->add_option("--per-scenario", demo.per_scenario)->check(CLI::PositiveNumber);
  c_demo->add_option("--out", demo.out, "Output store file")->required();

  GradcheckArgs gradcheck;
  auto* c_grad = app.add_subcommand("gradcheck", "Compare analytic and finite-difference gradients");
  c_grad->add_option("--seed", gradcheck.seed);

  ServeArgs serve;
  auto* c_serve = app.add_subcommand("serve", "Run the HTTP service");
  c_serve->add_option("--config", serve.config, "Service config JSON");
  c_serve->add_option("--weights", serve.weights);
  c_serve->add_option("--data-dir", serve.data_dir);
  c_serve->add_option("--host", serve.host);
  c_serve->add_option("--port", serve.port)->check(CLI::Range(0, 65535));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*c_ingest) run_ingest(ingest);
    else if (*c_sim) run_simulate(simulate);
    else if (*c_train) run_train(train);
    else if (*c_query) run_query(query);
    else if (*c_eval) run_eval(eval);
    else if (*c_demo) run_demo(demo);
    else if (*c_grad) run_gradcheck(gradcheck);
    else if (*c_serve) run_serve(serve);
  } catch (const trajq::FieldError& e) {
    std::cerr << "error: " << e.field_path() << ": " << e.message() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
