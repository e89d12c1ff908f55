#include <doctest.h>

#include <chrono>
#include <csignal>
#include <fstream>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>
#include <netinet/in.h>
#include <spawn.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include "helpers.hpp"
#include "trajq/query_json.hpp"
#include "trajq/service.hpp"

// After Eigen: httplib pulls in system headers whose macros clash with it.
#include <httplib.h>

using nlohmann::json;
namespace fs = std::filesystem;

extern char** environ;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

Run run(const testutil::TempDir& dir, const std::string& args) {
  const auto out = dir.path / "stdout.txt";
  const auto err = dir.path / "stderr.txt";
  const std::string cmd = std::string(TRAJQ_CLI) + " " + args + " > " + out.string() + " 2> " + err.string();
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

std::vector<json> json_lines(const std::string& text) {
  std::vector<json> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(json::parse(line));
  return out;
}

std::string fixture(const std::string& name) { return std::string(TRAJQ_FIXTURES) + "/" + name; }

// TCP socket bound to an ephemeral loopback port.
int bound_socket() {
  const int fd = socket(AF_INET, SOCK_STREAM, 0);
  REQUIRE(fd >= 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  REQUIRE(bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0);
  return fd;
}

int port_of(int fd) {
  sockaddr_in addr{};
  socklen_t len = sizeof(addr);
  getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  return ntohs(addr.sin_port);
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

const char* kSmokeTrain = R"({"model":{"T":16,"d_model":16,"n_heads":2,"n_layers":1,"d_ff":32,"d_embed":16},
  "steps":25,"batch_events":8,"learning_rate":0.003,"warmup_steps":5})";

}  // namespace

TEST_CASE("cli ingest") {
  testutil::TempDir dir("cli-ingest");
  auto r = run(dir, "ingest " + fixture("tracks.mot") + " --fps 10 --out " + (dir.path / "s.jsonl").string());
  CHECK(r.code == 0);
  CHECK(json_lines(r.out).at(0)["objects"] == 2);
  CHECK(fs::exists(dir.path / "s.jsonl"));

  write(dir.path / "bad.mot", "1,1,0,0,1,1\n2,1,zz,0,1,1\n");
  r = run(dir, "ingest " + (dir.path / "bad.mot").string() + " --fps 10 --out " + (dir.path / "b.jsonl").string());
  CHECK(r.code == 1);
  CHECK(r.err.find("line 2") != std::string::npos);

  r = run(dir, "ingest " + fixture("tracks.mot") + " --out " + (dir.path / "s.jsonl").string());
  CHECK(r.code == 2);
  r = run(dir, "frobnicate");
  CHECK(r.code == 2);
  r = run(dir, "--help");
  CHECK(r.code == 0);
}

TEST_CASE("cli simulate") {
  testutil::TempDir dir("cli-sim");
  auto r = run(dir, "simulate --seed 3 --events 2 --cams 3 --out " + (dir.path / "a").string());
  REQUIRE(r.code == 0);
  const auto text = slurp(dir.path / "a" / "dataset.jsonl");
  CHECK(json_lines(text).size() == 1 + 6);  // header + records
  run(dir, "simulate --seed 3 --events 2 --cams 3 --out " + (dir.path / "b").string());
  CHECK(slurp(dir.path / "b" / "dataset.jsonl") == text);
  CHECK(run(dir, "simulate --seed 3 --events 0 --cams 3 --out x").code == 2);
}

TEST_CASE("cli train, query and eval") {
  testutil::TempDir dir("cli-train");
  const auto data = (dir.path / "data").string();
  REQUIRE(run(dir, "simulate --seed 5 --events 40 --cams 2 --out " + data).code == 0);
  write(dir.path / "train.json", kSmokeTrain);
  const auto w1 = (dir.path / "w1.bin").string();
  const auto w2 = (dir.path / "w2.bin").string();

  auto r = run(dir, "train --data " + data + " --config " + (dir.path / "train.json").string() + " --seed 2 --out " + w1);
  REQUIRE(r.code == 0);
  const auto curve = json_lines(r.out);
  REQUIRE(curve.size() == 25);
  CHECK(curve.back()["step"] == 24);
  run(dir, "train --data " + data + " --config " + (dir.path / "train.json").string() + " --seed 2 --out " + w2);
  CHECK(slurp(w1) == slurp(w2));
  CHECK(run(dir, "train --data " + (dir.path / "missing").string() + " --seed 2 --out " + w2).code == 1);

  // Query a store built from the dataset and compare with the service.
  json q = json::parse(slurp(fixture("q1_left_turn.json")));
  q["objects"][0]["type"] = "any";
  write(dir.path / "q.json", q.dump());
  r = run(dir, "query --store " + data + "/dataset.jsonl --weights " + w1 + " --query " + (dir.path / "q.json").string() +
                   " --k 4");
  REQUIRE(r.code == 0);
  const auto rows = json_lines(r.out);
  REQUIRE(rows.size() == 4);
  for (const auto& row : rows) {
    CHECK(row["start_frame"].is_number_integer());
    CHECK(row["end_frame"].get<long long>() >= row["start_frame"].get<long long>());
    CHECK(row["object_ids"].size() == 1);
    CHECK(row["score"].get<double>() <= 1.0);
  }
  auto again = run(dir, "query --store " + data + "/dataset.jsonl --weights " + w1 + " --query " +
                            (dir.path / "q.json").string() + " --k 4");
  CHECK(again.out == r.out);

  trajq::ServiceConfig sc;
  sc.data_dir = dir.path / "svc";
  sc.weights_path = w1;
  trajq::Service service(sc);
  const std::string id = json::parse(service.upload_dataset({slurp(data + "/dataset.jsonl"), "d.jsonl", {}, {}}).body)["dataset_id"];
  const auto reply = service.post_query(json{{"dataset_id", id}, {"visual_query", q}, {"k", 4}}.dump());
  REQUIRE(reply.status == 200);
  const auto served = json::parse(reply.body)["results"];
  REQUIRE(served.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) CHECK(served[i] == rows[i]);

  r = run(dir, "eval --data " + data + " --weights " + w1 + " --seed 1 --distractors 10");
  REQUIRE(r.code == 0);
  const auto m = json_lines(r.out).at(0);
  CHECK(m["queries"] == 40);
  CHECK(m["recall_at_1"].get<double>() <= m["recall_at_5"].get<double>());
  CHECK(run(dir, "eval --data " + data + " --weights " + w1 + " --seed 1 --distractors 10").out == r.out);

  CHECK(run(dir, "query --store " + data + "/dataset.jsonl --weights " + (dir.path / "nope.bin").string() +
                     " --query " + (dir.path / "q.json").string())
            .code == 1);
}

TEST_CASE("cli serve answers, refuses a busy port and stops on SIGTERM") {
  testutil::TempDir dir("cli-serve");
  // Hold a listening port to provoke the busy case.
  const int blocker = bound_socket();
  REQUIRE(listen(blocker, 1) == 0);
  auto r = run(dir, "serve --data-dir " + (dir.path / "d").string() + " --port " + std::to_string(port_of(blocker)));
  CHECK(r.code == 1);
  CHECK(r.err.find("cannot bind") != std::string::npos);
  close(blocker);

  // Find a free port, release it and start the real server there.
  const int probe = bound_socket();
  const int port = port_of(probe);
  close(probe);
  const std::string cli = TRAJQ_CLI;
  const std::string data_dir = (dir.path / "d").string();
  const std::string port_s = std::to_string(port);
  std::vector<std::string> args{cli, "serve", "--data-dir", data_dir, "--port", port_s};
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  argv.push_back(nullptr);
  pid_t pid = 0;
  REQUIRE(posix_spawn(&pid, cli.c_str(), nullptr, nullptr, argv.data(), environ) == 0);

  httplib::Client client("127.0.0.1", port);
  client.set_connection_timeout(1);
  client.set_read_timeout(5);
  httplib::Result res;
  for (int i = 0; i < 100 && !res; ++i) {
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    res = client.Get("/datasets");
  }
  CHECK(res);
  if (res) {
    CHECK(res->status == 200);
    CHECK(json::parse(res->body)["datasets"].empty());
  }

  kill(pid, SIGTERM);
  int status = 0;
  waitpid(pid, &status, 0);
  CHECK(WIFEXITED(status));
  CHECK(WEXITSTATUS(status) == 0);
}
