#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "json.hpp"
#include "molace/pipeline.hpp"

using namespace molace;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code = 0;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "molace");
  std::ostringstream out, err;
  Run r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

fs::path fresh(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("molace-cli-" + name);
  fs::remove_all(p);
  return p;
}

json read_json(const fs::path& p) {
  std::ifstream f(p);
  return json::parse(f);
}

std::string read_text(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("extract on the analytic backend writes a unit vector") {
  const auto dir = fresh("extract");
  const Run r = cli({"extract", "--backend", "analytic", "-o", dir.string()});
  REQUIRE(r.code == 0);
  const json j = read_json(dir / "steering.json");
  double norm = 0.0;
  for (double x : j["direction"]) norm += x * x;
  CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(j.contains("fingerprint"));
  CHECK(j["seed"] == 7);
  const json m = read_json(dir / "manifest-extract.json");
  CHECK(m["fingerprint"] == j["fingerprint"]);
  CHECK(m["config"]["backend"] == "analytic");
}

TEST_CASE("echo demo CSV") {
  const auto dir = fresh("sim");
  REQUIRE(cli({"sim", "--echo-demo", "-o", dir.string()}).code == 0);
  const std::string csv = read_text(dir / "sim.csv");
  CHECK(csv.find("0,z*,0.5\n") != std::string::npos);
  CHECK(csv.find("1,z*,0.89024390243902") != std::string::npos);
}

TEST_CASE("validation failures exit 1 without artifacts") {
  const auto dir = fresh("invalid");
  const Run missing = cli({"gen", "--checkpoint", "/nonexistent.ckpt", "-o", dir.string()});
  CHECK(missing.code == 1);
  CHECK(missing.err.find("checkpoint") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "generations.jsonl"));

  CHECK(cli({"gen", "--backend", "analytic", "--sigma", "-1", "-o", dir.string()}).code == 1);
  CHECK(cli({"nonsense"}).code == 1);
  CHECK(cli({"eval", "-o", dir.string()}).code == 1);
  CHECK(cli({"--help"}).code == 0);
}

TEST_CASE("runtime failures exit 2 with the stage name") {
  const auto dir = fresh("runtime");
  fs::create_directories(dir);
  std::ofstream(dir / "broken.ckpt") << "not a checkpoint";
  const Run r = cli({"extract", "--checkpoint", (dir / "broken.ckpt").string(), "-o", dir.string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("[load-backend]") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "steering.json"));
}

TEST_CASE("config file, environment and flag precedence") {
  const auto dir = fresh("precedence");
  fs::create_directories(dir);
  RunConfig file_cfg;
  file_cfg.backend = "analytic";
  file_cfg.seed = 3;
  file_cfg.output_dir = (dir / "from-file").string();
  std::ofstream(dir / "cfg.json") << file_cfg.to_json().dump();

  REQUIRE(cli({"--config", (dir / "cfg.json").string(), "extract"}).code == 0);
  CHECK(fs::exists(dir / "from-file" / "steering.json"));

  setenv("MOLACE_OUTPUT_DIR", (dir / "from-env").string().c_str(), 1);
  REQUIRE(cli({"--config", (dir / "cfg.json").string(), "extract"}).code == 0);
  CHECK(fs::exists(dir / "from-env" / "steering.json"));
  REQUIRE(cli({"--config", (dir / "cfg.json").string(), "extract", "-o", (dir / "from-flag").string(), "--seed", "9"})
              .code == 0);
  unsetenv("MOLACE_OUTPUT_DIR");
  CHECK(read_json(dir / "from-flag" / "steering.json")["seed"] == 9);
  CHECK(read_json(dir / "from-env" / "steering.json")["seed"] == 3);
}

TEST_CASE("analytic pipeline is deterministic") {
  std::string summaries[2];
  const auto dir = fresh("pipeline");
  for (int run = 0; run < 2; ++run) {
    const std::string o = dir.string();
    REQUIRE(cli({"extract", "--backend", "analytic", "-o", o}).code == 0);
    const std::string steering = (dir / "steering.json").string();
    REQUIRE(cli({"gen", "--backend", "analytic", "--steering", steering, "--workers", "3", "-o", o}).code == 0);
    REQUIRE(cli({"debate", "--backend", "analytic", "--steering", steering, "--agents", "2", "--rounds", "2", "-o", o})
                .code == 0);
    REQUIRE(cli({"eval", "--input", (dir / "generations.jsonl").string(), "-o", o}).code == 0);
    json s = read_json(dir / "summary.json");
    s.erase("created_at");
    summaries[run] = s.dump();
    CHECK(fs::exists(dir / "transcripts.jsonl"));
    CHECK(fs::exists(dir / "pairwise.csv"));
    CHECK(fs::exists(dir / "triplet.csv"));
  }
  CHECK(summaries[0] == summaries[1]);
}

TEST_CASE("build-prompts and probe on the analytic backend") {
  const auto dir = fresh("build");
  REQUIRE(cli({"build-prompts", "--families", "stance,negation", "-o", dir.string()}).code == 0);
  CHECK(read_json(dir / "errors.json")["errors"].empty());
  const auto load = load_corpus(dir / "corpus.jsonl");
  CHECK(load.items.size() == 15);
  CHECK(cli({"build-prompts", "--families", "bogus", "-o", dir.string()}).code == 1);

  REQUIRE(cli({"probe", "--backend", "analytic", "--per-class", "10", "-o", dir.string()}).code == 0);
  CHECK(read_json(dir / "probe.json")["layers"].size() == 1);
  CHECK(fs::exists(dir / "pca.csv"));
}
