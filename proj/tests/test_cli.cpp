#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "scenegen/record.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("scenegen_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Run cli(const std::string& args, const std::string& env = "") {
  static int counter = 0;
  const fs::path base = fs::temp_directory_path() / ("scenegen_cli_io_" + std::to_string(++counter));
  const std::string cmd = "env -u SCENEGEN_CONFIG " + env + " " + SCENEGEN_CLI_PATH + " " + args + " > " +
                          base.string() + ".out 2> " + base.string() + ".err";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(base.string() + ".out");
  r.err = slurp(base.string() + ".err");
  return r;
}

json load(const fs::path& p) { return json::parse(slurp(p)); }

size_t lines(const fs::path& p) {
  std::ifstream in(p);
  size_t n = 0;
  for (std::string l; std::getline(in, l);) n += l.empty() ? 0 : 1;
  return n;
}

}  // namespace

TEST_CASE("gen-data writes a corpus and a manifest") {
  const fs::path dir = scratch("gen");
  const Run r = cli("gen-data --n 7 --seed 3 --out " + dir.string());
  REQUIRE(r.code == 0);
  CHECK(lines(dir / "corpus.jsonl") == 7);
  CHECK(scenegen::read_corpus((dir / "corpus.jsonl").string()).size() == 7);
  const json m = load(dir / "manifest.json");
  CHECK(m["command"] == "gen-data");
  CHECK(m["status"] == "ok");
  CHECK(m["seed"] == 3);
  CHECK(m.contains("timings_s"));
  CHECK(fs::exists(dir / "behavior.json"));
}

TEST_CASE("config file, environment and command line precedence") {
  const fs::path dir = scratch("config");
  const fs::path cfg = dir / "cfg.json";
  std::ofstream(cfg) << R"({"n": 5, "seed": 2, "unknown_key": true})";
  REQUIRE(cli("--config " + cfg.string() + " gen-data --out " + (dir / "a").string()).code == 0);
  CHECK(lines(dir / "a" / "corpus.jsonl") == 5);
  REQUIRE(cli("--config " + cfg.string() + " gen-data --n 3 --out " + (dir / "b").string()).code == 0);
  CHECK(lines(dir / "b" / "corpus.jsonl") == 3);
  REQUIRE(cli("gen-data --out " + (dir / "c").string(), "SCENEGEN_CONFIG=" + cfg.string()).code == 0);
  CHECK(lines(dir / "c" / "corpus.jsonl") == 5);
  CHECK(load(dir / "c" / "manifest.json")["config"]["n"] == "5");

  const fs::path nested = dir / "nested.json";
  std::ofstream(nested) << R"({"n": [1, 2]})";
  const Run bad = cli("--config " + nested.string() + " gen-data --out " + (dir / "d").string());
  CHECK(bad.code == 1);
  CHECK(json::parse(bad.err)["error"] == "config");
}

TEST_CASE("errors are reported as JSON with a kind") {
  const fs::path dir = scratch("errors");
  const Run unknown = cli("gen-data --bogus 1 --out " + dir.string());
  CHECK(unknown.code == 2);
  CHECK(json::parse(unknown.err)["error"] == "usage");

  const Run missing = cli("gen-data");
  CHECK(missing.code == 1);
  CHECK(json::parse(missing.err)["error"] == "usage");

  std::ofstream(dir / "broken.jsonl") << "{\"meta\": 1}\n";
  const Run corpus = cli("sample --oracle --corpus " + (dir / "broken.jsonl").string() + " --out " +
                         (dir / "s").string());
  CHECK(corpus.code == 1);
  const json e = json::parse(corpus.err);
  CHECK(e["error"] == "malformed_corpus");
  CHECK(e["command"] == "sample");
  CHECK(load(dir / "s" / "manifest.json")["status"] == "error");

  REQUIRE(cli("gen-data --n 2 --out " + (dir / "g").string()).code == 0);
  std::ofstream(dir / "bad.ckpt") << "garbage";
  const Run ckpt = cli("sample --corpus " + (dir / "g" / "corpus.jsonl").string() + " --checkpoint " +
                       (dir / "bad.ckpt").string() + " --out " + (dir / "t").string());
  CHECK(ckpt.code == 1);
  CHECK(json::parse(ckpt.err)["error"] == "checkpoint");
}

TEST_CASE("bench-schedules reports the step counts") {
  const fs::path dir = scratch("bench");
  const Run r = cli("bench-schedules --limit 2 --out " + dir.string());
  REQUIRE(r.code == 0);
  const json t = load(dir / "schedules.json");
  std::map<std::string, int> steps, react;
  for (const auto& row : t["rows"]) {
    steps[row["strategy"]] = row["steps"];
    react[row["strategy"]] = row["react_steps"];
  }
  CHECK(steps["full"] == 32);
  CHECK(steps["ar"] == 512);
  CHECK(steps["pyramidal"] == 48);
  CHECK(steps["trapezoidal"] == 40);
  CHECK(react["full"] == 32);
  CHECK(react["pyramidal"] == 1);
  CHECK(react["trapezoidal"] == 1);
  CHECK(r.out.find("pyramidal") != std::string::npos);
}

TEST_CASE("oracle sampling is exact, reproducible and ignores goal tokens in eval") {
  const fs::path dir = scratch("sample");
  REQUIRE(cli("gen-data --n 6 --seed 4 --out " + (dir / "data").string()).code == 0);
  const std::string corpus = (dir / "data" / "corpus.jsonl").string();
  const std::string common = "sample --oracle --corpus " + corpus + " --goal-rate 1 --schedule pyramidal --seed 5";
  REQUIRE(cli(common + " --out " + (dir / "a").string()).code == 0);
  REQUIRE(cli(common + " --trace --out " + (dir / "b").string()).code == 0);
  CHECK(slurp(dir / "a" / "generated.jsonl") == slurp(dir / "b" / "generated.jsonl"));
  CHECK(slurp(dir / "a" / "metrics.json") == slurp(dir / "b" / "metrics.json"));
  CHECK(lines(dir / "b" / "traces.jsonl") > 0);
  CHECK(load(dir / "a" / "metrics.json")["aggregate"]["ade"].get<double>() <= 1e-6);

  // Shift every goal token of the reference far away: goals are conditioned, so ADE holds.
  auto generated = scenegen::read_corpus((dir / "a" / "generated.jsonl").string());
  auto reference = scenegen::read_corpus(corpus);
  size_t shifted = 0;
  for (size_t i = 0; i < generated.size(); ++i) {
    for (const auto& [agent, frame] : generated[i].meta.goals) {
      auto& s = reference[i].agents[agent].states[frame];
      if (!s) continue;
      s->x += 100.0;
      ++shifted;
    }
  }
  REQUIRE(shifted > 0);
  scenegen::write_corpus((dir / "ref.jsonl").string(), reference);
  const Run ev = cli("eval --generated " + (dir / "a" / "generated.jsonl").string() + " --reference " +
                     (dir / "ref.jsonl").string() + " --out " + (dir / "eval").string());
  REQUIRE(ev.code == 0);
  CHECK(load(dir / "eval" / "metrics.json")["aggregate"]["ade"].get<double>() <= 1e-6);
}

TEST_CASE("gen-data, train, sample, eval and render pipeline") {
  const fs::path dir = scratch("pipeline");
  REQUIRE(cli("gen-data --n 12 --seed 1 --out " + (dir / "data").string()).code == 0);
  const std::string corpus = (dir / "data" / "corpus.jsonl").string();
  const Run train = cli("train --corpus " + corpus +
                        " --steps 4 --batch 2 --hidden 16 --heads 2 --queries 4 --blocks 1 --warmup 1"
                        " --validation-every 2 --out " + (dir / "train").string());
  REQUIRE(train.code == 0);
  CHECK(fs::exists(dir / "train" / "model.ckpt"));
  CHECK(lines(dir / "train" / "train_log.jsonl") == 4);
  const std::string ckpt = (dir / "train" / "model.ckpt").string();

  REQUIRE(cli("sample --corpus " + corpus + " --checkpoint " + ckpt + " --limit 2 --schedule trapezoidal"
              " --guidance on --out " + (dir / "sample").string()).code == 0);
  CHECK(lines(dir / "sample" / "generated.jsonl") == 2);
  REQUIRE(cli("sample --corpus " + corpus + " --checkpoint " + ckpt + " --limit 1 --steps 18 --out " +
              (dir / "skip").string()).code == 0);

  const Run ev = cli("eval --generated " + (dir / "sample" / "generated.jsonl").string() + " --reference " +
                     corpus + " --out " + (dir / "eval").string());
  REQUIRE(ev.code == 0);
  const json m = load(dir / "eval" / "metrics.json");
  CHECK(m["aggregate"]["ade"].is_number());
  CHECK(m["scenarios"].size() == 2);

  REQUIRE(cli("attack --corpus " + corpus + " --checkpoint " + ckpt + " --limit 3 --out " +
              (dir / "attack").string()).code == 0);
  CHECK(load(dir / "attack" / "checklist.json")["total"].get<int>() <= 3);

  REQUIRE(cli("render --record " + corpus + " --index 1 --out " + (dir / "render").string()).code == 0);
  CHECK(slurp(dir / "render" / "scene_1.svg").rfind("<svg", 0) == 0);
}
