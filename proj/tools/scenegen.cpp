#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "scenegen/attack.hpp"
#include "scenegen/behavior.hpp"
#include "scenegen/checkpoint.hpp"
#include "scenegen/datagen.hpp"
#include "scenegen/metrics.hpp"
#include "scenegen/record.hpp"
#include "scenegen/render.hpp"
#include "scenegen/sampling.hpp"
#include "scenegen/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace scenegen;

namespace {

constexpr const char* kEngineVersion = "scenegen 1.0.0";
constexpr const char* kConfigEnv = "SCENEGEN_CONFIG";

// Raised for bad inputs; `kind` becomes the error record's type.
struct CommandError : std::runtime_error {
  CommandError(std::string kind, const std::string& message)
      : std::runtime_error(message), kind(std::move(kind)) {}
  std::string kind;
};

class Manifest {
 public:
  explicit Manifest(std::string command) : command_(std::move(command)) {}

  void input(const std::string& name, const std::string& path) { inputs_[name] = path; }
  void output(const std::string& name, const std::string& path) { outputs_[name] = path; }
  void seed(std::uint64_t s) { seed_ = s; }
  void config(json c) { config_ = std::move(c); }

  template <class F>
  auto phase(const std::string& name, F&& body) {
    const auto t0 = std::chrono::steady_clock::now();
    struct Record {
      Manifest* m;
      std::string name;
      std::chrono::steady_clock::time_point t0;
      ~Record() {
        m->timings_[name] += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      }
    } rec{this, name, t0};
    return body();
  }

  void write(const fs::path& dir, const std::string& status) const {
    json j;
    j["command"] = command_;
    j["status"] = status;
    j["config"] = config_;
    j["seed"] = seed_;
    j["inputs"] = inputs_;
    j["outputs"] = outputs_;
    j["engine_version"] = kEngineVersion;
    j["timings_s"] = timings_;
    const std::time_t now = std::time(nullptr);
    std::ostringstream stamp;
    stamp << std::put_time(std::gmtime(&now), "%Y-%m-%dT%H:%M:%SZ");
    j["created_at"] = stamp.str();
    std::ofstream out(dir / "manifest.json");
    out << j.dump(2) << "\n";
  }

 private:
  std::string command_;
  json config_ = json::object();
  std::uint64_t seed_ = 0;
  std::map<std::string, std::string> inputs_;
  std::map<std::string, std::string> outputs_;
  std::map<std::string, double> timings_;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CommandError("io", "cannot write " + path.string());
  out << text;
}

std::vector<ScenarioRecord> load_corpus(const std::string& path) {
  if (!fs::exists(path)) throw CommandError("io", "no such file: " + path);
  try {
    return read_corpus(path);
  } catch (const RecordError& e) {
    throw CommandError("malformed_corpus", path + ": " + e.what());
  }
}

// Either a checkpoint or, per record, the ground-truth oracle.
struct DenoiserSource {
  std::unique_ptr<SceneDenoiser> model;
  ChannelStats stats;

  bool oracle() const { return !model; }
};

DenoiserSource load_source(const std::string& checkpoint, bool oracle,
                           const std::vector<ScenarioRecord>& corpus, Manifest& manifest) {
  DenoiserSource src;
  if (oracle) {
    if (!checkpoint.empty()) throw CommandError("usage", "--oracle and --checkpoint are exclusive");
    src.stats = fit_stats(corpus);
    return src;
  }
  if (checkpoint.empty()) throw CommandError("usage", "a --checkpoint (or --oracle) is required");
  if (!fs::exists(checkpoint)) throw CommandError("io", "no such file: " + checkpoint);
  manifest.input("checkpoint", checkpoint);
  try {
    src.model = load_checkpoint(checkpoint).model;
  } catch (const CheckpointError& e) {
    throw CommandError("checkpoint", e.what());
  }
  src.stats = src.model->stats();
  return src;
}

std::unique_ptr<Denoiser> oracle_for(const ScenarioRecord& record, const ChannelStats& stats) {
  return std::make_unique<OracleDenoiser>(normalize(to_tensor(record), stats));
}

std::uint64_t scenario_seed(std::uint64_t seed, size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

GuidanceConfig guidance_from(bool on) { return on ? GuidanceConfig{} : GuidanceConfig::disabled(); }

TokenMask conditioned_mask(const ScenarioRecord& record) {
  const int A = static_cast<int>(record.agents.size());
  const int T = record.meta.total_frames();
  TokenMask mask(A, T);
  for (int a = 0; a < A; ++a) {
    for (int t = 0; t < record.meta.conditioned_frames(); ++t) mask.set(a, t, true);
  }
  for (const auto& [a, t] : record.meta.goals) {
    if (a < 0 || a >= A || t < 0 || t >= T) {
      throw CommandError("malformed_corpus", "record " + record.meta.id + ": goal outside the scene");
    }
    mask.set(a, t, true);
  }
  return mask;
}

// Metrics of a generated scene against its reference.
MetricReport score(const ScenarioRecord& generated, const ScenarioRecord& reference) {
  const SceneTensor gen = to_tensor(generated);
  MetricReport r;
  r.ade = ade(gen, to_tensor(reference), conditioned_mask(generated));
  r.r_road = offroad_rate(gen, to_map(reference));
  r.r_col = collision_rate(gen);
  r.m_k = instability(gen, generated.meta.dt_s);
  return r;
}

json report_json(const MetricReport& r) { return json::parse(r.to_json()); }

// ---- commands -------------------------------------------------------------

struct GenDataArgs {
  std::size_t n = 100;
  std::uint64_t seed = 0;
  std::string template_kind = "mix";
  int future_frames = 16;
};

void cmd_gen_data(const GenDataArgs& args, const fs::path& out, Manifest& manifest) {
  DatagenConfig config;
  config.meta.future_frames = args.future_frames;
  if (args.template_kind != "mix") {
    const TemplateKind kind = template_kind_from_string(args.template_kind);
    config.templates = TemplateMix{kind == TemplateKind::kStraight ? 1.0 : 0.0,
                                   kind == TemplateKind::kArc ? 1.0 : 0.0,
                                   kind == TemplateKind::kCrossing ? 1.0 : 0.0};
  }
  const auto corpus = manifest.phase("generate", [&] { return generate_corpus(args.n, config, args.seed); });
  manifest.phase("write", [&] {
    write_corpus((out / "corpus.jsonl").string(), corpus);
    write_text(out / "behavior.json", json::parse(behavior_stats(corpus).to_json()).dump(2) + "\n");
  });
  manifest.output("corpus", (out / "corpus.jsonl").string());
  manifest.output("behavior", (out / "behavior.json").string());
  std::cout << "generated " << corpus.size() << " scenarios\n";
}

struct TrainArgs {
  std::string corpus;
  int steps = 2000;
  int batch = 16;
  double lr = 1e-3;
  int warmup = 100;
  double weight_decay = 0.01;
  int hidden = 64;
  int blocks = 2;
  int heads = 4;
  int queries = 16;
  int grid = 32;
  double val_fraction = 0.05;
  int validation_every = 200;
  std::uint64_t seed = 0;
};

void cmd_train(const TrainArgs& args, const fs::path& out, Manifest& manifest) {
  manifest.input("corpus", args.corpus);
  const auto corpus = manifest.phase("load", [&] { return load_corpus(args.corpus); });
  if (corpus.empty()) throw CommandError("malformed_corpus", "corpus is empty");
  ModelConfig mc;
  mc.hidden = args.hidden;
  mc.block_pairs = args.blocks;
  mc.heads = args.heads;
  mc.map_queries = args.queries;
  mc.grid_size = args.grid;
  mc.seed = args.seed;
  TrainConfig tc;
  tc.learning_rate = args.lr;
  tc.total_steps = args.steps;
  tc.batch_size = args.batch;
  tc.warmup_steps = args.warmup;
  tc.weight_decay = args.weight_decay;
  tc.validation_every = args.validation_every;
  tc.seed = args.seed;
  try {
    mc.validate();
    tc.validate();
  } catch (const std::invalid_argument& e) {
    throw CommandError("config", e.what());
  }

  const ChannelStats stats = fit_stats(corpus);
  SceneDenoiser model(mc, stats);
  auto examples = prepare_examples(corpus, stats);
  size_t held = static_cast<size_t>(args.val_fraction * static_cast<double>(examples.size()));
  if (held >= examples.size()) held = examples.size() - 1;
  std::vector<TrainExample> validation(examples.end() - static_cast<std::ptrdiff_t>(held), examples.end());
  examples.resize(examples.size() - held);

  std::ofstream log(out / "train_log.jsonl");
  try {
    manifest.phase("train", [&] {
      train(model, examples, validation, tc, [&](const TrainLog& l) {
        json j{{"step", l.step}, {"loss", l.loss}, {"learning_rate", l.learning_rate}};
        if (l.validation_loss) {
          j["validation_loss"] = *l.validation_loss;
          std::cout << "step " << l.step << " loss " << l.loss << " validation " << *l.validation_loss << "\n";
        }
        log << j.dump() << "\n";
      });
    });
  } catch (const DivergenceError& e) {
    throw CommandError("divergence", e.what());
  }
  manifest.phase("save", [&] { save_checkpoint((out / "model.ckpt").string(), model, tc); });
  manifest.output("checkpoint", (out / "model.ckpt").string());
  manifest.output("train_log", (out / "train_log.jsonl").string());
}

struct SampleArgs {
  std::string corpus;
  std::string checkpoint;
  bool oracle = false;
  std::string schedule = "full";
  double goal_rate = 0.0;
  std::string guidance = "off";
  int steps = 0;
  int grid = 32;
  std::size_t limit = 0;
  bool trace = false;
  std::uint64_t seed = 0;
};

bool parse_switch(const std::string& value, const std::string& flag) {
  if (value == "on") return true;
  if (value == "off") return false;
  throw CommandError("usage", flag + " expects on or off, got '" + value + "'");
}

void cmd_sample(const SampleArgs& args, const fs::path& out, Manifest& manifest) {
  manifest.input("corpus", args.corpus);
  auto corpus = manifest.phase("load", [&] { return load_corpus(args.corpus); });
  if (args.limit > 0 && corpus.size() > args.limit) corpus.resize(args.limit);
  const DenoiserSource src = load_source(args.checkpoint, args.oracle, corpus, manifest);

  SampleRequest request;
  try {
    request.strategy = strategy_from_string(args.schedule);
  } catch (const std::invalid_argument& e) {
    throw CommandError("usage", e.what());
  }
  if (args.goal_rate < 0.0 || args.goal_rate > 1.0) throw CommandError("usage", "--goal-rate must be in [0, 1]");
  if (args.steps < 0 || args.steps > args.grid) throw CommandError("usage", "--steps must be in [0, --grid]");
  request.grid_size = args.grid;
  request.reduced_steps = args.steps;
  request.goal_rate = args.goal_rate;
  request.guidance = guidance_from(parse_switch(args.guidance, "--guidance"));

  std::vector<ScenarioRecord> generated;
  std::vector<MetricReport> reports;
  std::string traces;
  manifest.phase("sample", [&] {
    for (size_t i = 0; i < corpus.size(); ++i) {
      request.seed = scenario_seed(args.seed, i);
      std::unique_ptr<Denoiser> oracle;
      if (src.oracle()) oracle = oracle_for(corpus[i], src.stats);
      const Denoiser& denoiser = src.oracle() ? *oracle : *src.model;
      SampleResult s = sample_scenario(corpus[i], denoiser, src.stats, request);
      MetricReport r = score(s.record, corpus[i]);
      r.steps = s.steps;
      ScheduleOptions so;
      so.designated_terminal = true;
      r.react_steps = steady_reaction_latency(
          build_schedule(request.strategy, 1, corpus[i].meta.conditioned_frames(),
                         corpus[i].meta.future_frames, request.grid_size, so));
      if (args.trace) {
        for (const StepRecord& step : s.trace.steps) {
          json j = json::parse(Trace{{step}}.to_jsonl());
          j["scenario"] = i;
          traces += j.dump() + "\n";
        }
      }
      reports.push_back(r);
      generated.push_back(std::move(s.record));
    }
  });

  json metrics;
  metrics["aggregate"] = report_json(aggregate(reports));
  metrics["scenarios"] = json::array();
  for (size_t i = 0; i < reports.size(); ++i) {
    json j = report_json(reports[i]);
    j["id"] = generated[i].meta.id;
    metrics["scenarios"].push_back(j);
  }
  manifest.phase("write", [&] {
    write_corpus((out / "generated.jsonl").string(), generated);
    write_text(out / "metrics.json", metrics.dump(2) + "\n");
    if (args.trace) write_text(out / "traces.jsonl", traces);
  });
  manifest.output("generated", (out / "generated.jsonl").string());
  manifest.output("metrics", (out / "metrics.json").string());
  if (args.trace) manifest.output("traces", (out / "traces.jsonl").string());
  std::cout << metrics["aggregate"].dump() << "\n";
}

struct AttackArgs {
  std::string corpus;
  std::string checkpoint;
  double pool_radius = 30.0;
  double half_angle_deg = 30.0;
  std::string guidance = "on";
  int grid = 32;
  std::size_t limit = 0;
  std::uint64_t seed = 0;
};

void cmd_attack(const AttackArgs& args, const fs::path& out, Manifest& manifest) {
  manifest.input("corpus", args.corpus);
  auto corpus = manifest.phase("load", [&] { return load_corpus(args.corpus); });
  if (args.limit > 0 && corpus.size() > args.limit) corpus.resize(args.limit);
  const DenoiserSource src = load_source(args.checkpoint, false, corpus, manifest);
  AttackSpec spec;
  spec.pool_radius = args.pool_radius;
  spec.half_angle = args.half_angle_deg * std::numbers::pi / 180.0;
  spec.grid_size = args.grid;
  spec.guidance = guidance_from(parse_switch(args.guidance, "--guidance"));

  std::vector<ScenarioRecord> attacks;
  json summary;
  summary["scenarios"] = json::array();
  std::map<std::string, int> failures;
  manifest.phase("attack", [&] {
    for (size_t i = 0; i < corpus.size(); ++i) {
      const AttackOutcome o =
          synthesize_attack(corpus[i], *src.model, src.stats, spec, scenario_seed(args.seed, i));
      json j{{"id", corpus[i].meta.id},
             {"attacker", o.attacker_id},
             {"attempts", o.attempts},
             {"checklist", json::parse(o.last.to_json())}};
      summary["scenarios"].push_back(j);
      for (ChecklistFailure f : o.last.failures) ++failures[to_string(f)];
      if (o.record) attacks.push_back(*o.record);
    }
  });
  summary["total"] = corpus.size();
  summary["passed"] = attacks.size();
  summary["failures"] = failures;
  manifest.phase("write", [&] {
    write_corpus((out / "attacks.jsonl").string(), attacks);
    write_text(out / "checklist.json", summary.dump(2) + "\n");
  });
  manifest.output("attacks", (out / "attacks.jsonl").string());
  manifest.output("checklist", (out / "checklist.json").string());
  std::cout << attacks.size() << " of " << corpus.size() << " scenarios produced a passing attack\n";
}

struct EvalArgs {
  std::string generated;
  std::string reference;
};

void cmd_eval(const EvalArgs& args, const fs::path& out, Manifest& manifest) {
  manifest.input("generated", args.generated);
  manifest.input("reference", args.reference);
  const auto gen = manifest.phase("load", [&] { return load_corpus(args.generated); });
  const auto ref = load_corpus(args.reference);
  // Pair by scenario id when ids are unique in the reference, else by position.
  std::map<std::string, size_t> by_id;
  bool unique_ids = true;
  for (size_t i = 0; i < ref.size(); ++i) {
    unique_ids = unique_ids && !ref[i].meta.id.empty() && by_id.emplace(ref[i].meta.id, i).second;
  }
  if (!unique_ids && gen.size() != ref.size()) {
    throw CommandError("mismatch", "generated has " + std::to_string(gen.size()) +
                                       " scenarios, reference " + std::to_string(ref.size()));
  }
  std::vector<MetricReport> reports;
  json scenarios = json::array();
  manifest.phase("score", [&] {
    for (size_t i = 0; i < gen.size(); ++i) {
      const auto& g = gen[i];
      size_t match = i;
      if (unique_ids) {
        const auto it = by_id.find(g.meta.id);
        if (it == by_id.end()) {
          throw CommandError("mismatch", "scenario '" + g.meta.id + "' is not in the reference");
        }
        match = it->second;
      }
      const auto& r = ref[match];
      if (g.agents.size() != r.agents.size() || g.meta.total_frames() != r.meta.total_frames()) {
        throw CommandError("mismatch", "scenario " + std::to_string(i) + " ('" + g.meta.id +
                                           "') does not line up with the reference");
      }
      reports.push_back(score(g, r));
      json j = report_json(reports.back());
      j["id"] = g.meta.id;
      scenarios.push_back(j);
    }
  });
  json metrics{{"aggregate", report_json(aggregate(reports))}, {"scenarios", scenarios}};
  write_text(out / "metrics.json", metrics.dump(2) + "\n");
  manifest.output("metrics", (out / "metrics.json").string());
  std::cout << metrics["aggregate"].dump() << "\n";
}

struct BenchArgs {
  std::string corpus;
  std::string checkpoint;
  bool oracle = false;
  int frames = 16;
  int grid = 32;
  std::size_t limit = 4;
  std::uint64_t seed = 0;
};

void cmd_bench_schedules(const BenchArgs& args, const fs::path& out, Manifest& manifest) {
  std::vector<ScenarioRecord> corpus;
  if (!args.corpus.empty()) {
    manifest.input("corpus", args.corpus);
    corpus = load_corpus(args.corpus);
    if (args.limit > 0 && corpus.size() > args.limit) corpus.resize(args.limit);
    for (const auto& r : corpus) {
      if (r.meta.future_frames != args.frames) {
        throw CommandError("mismatch", "corpus has " + std::to_string(r.meta.future_frames) +
                                           " future frames, --frames is " + std::to_string(args.frames));
      }
    }
  } else {
    DatagenConfig config;
    config.meta.future_frames = args.frames;
    corpus = generate_corpus(args.limit, config, args.seed);
  }
  const bool oracle = args.oracle || args.checkpoint.empty();
  const DenoiserSource src = load_source(args.checkpoint, oracle, corpus, manifest);

  json rows = json::array();
  std::cout << std::left << std::setw(13) << "strategy" << std::setw(8) << "steps" << std::setw(8)
            << "react" << "wall_s\n";
  for (Strategy s : {Strategy::kFullSequence, Strategy::kAutoregressive, Strategy::kPyramidal,
                     Strategy::kTrapezoidal}) {
    ScheduleOptions so;
    so.designated_terminal = true;
    const ScheduleMatrix schedule = build_schedule(s, 1, 5, args.frames, args.grid, so);
    double wall = 0.0;
    manifest.phase("sample_" + to_string(s), [&] {
      const auto t0 = std::chrono::steady_clock::now();
      for (size_t i = 0; i < corpus.size(); ++i) {
        SampleRequest request;
        request.strategy = s;
        request.grid_size = args.grid;
        request.seed = scenario_seed(args.seed, i);
        std::unique_ptr<Denoiser> o;
        if (src.oracle()) o = oracle_for(corpus[i], src.stats);
        sample_scenario(corpus[i], src.oracle() ? *o : *src.model, src.stats, request);
      }
      wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    });
    const double per_scene = corpus.empty() ? 0.0 : wall / static_cast<double>(corpus.size());
    const int react = steady_reaction_latency(schedule);
    rows.push_back({{"strategy", to_string(s)},
                    {"steps", schedule.steps()},
                    {"react_steps", react},
                    {"wall_s", per_scene}});
    std::cout << std::left << std::setw(13) << to_string(s) << std::setw(8) << schedule.steps()
              << std::setw(8) << react << std::fixed << std::setprecision(4) << per_scene << "\n";
    std::cout.unsetf(std::ios::fixed);
  }
  json table{{"frames", args.frames},
             {"grid", args.grid},
             {"scenarios", corpus.size()},
             {"denoiser", src.oracle() ? "oracle" : "checkpoint"},
             {"rows", rows}};
  write_text(out / "schedules.json", table.dump(2) + "\n");
  manifest.output("schedules", (out / "schedules.json").string());
}

struct RenderArgs {
  std::string record;
  std::size_t index = 0;
  bool all = false;
  int first = 0;
  int last = -1;
  double pixels_per_meter = 6.0;
};

void cmd_render(const RenderArgs& args, const fs::path& out, Manifest& manifest) {
  manifest.input("record", args.record);
  const auto corpus = load_corpus(args.record);
  if (corpus.empty()) throw CommandError("malformed_corpus", "no scenarios in " + args.record);
  if (!args.all && args.index >= corpus.size()) {
    throw CommandError("usage", "--index " + std::to_string(args.index) + " out of range");
  }
  RenderOptions options;
  options.first_frame = args.first;
  options.last_frame = args.last;
  options.pixels_per_meter = args.pixels_per_meter;
  const size_t begin = args.all ? 0 : args.index;
  const size_t end = args.all ? corpus.size() : args.index + 1;
  manifest.phase("render", [&] {
    for (size_t i = begin; i < end; ++i) {
      const std::string name = "scene_" + std::to_string(i) + ".svg";
      try {
        write_text(out / name, render_svg(corpus[i], options));
      } catch (const std::invalid_argument& e) {
        throw CommandError("usage", e.what());
      }
      manifest.output(name, (out / name).string());
    }
  });
}

// Fills options of `sub` that were not given on the command line from a flat JSON object.
json apply_config(CLI::App& sub, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CommandError("config", "cannot read config file " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw CommandError("config", path + ": " + e.what());
  }
  if (!doc.is_object()) throw CommandError("config", path + ": expected a flat JSON object");
  json used = json::object();
  for (const auto& [key, value] : doc.items()) {
    if (value.is_object() || value.is_array()) {
      throw CommandError("config", path + ": key '" + key + "' must be a scalar");
    }
    CLI::Option* opt = sub.get_option_no_throw("--" + key);
    if (opt == nullptr) continue;  // keys for other commands
    used[key] = value;
    if (opt->count() > 0) continue;
    const std::string text = value.is_string() ? value.get<std::string>() : value.dump();
    opt->add_result(text);
    opt->run_callback();
  }
  return used;
}

json option_snapshot(const CLI::App& sub) {
  json j = json::object();
  for (const CLI::Option* opt : sub.get_options()) {
    const std::string name = opt->get_name(false, true);
    if (name.rfind("--", 0) != 0 || name == "--help") continue;
    const auto& results = opt->results();
    j[name.substr(2)] = results.empty() ? opt->get_default_str() : results.back();
  }
  return j;
}

void print_error(const std::string& kind, const std::string& message, const std::string& command) {
  json j{{"error", kind}, {"message", message}};
  if (!command.empty()) j["command"] = command;
  std::cerr << j.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-agent driving scene generation"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "Flat JSON config; defaults to $" + std::string(kConfigEnv));
  std::string out_dir;

  GenDataArgs gen;
  TrainArgs tr;
  SampleArgs sa;
  AttackArgs at;
  EvalArgs ev;
  BenchArgs be;
  RenderArgs re;

  auto out_option = [&](CLI::App* sub) { sub->add_option("--out", out_dir, "Run directory")->required(); };

  CLI::App* g = app.add_subcommand("gen-data", "Generate a synthetic corpus");
  out_option(g);
  g->add_option("--n", gen.n, "Number of scenarios")->capture_default_str();
  g->add_option("--seed", gen.seed)->capture_default_str();
  g->add_option("--template", gen.template_kind, "straight, arc, crossing or mix")->capture_default_str();
  g->add_option("--future-frames", gen.future_frames)->capture_default_str();

  CLI::App* t = app.add_subcommand("train", "Train a denoiser checkpoint");
  out_option(t);
  t->add_option("--corpus", tr.corpus)->required();
  t->add_option("--steps", tr.steps)->capture_default_str();
  t->add_option("--batch", tr.batch)->capture_default_str();
  t->add_option("--lr", tr.lr)->capture_default_str();
  t->add_option("--warmup", tr.warmup)->capture_default_str();
  t->add_option("--weight-decay", tr.weight_decay)->capture_default_str();
  t->add_option("--hidden", tr.hidden)->capture_default_str();
  t->add_option("--blocks", tr.blocks, "Temporal/spatial block pairs")->capture_default_str();
  t->add_option("--heads", tr.heads)->capture_default_str();
  t->add_option("--queries", tr.queries, "Map tokens")->capture_default_str();
  t->add_option("--grid", tr.grid)->capture_default_str();
  t->add_option("--val-fraction", tr.val_fraction)->capture_default_str();
  t->add_option("--validation-every", tr.validation_every)->capture_default_str();
  t->add_option("--seed", tr.seed)->capture_default_str();

  CLI::App* s = app.add_subcommand("sample", "Generate the futures of a corpus");
  out_option(s);
  s->add_option("--corpus", sa.corpus)->required();
  s->add_option("--checkpoint", sa.checkpoint);
  s->add_flag("--oracle", sa.oracle, "Use the ground-truth oracle denoiser");
  s->add_option("--schedule", sa.schedule, "full, ar, pyramidal or trapezoidal")->capture_default_str();
  s->add_option("--goal-rate", sa.goal_rate)->capture_default_str();
  s->add_option("--guidance", sa.guidance, "on or off")->capture_default_str();
  s->add_option("--steps", sa.steps, "Sampling levels of a skipped grid; 0 for the full schedule")
      ->capture_default_str();
  s->add_option("--grid", sa.grid)->capture_default_str();
  s->add_option("--limit", sa.limit, "Only the first N scenarios; 0 for all")->capture_default_str();
  s->add_flag("--trace", sa.trace, "Write per-step traces");
  s->add_option("--seed", sa.seed)->capture_default_str();

  CLI::App* a = app.add_subcommand("attack", "Synthesize safety-critical scenarios");
  out_option(a);
  a->add_option("--corpus", at.corpus)->required();
  a->add_option("--checkpoint", at.checkpoint)->required();
  a->add_option("--pool-radius", at.pool_radius)->capture_default_str();
  a->add_option("--half-angle-deg", at.half_angle_deg)->capture_default_str();
  a->add_option("--guidance", at.guidance, "on or off")->capture_default_str();
  a->add_option("--grid", at.grid)->capture_default_str();
  a->add_option("--limit", at.limit)->capture_default_str();
  a->add_option("--seed", at.seed)->capture_default_str();

  CLI::App* e = app.add_subcommand("eval", "Score generated scenarios against references");
  out_option(e);
  e->add_option("--generated", ev.generated)->required();
  e->add_option("--reference", ev.reference)->required();

  CLI::App* b = app.add_subcommand("bench-schedules", "Steps, reaction and time per strategy");
  out_option(b);
  b->add_option("--corpus", be.corpus, "Defaults to a small generated corpus");
  b->add_option("--checkpoint", be.checkpoint, "Defaults to the oracle denoiser");
  b->add_flag("--oracle", be.oracle);
  b->add_option("--frames", be.frames)->capture_default_str();
  b->add_option("--grid", be.grid)->capture_default_str();
  b->add_option("--limit", be.limit)->capture_default_str();
  b->add_option("--seed", be.seed)->capture_default_str();

  CLI::App* r = app.add_subcommand("render", "Top-down SVG of a scenario");
  out_option(r);
  r->add_option("--record", re.record, "Scenario JSON-Lines file")->required();
  r->add_option("--index", re.index)->capture_default_str();
  r->add_flag("--all", re.all, "Render every scenario");
  r->add_option("--first", re.first)->capture_default_str();
  r->add_option("--last", re.last, "Inclusive; -1 for the final frame")->capture_default_str();
  r->add_option("--pixels-per-meter", re.pixels_per_meter)->capture_default_str();

  // Required options may come from the config file, so they are checked after merging.
  std::vector<std::pair<CLI::Option*, std::string>> required;
  for (CLI::App* sub : app.get_subcommands({})) {
    for (CLI::Option* opt : sub->get_options()) {
      if (opt->get_required()) {
        opt->required(false);
        required.emplace_back(opt, sub->get_name());
      }
    }
  }

  std::string command;
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& help) {
    return app.exit(help);
  } catch (const CLI::CallForAllHelp& help) {
    return app.exit(help);
  } catch (const CLI::ParseError& err) {
    print_error("usage", err.what(), "");
    return 2;
  }

  CLI::App* sub = app.get_subcommands().front();
  command = sub->get_name();
  std::unique_ptr<Manifest> manifest;
  fs::path out;
  try {
    json used = json::object();
    if (config_path.empty()) {
      if (const char* env = std::getenv(kConfigEnv); env != nullptr && *env != '\0') config_path = env;
    }
    if (!config_path.empty()) used = apply_config(*sub, config_path);
    for (const auto& [opt, owner] : required) {
      if (owner == command && opt->count() == 0) {
        throw CommandError("usage", opt->get_name() + " is required");
      }
    }
    out = out_dir;
    fs::create_directories(out);
    manifest = std::make_unique<Manifest>(command);
    json snapshot = option_snapshot(*sub);
    if (!config_path.empty()) {
      manifest->input("config", config_path);
      snapshot["config_file"] = used;
    }
    manifest->config(snapshot);

    if (command == "gen-data") {
      manifest->seed(gen.seed);
      cmd_gen_data(gen, out, *manifest);
    } else if (command == "train") {
      manifest->seed(tr.seed);
      cmd_train(tr, out, *manifest);
    } else if (command == "sample") {
      manifest->seed(sa.seed);
      cmd_sample(sa, out, *manifest);
    } else if (command == "attack") {
      manifest->seed(at.seed);
      cmd_attack(at, out, *manifest);
    } else if (command == "eval") {
      cmd_eval(ev, out, *manifest);
    } else if (command == "bench-schedules") {
      manifest->seed(be.seed);
      cmd_bench_schedules(be, out, *manifest);
    } else if (command == "render") {
      cmd_render(re, out, *manifest);
    }
    manifest->write(out, "ok");
    return 0;
  } catch (const CommandError& err) {
    print_error(err.kind, err.what(), command);
  } catch (const CLI::ParseError& err) {
    print_error("usage", err.what(), command);
  } catch (const std::exception& err) {
    print_error("internal", err.what(), command);
  }
  if (manifest) {
    try {
      manifest->write(out, "error");
    } catch (const std::exception&) {
    }
  }
  return 1;
}
