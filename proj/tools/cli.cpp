#include "cli.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "molace/checkpoint.hpp"
#include "molace/experiments.hpp"
#include "molace/latent_sim.hpp"
#include "molace/pipeline.hpp"

namespace molace {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& message, bool validation)
      : std::runtime_error(message), stage_(std::move(stage)), validation_(validation) {}
  const std::string& stage() const { return stage_; }
  bool validation() const { return validation_; }

 private:
  std::string stage_;
  bool validation_;
};

// Input errors raised inside a stage count as validation failures unless the
// stage reads a file whose contents turned out to be unusable.
template <typename F>
auto stage(const std::string& name, F&& fn, bool reads_file = false) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const InvalidArgument& e) {
    throw StageError(name, e.what(), !reads_file);
  } catch (const std::exception& e) {
    throw StageError(name, e.what(), false);
  }
}

std::string timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw InvalidArgument(what + " path is empty");
  if (!fs::is_regular_file(path)) throw InvalidArgument(what + " not found: " + path);
}

// Artifacts go to a staging directory and are moved into place only once the
// whole command has succeeded.
class Artifacts {
 public:
  Artifacts(fs::path dir, const std::string& command) : dir_(std::move(dir)) {
    staging_ = dir_ / (".staging-" + command);
    fs::remove_all(staging_);
    fs::create_directories(staging_);
  }
  ~Artifacts() {
    std::error_code ec;
    fs::remove_all(staging_, ec);
  }
  Artifacts(const Artifacts&) = delete;
  Artifacts& operator=(const Artifacts&) = delete;

  const fs::path& staging() const { return staging_; }
  fs::path path(const std::string& name) const { return staging_ / name; }

  void write_text(const std::string& name, const std::string& text) const {
    std::ofstream f(path(name), std::ios::binary);
    f << text;
    if (!f) throw IoError("cannot write " + path(name).string());
  }
  void write_json(const std::string& name, const json& j) const { write_text(name, j.dump(2) + "\n"); }

  std::vector<std::string> commit() {
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(staging_))
      if (e.is_regular_file()) names.push_back(e.path().filename().string());
    std::sort(names.begin(), names.end());
    for (const auto& n : names) fs::rename(staging_ / n, dir_ / n);
    return names;
  }

 private:
  fs::path dir_;
  fs::path staging_;
};

struct Overrides {
  std::optional<std::string> config_file, output_dir, backend, checkpoint, corpus, steering, method, gate_mode;
  std::optional<std::size_t> layer, pairs, workers, max_new_tokens, topk, agents, rounds;
  std::optional<std::uint64_t> seed;
  std::optional<double> alpha, sigma, kappa, shrink, temperature, top_p;
  std::vector<double> alphas;
  bool no_sample_gate = false, counter_bias = false, explore = false;
  bool quality = false, diversity = false, refutation = false;
  int verbose = 0;
};

RunConfig effective_config(const Overrides& o) {
  RunConfig c;
  if (o.config_file) {
    require_file(*o.config_file, "config file");
    std::ifstream f(*o.config_file);
    json j;
    try {
      j = json::parse(f);
    } catch (const json::exception& e) {
      throw InvalidArgument("config file is not valid JSON: " + std::string(e.what()));
    }
    try {
      c = RunConfig::from_json(j);
    } catch (const json::exception& e) {
      throw InvalidArgument("config file: " + std::string(e.what()));
    }
  }
  if (const char* env = std::getenv("MOLACE_OUTPUT_DIR"); env && *env) c.output_dir = env;
  if (o.output_dir) c.output_dir = *o.output_dir;
  if (o.backend) c.backend = *o.backend;
  if (o.checkpoint) c.checkpoint = *o.checkpoint;
  if (o.corpus) c.corpus = *o.corpus;
  if (o.steering) c.steering = *o.steering;
  if (o.method) c.method = parse_method(*o.method);
  if (o.layer) c.layer = *o.layer;
  if (o.pairs) c.pairs = *o.pairs;
  if (o.workers) c.workers = *o.workers;
  if (o.seed) c.seed = *o.seed;
  if (o.alpha) c.alpha = *o.alpha;
  if (!o.alphas.empty()) c.alphas = o.alphas;
  if (o.gate_mode) c.gate.mode = parse_gate_mode(*o.gate_mode);
  if (o.sigma) c.gate.sigma = *o.sigma;
  if (o.kappa) c.gate.kappa = *o.kappa;
  if (o.shrink) c.gate.shrink_lambda = *o.shrink;
  if (o.topk) c.gate.topk = *o.topk;
  if (o.no_sample_gate) c.gate.sample_gate = false;
  if (o.counter_bias) c.gate.counter_bias = true;
  if (o.explore) c.gate.explore = true;
  if (o.temperature) c.generation.temperature = *o.temperature;
  if (o.top_p) c.generation.top_p = *o.top_p;
  if (o.max_new_tokens) c.generation.max_new_tokens = *o.max_new_tokens;
  if (o.agents) c.debate.n_agents = *o.agents;
  if (o.rounds) c.debate.rounds = *o.rounds;
  if (o.quality) c.debate.quality = true;
  if (o.diversity) c.debate.diversity = true;
  if (o.refutation) c.debate.refutation = true;
  c.verbosity = std::max(c.verbosity, o.verbose);
  return c;
}

void validate_run(const RunConfig& c) {
  c.validate();
  if (c.backend == "toy") require_file(c.checkpoint, "checkpoint");
  if (!c.corpus.empty()) require_file(c.corpus, "corpus");
  if (!c.steering.empty()) require_file(c.steering, "steering vector");
}

std::vector<Item> load_items(const RunConfig& c, std::ostream& err) {
  if (c.corpus.empty()) return bundled_corpus();
  CorpusLoad load = load_corpus(c.corpus);
  for (const auto& e : load.errors) err << "corpus: skipped " << e.item_id << " (" << e.message << ")\n";
  if (load.items.empty()) throw InvalidArgument("corpus has no valid items: " + c.corpus);
  return load.items;
}

SteeringVector obtain_steering(const Backend& backend, const RunConfig& c) {
  if (c.steering.empty()) return stage("extract", [&] { return extract_steering(backend, c); });
  SteeringVector v = stage("load-steering", [&] { return load_steering(c.steering); }, true);
  if (!v.model_fingerprint.empty() && v.model_fingerprint != backend.model().fingerprint())
    throw StageError("load-steering", "steering vector was extracted from a different model", true);
  if (v.layer >= backend.model().layer_count() || v.dim() != backend.model().hidden_dim())
    throw StageError("load-steering", "steering vector does not fit the backend", true);
  return v;
}

json tagged(json row, const RunConfig& c) {
  row["fingerprint"] = c.fingerprint();
  row["seed"] = c.seed;
  return row;
}

json manifest(const std::string& command, const RunConfig& c, const json& extra) {
  json m{{"command", command},
         {"config", c.to_json()},
         {"fingerprint", c.fingerprint()},
         {"seed", c.seed},
         {"created_at", timestamp()}};
  for (const auto& [k, v] : extra.items()) m[k] = v;
  return m;
}

void finish(Artifacts& out_dir, const std::string& command, const RunConfig& c, json extra, std::ostream& out) {
  const fs::path manifest_name = "manifest-" + command + ".json";
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(out_dir.staging()))
    if (e.is_regular_file()) names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  extra["artifacts"] = names;
  out_dir.write_json(manifest_name.string(), manifest(command, c, extra));
  for (const auto& n : out_dir.commit()) out << "wrote " << (fs::path(c.output_dir) / n).string() << "\n";
}

// ------------------------------------------------------------------ commands

struct TrainOptions {
  std::size_t steps = 3000;
  std::optional<std::string> out;
  bool allow_weak = false;
};

int cmd_train(const RunConfig& c, const TrainOptions& o, std::ostream& out) {
  ToyTrainConfig tc;
  tc.steps = o.steps;
  tc.seed = c.seed;
  tc.corpus.seed = c.seed;
  tc.require_separation = !o.allow_weak;
  if (tc.steps < 1) throw InvalidArgument("steps must be >= 1");
  if (c.verbosity > 0)
    tc.on_progress = [&out](std::size_t step, double loss) {
      if (step % 250 == 0) out << "step " << step << " loss " << loss << "\n";
    };
  const fs::path target = o.out ? fs::path(*o.out) : fs::path(c.output_dir) / "toy.ckpt";
  const auto t0 = std::chrono::steady_clock::now();
  ToyModel toy = stage("train", [&] { return train_toy(tc); });
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  fs::create_directories(c.output_dir);
  Artifacts art(c.output_dir, "train-toy");
  const fs::path tmp = target.string() + ".tmp";
  stage("save-checkpoint", [&] {
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    save_checkpoint(tmp, make_checkpoint(toy, tc));
    fs::rename(tmp, target);
    return 0;
  });
  art.write_json("train_report.json", tagged(toy.report.to_json(), c));
  finish(art, "train-toy", c,
         {{"checkpoint", target.string()}, {"steps", tc.steps}, {"model_fingerprint", toy.model.fingerprint()},
          {"train_seconds", seconds}},
         out);
  out << "checkpoint " << target.string() << "\n" << toy.report.to_json().dump() << "\n";
  return 0;
}

int cmd_extract(const RunConfig& c, std::ostream& out) {
  validate_run(c);
  auto backend = stage("load-backend", [&] { return make_backend(c); }, true);
  SteeringVector v = stage("extract", [&] { return extract_steering(*backend, c); });
  Artifacts art(c.output_dir, "extract");
  art.write_json("steering.json", tagged(steering_to_json(v), c));
  finish(art, "extract", c, {{"layer", v.layer}, {"raw_norm", v.raw_norm}}, out);
  out << "layer " << v.layer << " raw_norm " << v.raw_norm << " norm " << v.direction.norm() << "\n";
  return 0;
}

std::vector<json> prediction_rows(const std::vector<Prediction>& preds, const RunConfig& c) {
  std::vector<json> rows;
  rows.reserve(preds.size());
  for (const auto& p : preds) rows.push_back(tagged(p.to_json(), c));
  return rows;
}

int cmd_gen(const RunConfig& c, std::ostream& out, std::ostream& err) {
  validate_run(c);
  auto backend = stage("load-backend", [&] { return make_backend(c); }, true);
  const auto items = stage("load-corpus", [&] { return prepare_items(load_items(c, err), c.seed); });
  std::optional<SteeringVector> v;
  if (c.method != Method::base) v = obtain_steering(*backend, c);
  const MethodSpec spec{c.method, c.alpha};
  GenerationRun run =
      stage("gen", [&] { return generate_corpus(*backend, items, v ? &*v : nullptr, c, spec, c.verbosity > 0); });
  Artifacts art(c.output_dir, "gen");
  stage("write", [&] {
    write_jsonl(art.path("generations.jsonl"), prediction_rows(run.predictions, c));
    if (c.verbosity > 0) write_jsonl(art.path("traces.jsonl"), run.traces);
    return 0;
  });
  finish(art, "gen", c, {{"predictions", run.predictions.size()}}, out);
  return 0;
}

int cmd_debate(const RunConfig& c, std::ostream& out, std::ostream& err) {
  validate_run(c);
  auto backend = stage("load-backend", [&] { return make_backend(c); }, true);
  const auto items = stage("load-corpus", [&] { return prepare_items(load_items(c, err), c.seed); });
  std::optional<SteeringVector> v;
  if (c.method != Method::base) v = obtain_steering(*backend, c);
  DebateRun run = stage("debate", [&] { return debate_corpus(*backend, items, v ? &*v : nullptr, c, {c.method, c.alpha}); });
  Artifacts art(c.output_dir, "debate");
  std::vector<json> transcripts;
  for (const auto& t : run.transcripts) transcripts.push_back(tagged(t, c));
  stage("write", [&] {
    write_jsonl(art.path("debate.jsonl"), prediction_rows(run.predictions, c));
    write_jsonl(art.path("transcripts.jsonl"), transcripts);
    return 0;
  });
  finish(art, "debate", c, {{"predictions", run.predictions.size()}}, out);
  return 0;
}

int cmd_eval(RunConfig c, const std::string& input, double threshold, std::ostream& out, std::ostream& err) {
  require_file(input, "input");
  if (!c.corpus.empty()) require_file(c.corpus, "corpus");
  const auto rows = stage("read-input", [&] { return read_jsonl(input); });
  std::vector<Prediction> preds;
  std::optional<std::string> source_fingerprint;
  stage("read-input", [&] {
    for (const auto& r : rows) {
      preds.push_back(Prediction::from_json(r));
      if (r.contains("seed")) c.seed = r.at("seed").get<std::uint64_t>();
      if (r.contains("fingerprint")) source_fingerprint = r.at("fingerprint").get<std::string>();
    }
    return 0;
  });
  const auto items = stage("load-corpus", [&] { return prepare_items(load_items(c, err), c.seed); });
  LexicalJudge judge(threshold);
  stage("score", [&] {
    score_predictions(preds, items, judge);
    return 0;
  });
  const std::string fp = source_fingerprint.value_or(c.fingerprint());
  const RunSummary summary = stage("summarize", [&] {
    return summarize(preds, fp, json{{"seed", c.seed}, {"item_seed", "derive_seed(seed, fnv1a(id), mode, type)"}});
  });
  Artifacts art(c.output_dir, "eval");
  stage("write", [&] { return write_results(preds, summary, art.staging()); });
  finish(art, "eval", c, {{"input", input}, {"source_fingerprint", fp}, {"judge_threshold", threshold}}, out);
  out << summary.accuracy.dump() << "\n";
  return 0;
}

int cmd_probe(const RunConfig& c, std::size_t per_class, std::ostream& out) {
  validate_run(c);
  if (per_class < 2) throw InvalidArgument("per-class must be >= 2");
  auto backend = stage("load-backend", [&] { return make_backend(c); }, true);
  const auto prompts = stage("probe-prompts", [&] { return backend->probe_prompts(per_class, c.seed); });
  const ProbeReport report = stage("probe", [&] { return layer_sweep(backend->model(), prompts, "stance", c.seed); });
  std::vector<int> labels;
  for (const auto& p : prompts) labels.push_back(p.label);
  const std::string pca = stage("pca", [&] {
    const auto acts = capture_layer(backend->model(), prompts, report.best_probe_layer);
    return pca_csv(pca_project(acts.rows), labels);
  });
  Artifacts art(c.output_dir, "probe");
  art.write_json("probe.json", tagged(report.to_json(), c));
  art.write_text("probe.csv", report.to_csv());
  art.write_text("pca.csv", pca);
  finish(art, "probe", c, {{"per_class", per_class}, {"pca_layer", report.best_probe_layer}}, out);
  return 0;
}

struct SimOptions {
  bool echo_demo = false;
  std::optional<std::string> space;
  std::string prompt = "x";
  std::size_t agents = 2;
  std::size_t rounds = 7;
  std::string mode = "expected";
  bool cumulative = false;
};

int cmd_sim(const RunConfig& c, const SimOptions& o, std::ostream& out) {
  std::string csv;
  json extra;
  if (o.echo_demo) {
    const auto traj = stage("sim", [&] {
      return echo_trajectory(echo_space(), "x", "z*", o.agents, o.rounds,
                             o.cumulative ? Evidence::cumulative : Evidence::last_round);
    });
    std::ostringstream os;
    os << std::setprecision(17) << "round,answer,probability\n";
    for (std::size_t t = 0; t < traj.size(); ++t)
      os << t << ",z*," << traj[t] << "\n" << t << ",other," << 1.0 - traj[t] << "\n";
    csv = os.str();
    extra = {{"echo_demo", true}, {"trajectory", traj}};
  } else {
    if (!o.space) throw InvalidArgument("sim needs --space or --echo-demo");
    require_file(*o.space, "concept space");
    const ConceptSpace space = stage("load-space", [&] { return ConceptSpace::load(*o.space); }, true);
    SimMode mode;
    if (o.mode == "expected") mode = SimMode::expected;
    else if (o.mode == "sampled") mode = SimMode::sampled;
    else throw InvalidArgument("mode must be expected or sampled");
    const SimResult r = stage("sim", [&] { return simulate_debate(space, o.prompt, o.agents, o.rounds, mode, c.seed); });
    csv = sim_csv(space, r);
    extra = {{"space", *o.space}, {"warnings", r.warnings}};
  }
  extra["agents"] = o.agents;
  extra["rounds"] = o.rounds;
  fs::create_directories(c.output_dir);
  Artifacts art(c.output_dir, "sim");
  art.write_text("sim.csv", csv);
  finish(art, "sim", c, extra, out);
  return 0;
}

int cmd_build_prompts(const RunConfig& c, const std::string& families, std::ostream& out, std::ostream& err) {
  if (!c.corpus.empty()) require_file(c.corpus, "corpus");
  std::vector<BiasFamily> fams;
  std::stringstream ss(families);
  for (std::string f; std::getline(ss, f, ',');)
    if (!trim(f).empty()) fams.push_back(parse_bias_family(trim(f)));
  if (fams.empty()) throw InvalidArgument("no bias families given");
  auto items = stage("load-corpus", [&] { return load_items(c, err); });
  TemplateRewriter client;
  json errors = json::array();
  for (auto& item : items) {
    for (BiasFamily f : fams) {
      RewriteOutcome r = stage("rewrite", [&] { return rewrite_item(client, item, f); });
      if (r.error)
        errors.push_back({{"item_id", r.error->item_id}, {"stage", r.error->stage}, {"message", r.error->message}});
      item = std::move(r.item);
    }
    item = stage("build-questions", [&] { return build_choice_questions(item, c.seed); });
  }
  Artifacts art(c.output_dir, "build-prompts");
  stage("write", [&] {
    save_corpus(items, art.path("corpus.jsonl"));
    return 0;
  });
  art.write_json("errors.json", tagged(json{{"errors", errors}}, c));
  finish(art, "build-prompts", c, {{"families", families}, {"items", items.size()}}, out);
  return 0;
}

int cmd_ablate(const RunConfig& c, std::size_t prompts, bool corpus_sweep, std::ostream& out, std::ostream& err) {
  validate_run(c);
  auto backend = stage("load-backend", [&] { return make_backend(c); }, true);
  const SteeringVector v = obtain_steering(*backend, c);
  Artifacts art(c.output_dir, "ablate");
  json extra = json::object();
  if (const auto* toy = dynamic_cast<const ToyBackend*>(backend.get())) {
    ToyAblationConfig ac;
    ac.prompts = prompts;
    ac.grid = AlphaGrid(c.alphas);
    ac.gate = c.gate;
    ac.seed = c.seed;
    const auto r = stage("toy-ablation", [&] { return run_toy_ablation(toy->toy(), v, ac); });
    art.write_json("ablation.json", tagged(r.to_json(), c));
    art.write_text("ablation.csv", r.to_csv());
    extra["coverage"] = r.coverage.coverage;
    out << r.to_json().dump() << "\n";
  }
  if (corpus_sweep) {
    const auto items = stage("load-corpus", [&] { return prepare_items(load_items(c, err), c.seed); });
    LexicalJudge judge;
    const AlphaSweep sweep = stage("alpha-sweep", [&] { return alpha_sweep(*backend, items, v, c, judge); });
    art.write_json("alpha_sweep.json", tagged(sweep.coverage.to_json(sweep.alphas), c));
  }
  finish(art, "ablate", c, extra, out);
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Mixture decoding over steered model experts", "molace"};
  app.require_subcommand(1);
  app.fallthrough();

  Overrides o;
  app.add_option("--config", o.config_file, "JSON run configuration");
  app.add_option("-o,--output-dir", o.output_dir, "Output directory (env MOLACE_OUTPUT_DIR)");
  app.add_option("--backend", o.backend, "toy or analytic");
  app.add_option("--checkpoint", o.checkpoint, "Toy model checkpoint");
  app.add_option("--corpus", o.corpus, "Corpus file (JSON or JSONL); bundled corpus when absent");
  app.add_option("--steering", o.steering, "Steering vector file; extracted on the fly when absent");
  app.add_option("--layer", o.layer, "Steering layer (default: middle layer)");
  app.add_option("--pairs", o.pairs, "Contrast pairs for extraction");
  app.add_option("--seed", o.seed, "Global seed");
  app.add_option("--workers", o.workers, "Worker threads");
  app.add_option("--alphas", o.alphas, "Alpha grid")->delimiter(',');
  app.add_option("--method", o.method, "base, steered, molace or uniform");
  app.add_option("--alpha", o.alpha, "Alpha of the steered method");
  app.add_option("--gate-mode", o.gate_mode, "neutralize or amplify");
  app.add_option("--sigma", o.sigma, "Gate RBF width");
  app.add_option("--kappa", o.kappa, "Dirichlet concentration");
  app.add_option("--shrink", o.shrink, "Shrinkage toward uniform");
  app.add_option("--topk", o.topk, "Keep the k largest gate weights");
  app.add_flag("--no-sample-gate", o.no_sample_gate, "Use the mean gate weights");
  app.add_flag("--counter-bias", o.counter_bias, "Flip the gate center");
  app.add_flag("--explore", o.explore, "Use the exploration concentration");
  app.add_option("--temperature", o.temperature, "Sampling temperature");
  app.add_option("--top-p", o.top_p, "Nucleus mass");
  app.add_option("--max-new-tokens", o.max_new_tokens, "Generation budget");
  app.add_flag("-v,--verbose", o.verbose, "Increase verbosity");

  TrainOptions train;
  auto* train_cmd = app.add_subcommand("train-toy", "Train the toy transformer on the planted-bias corpus");
  train_cmd->add_option("--steps", train.steps, "Optimizer steps");
  train_cmd->add_option("--out", train.out, "Checkpoint path (default: <output-dir>/toy.ckpt)");
  train_cmd->add_flag("--allow-weak", train.allow_weak, "Keep a model whose stance separation is too small");

  auto* extract_cmd = app.add_subcommand("extract", "Extract a steering vector from contrast pairs");
  auto* gen_cmd = app.add_subcommand("gen", "Generate answers over a corpus");

  auto* debate_cmd = app.add_subcommand("debate", "Multi-agent debate over a corpus");
  debate_cmd->add_option("--agents", o.agents, "Number of agents");
  debate_cmd->add_option("--rounds", o.rounds, "Debate rounds");
  debate_cmd->add_flag("--quality", o.quality, "Quality pruning between rounds");
  debate_cmd->add_flag("--diversity", o.diversity, "Diversity pruning between rounds");
  debate_cmd->add_flag("--refutation", o.refutation, "Refute-then-fix between rounds");

  std::string input;
  double threshold = 0.6;
  auto* eval_cmd = app.add_subcommand("eval", "Score predictions and aggregate");
  eval_cmd->add_option("--input", input, "generations.jsonl or debate.jsonl")->required();
  eval_cmd->add_option("--judge-threshold", threshold, "Lexical judge F1 threshold");

  std::size_t per_class = 60;
  auto* probe_cmd = app.add_subcommand("probe", "Layer-wise stance probes and clustering");
  probe_cmd->add_option("--per-class", per_class, "Prompts per stance label");

  SimOptions sim;
  auto* sim_cmd = app.add_subcommand("sim", "Latent-concept debate simulation");
  sim_cmd->add_flag("--echo-demo", sim.echo_demo, "Two-concept echo-chamber trajectory");
  sim_cmd->add_option("--space", sim.space, "Concept space JSON");
  sim_cmd->add_option("--prompt", sim.prompt, "Prompt key in the concept space");
  sim_cmd->add_option("--agents", sim.agents, "Agents");
  sim_cmd->add_option("--rounds", sim.rounds, "Rounds");
  sim_cmd->add_option("--mode", sim.mode, "expected or sampled");
  sim_cmd->add_flag("--cumulative", sim.cumulative, "Condition on every earlier round");

  std::string families = "confirmation,stance,negation";
  auto* build_cmd = app.add_subcommand("build-prompts", "Rewrite biased prompts and build choice questions");
  build_cmd->add_option("--families", families, "Comma-separated bias families");

  std::size_t ablate_prompts = 500;
  bool corpus_sweep = false;
  auto* ablate_cmd = app.add_subcommand("ablate", "Alpha ablation with coverage statistics");
  ablate_cmd->add_option("--prompts", ablate_prompts, "Held-out toy prompts");
  ablate_cmd->add_flag("--corpus-sweep", corpus_sweep, "Also sweep alpha over the corpus");

  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  if (args.empty()) argv.push_back("molace");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    const RunConfig c = effective_config(o);
    out << "config " << c.to_json().dump() << "\n";
    fs::create_directories(c.output_dir);
    if (train_cmd->parsed()) return cmd_train(c, train, out);
    if (extract_cmd->parsed()) return cmd_extract(c, out);
    if (gen_cmd->parsed()) return cmd_gen(c, out, err);
    if (debate_cmd->parsed()) return cmd_debate(c, out, err);
    if (eval_cmd->parsed()) return cmd_eval(c, input, threshold, out, err);
    if (probe_cmd->parsed()) return cmd_probe(c, per_class, out);
    if (sim_cmd->parsed()) return cmd_sim(c, sim, out);
    if (build_cmd->parsed()) return cmd_build_prompts(c, families, out, err);
    if (ablate_cmd->parsed()) return cmd_ablate(c, ablate_prompts, corpus_sweep, out, err);
  } catch (const StageError& e) {
    err << "error [" << e.stage() << "]: " << e.what() << "\n";
    return e.validation() ? 1 : 2;
  } catch (const InvalidArgument& e) {
    err << "error [config]: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error [run]: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace molace
