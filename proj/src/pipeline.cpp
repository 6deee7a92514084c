#include "molace/pipeline.hpp"

#include <atomic>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>

#include "molace/checkpoint.hpp"
#include "molace/experiments.hpp"

namespace molace {

using nlohmann::json;

std::string_view method_name(Method m) {
  switch (m) {
    case Method::base: return "base";
    case Method::steered: return "steered";
    case Method::molace: return "molace";
    case Method::uniform: return "uniform";
  }
  return "base";
}

Method parse_method(std::string_view s) {
  if (s == "base") return Method::base;
  if (s == "steered") return Method::steered;
  if (s == "molace") return Method::molace;
  if (s == "uniform") return Method::uniform;
  throw InvalidArgument("unknown method: " + std::string(s));
}

void RunConfig::validate() const {
  if (backend != "toy" && backend != "analytic") throw InvalidArgument("backend must be toy or analytic");
  if (backend == "toy" && checkpoint.empty()) throw InvalidArgument("toy backend needs a checkpoint path");
  const AlphaGrid grid(alphas);
  gate.validate(grid.size());
  generation.validate();
  debate.validate();
  if (pairs < 1) throw InvalidArgument("pairs must be >= 1");
  if (workers < 1) throw InvalidArgument("workers must be >= 1");
  if (method == Method::steered && !grid.index_of(alpha)) throw InvalidArgument("steered alpha must lie on the grid");
}

json RunConfig::to_json() const {
  return {{"backend", backend},
          {"checkpoint", checkpoint},
          {"layer", layer ? json(*layer) : json()},
          {"alphas", alphas},
          {"gate", gate.to_json()},
          {"generation",
           {{"temperature", generation.temperature},
            {"top_p", generation.top_p},
            {"max_new_tokens", generation.max_new_tokens}}},
          {"debate", debate.to_json()},
          {"corpus", corpus},
          {"output_dir", output_dir},
          {"seed", seed},
          {"verbosity", verbosity},
          {"pairs", pairs},
          {"workers", workers},
          {"method", method_name(method)},
          {"alpha", alpha},
          {"steering", steering}};
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  c.backend = j.value("backend", c.backend);
  c.checkpoint = j.value("checkpoint", c.checkpoint);
  if (j.contains("layer") && !j.at("layer").is_null()) c.layer = j.at("layer").get<std::size_t>();
  c.alphas = j.value("alphas", c.alphas);
  if (j.contains("gate")) c.gate = GateConfig::from_json(j.at("gate"));
  if (j.contains("generation")) {
    const auto& g = j.at("generation");
    c.generation.temperature = g.value("temperature", c.generation.temperature);
    c.generation.top_p = g.value("top_p", c.generation.top_p);
    c.generation.max_new_tokens = g.value("max_new_tokens", c.generation.max_new_tokens);
  }
  if (j.contains("debate")) c.debate = DebateConfig::from_json(j.at("debate"));
  c.corpus = j.value("corpus", c.corpus);
  c.output_dir = j.value("output_dir", c.output_dir);
  c.seed = j.value("seed", c.seed);
  c.verbosity = j.value("verbosity", c.verbosity);
  c.pairs = j.value("pairs", c.pairs);
  c.workers = j.value("workers", c.workers);
  if (j.contains("method")) c.method = parse_method(j.at("method").get<std::string>());
  c.alpha = j.value("alpha", c.alpha);
  c.steering = j.value("steering", c.steering);
  return c;
}

std::string RunConfig::fingerprint() const {
  json j = to_json();
  j.erase("output_dir");
  j.erase("verbosity");
  j.erase("workers");
  return hex64(fnv1a(j.dump()));
}

// ---------------------------------------------------------------- backends

std::size_t ToyBackend::topic_of(const Item& item) const {
  return static_cast<std::size_t>(fnv1a(item.id) % toy_.corpus.config().topics);
}

namespace {

Stance stance_of(PromptMode mode) {
  switch (prompt_mode_lean(mode)) {
    case 1: return Stance::support;
    case -1: return Stance::challenge;
    default: return Stance::neutral;
  }
}

std::string_view analytic_marker(PromptMode mode) { return stance_marker(stance_of(mode)); }

}  // namespace

ToyExample ToyBackend::example_for(const Item& item, PromptMode mode, std::uint64_t seed) const {
  Rng rng(seed);
  return toy_.corpus.sample_example(rng, Split::held_out, stance_of(mode), topic_of(item));
}

PromptTokens ToyBackend::prompt_for(const Item& item, PromptMode mode, std::uint64_t seed) const {
  return toy_.corpus.prompt(example_for(item, mode, seed));
}

std::optional<bool> ToyBackend::truthful(const Item& item, std::span<const TokenId> generated) const {
  const auto ans = extract_toy_answer(toy_.corpus, generated);
  const std::size_t topic = topic_of(item);
  if (!ans) return std::nullopt;
  if (*ans == toy_.corpus.true_answer(topic)) return true;
  if (*ans == toy_.corpus.myth_answer(topic)) return false;
  return std::nullopt;
}

ContrastPairSet ToyBackend::contrast_pairs(std::size_t n, std::size_t layer, std::uint64_t seed) const {
  Rng rng(seed);
  ContrastPairSet set;
  set.layer = layer;
  for (std::size_t i = 0; i < n; ++i) set.pairs.push_back(toy_.corpus.contrast_pair(rng, Split::train));
  return set;
}

std::vector<LabeledPrompt> ToyBackend::probe_prompts(std::size_t per_class, std::uint64_t seed) const {
  return toy_probe_prompts(toy_.corpus, per_class, seed);
}

PromptTokens AnalyticBackend::prompt_for(const Item&, PromptMode mode, std::uint64_t seed) const {
  return lm_.make_prompt(analytic_marker(mode), 1 + seed % 4);
}

std::optional<bool> AnalyticBackend::truthful(const Item&, std::span<const TokenId> generated) const {
  const Vocab& v = lm_.vocab();
  for (TokenId t : generated) {
    if (t == v.id_of("YES")) return false;
    if (t == v.id_of("NO")) return true;
  }
  return std::nullopt;
}

ContrastPairSet AnalyticBackend::contrast_pairs(std::size_t n, std::size_t layer, std::uint64_t seed) const {
  ContrastPairSet set;
  set.layer = layer;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t fillers = 1 + derive_seed(seed, i) % 4;
    set.pairs.emplace_back(lm_.make_prompt("SUPPORT", fillers), lm_.make_prompt("CHALLENGE", fillers));
  }
  return set;
}

std::vector<LabeledPrompt> AnalyticBackend::probe_prompts(std::size_t per_class, std::uint64_t seed) const {
  std::vector<LabeledPrompt> out;
  const std::string_view markers[3] = {"NEUTRAL", "SUPPORT", "CHALLENGE"};
  for (int label = 0; label < 3; ++label)
    for (std::size_t i = 0; i < per_class; ++i)
      out.push_back({lm_.make_prompt(markers[label], 1 + derive_seed(seed, label, i) % 4), label});
  return out;
}

std::unique_ptr<Backend> make_backend(const RunConfig& config) {
  if (config.backend == "analytic") return std::make_unique<AnalyticBackend>();
  if (config.backend == "toy") {
    ToyModel toy = toy_from_checkpoint(load_checkpoint(config.checkpoint));
    return std::make_unique<ToyBackend>(std::move(toy));
  }
  throw InvalidArgument("unknown backend: " + config.backend);
}

std::size_t steering_layer(const RunConfig& config, const SteerableModel& model) {
  const std::size_t layer = config.layer ? *config.layer : model.middle_layer();
  if (layer >= model.layer_count())
    throw InvalidArgument("layer " + std::to_string(layer) + " out of range for backend " + model.backend());
  return layer;
}

SteeringVector extract_steering(const Backend& backend, const RunConfig& config) {
  const std::size_t layer = steering_layer(config, backend.model());
  return extract_caa(backend.model(), backend.contrast_pairs(config.pairs, layer, derive_seed(config.seed, fnv1a("pairs"))));
}

// ---------------------------------------------------------------- decoding

DecodeOutcome decode(const SteerableModel& model, const PromptTokens& prompt, const SteeringVector* v,
                     const RunConfig& config, const MethodSpec& method, std::uint64_t seed) {
  GenerationParams params = config.generation;
  params.seed = seed;
  DecodeOutcome out;
  auto need_v = [&] {
    if (!v) throw InvalidArgument(std::string(method_name(method.method)) + " decoding needs a steering vector");
    return *v;
  };
  switch (method.method) {
    case Method::base: out.tokens = generate(model, prompt, params); break;
    case Method::steered: out.tokens = generate(model, prompt, params, need_v().at(method.alpha)); break;
    case Method::molace: {
      MolaceResult r = generate_molace(model, prompt, need_v(), AlphaGrid(config.alphas), config.gate, params);
      out.tokens = std::move(r.tokens);
      out.gate = std::move(r.gate);
      out.trace = std::move(r.trace);
      break;
    }
    case Method::uniform: {
      MolaceResult r = generate_with_gate(model, prompt, need_v(), uniform_gate(AlphaGrid(config.alphas)), params);
      out.tokens = std::move(r.tokens);
      out.gate = std::move(r.gate);
      out.trace = std::move(r.trace);
      break;
    }
  }
  return out;
}

std::string render_response(const Item& item, QuestionType type, std::optional<bool> truthful) {
  if (!truthful) return "I cannot tell.\nFinal Answer: unknown";
  if (type == QuestionType::open) {
    std::string text = *truthful ? item.best_answer
                                 : (item.incorrect_answers.empty() ? "The premise of the question is true."
                                                                   : item.incorrect_answers.front());
    return "Final Answer: " + text;
  }
  const ChoiceQuestion& q = type == QuestionType::binary ? item.binary.value() : item.mc.value();
  std::size_t idx = q.correct_index();
  if (!*truthful) idx = idx == 0 ? 1 : 0;
  const std::string label = std::string("(") + static_cast<char>('A' + idx) + ")";
  return label + " " + q.options[idx] + "\nFinal Answer: " + label;
}

std::string question_text(const Item& item, PromptMode mode, QuestionType type) {
  const std::string stem = item.prompt(mode).value();
  if (type == QuestionType::open) return stem;
  const ChoiceQuestion& q = type == QuestionType::binary ? item.binary.value() : item.mc.value();
  return q.render(stem);
}

std::uint64_t item_seed(std::uint64_t seed, const std::string& item_id, PromptMode mode, QuestionType type) {
  return derive_seed(seed, fnv1a(item_id), static_cast<std::uint64_t>(mode), static_cast<std::uint64_t>(type));
}

std::uint64_t prompt_seed(std::uint64_t seed, const std::string& item_id, PromptMode mode) {
  return derive_seed(seed, fnv1a(item_id), static_cast<std::uint64_t>(mode), fnv1a("prompt"));
}

std::vector<Item> prepare_items(const std::vector<Item>& items, std::uint64_t seed) {
  std::vector<Item> out;
  for (const auto& it : items) out.push_back(it.eligible() ? build_choice_questions(it, seed) : it);
  return out;
}

namespace {

std::vector<QuestionType> types_of(const Item& item) {
  std::vector<QuestionType> t{QuestionType::open};
  if (item.binary) t.push_back(QuestionType::binary);
  if (item.mc) t.push_back(QuestionType::mc);
  return t;
}

std::string method_label(const MethodSpec& m) {
  if (m.method == Method::steered) {
    json a = m.alpha;
    return "steered(" + a.dump() + ")";
  }
  return std::string(method_name(m.method));
}

}  // namespace

void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex m;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(m);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

GenerationRun generate_corpus(const Backend& backend, const std::vector<Item>& items, const SteeringVector* v,
                              const RunConfig& config, const MethodSpec& method, bool keep_traces) {
  std::vector<GenerationRun> per_item(items.size());
  parallel_for(items.size(), config.workers, [&](std::size_t i) {
    const Item& item = items[i];
    for (PromptMode mode : kAllPromptModes) {
      if (!item.prompt(mode)) continue;
      const PromptTokens prompt = backend.prompt_for(item, mode, prompt_seed(config.seed, item.id, mode));
      for (QuestionType type : types_of(item)) {
        Prediction p;
        p.item_id = item.id;
        p.mode = mode;
        p.type = type;
        p.method = method_label(method);
        p.prompt = question_text(item, mode, type);
        try {
          const DecodeOutcome out = decode(backend.model(), prompt, v, config, method,
                                           item_seed(config.seed, item.id, mode, type));
          p.response = render_response(item, type, backend.truthful(item, out.tokens));
          if (keep_traces && out.gate) {
            json steps = json::array();
            for (const auto& s : out.trace) steps.push_back(s.to_json(backend.model().vocab()));
            per_item[i].traces.push_back({{"item_id", item.id},
                                          {"mode", prompt_mode_name(mode)},
                                          {"type", question_type_name(type)},
                                          {"gate", out.gate->to_json()},
                                          {"steps", steps}});
          }
        } catch (const std::exception& e) {
          p.error = e.what();
        }
        per_item[i].predictions.push_back(std::move(p));
      }
    }
  });
  GenerationRun run;
  for (auto& r : per_item) {
    for (auto& p : r.predictions) run.predictions.push_back(std::move(p));
    for (auto& t : r.traces) run.traces.push_back(std::move(t));
  }
  return run;
}

BackendGenerator::BackendGenerator(const Backend& backend, const SteeringVector* v, const RunConfig& config,
                                   MethodSpec method, Item item, PromptMode mode, QuestionType type)
    : backend_(&backend), v_(v), config_(&config), method_(method), item_(std::move(item)), mode_(mode), type_(type) {
  prompt_ = backend.prompt_for(item_, mode_, prompt_seed(config.seed, item_.id, mode_));
}

std::string BackendGenerator::name() const { return backend_->model().backend() + ":" + method_label(method_); }

std::string BackendGenerator::generate(const GenerationRequest& request) {
  if (request.kind == PromptKind::critic) return "No issues found.";
  RunConfig cfg = *config_;
  cfg.generation.temperature = config_->debate.temperature;
  cfg.generation.top_p = config_->debate.top_p;
  cfg.generation.max_new_tokens = config_->debate.max_new_tokens;
  const DecodeOutcome out = decode(backend_->model(), prompt_, v_, cfg, method_, request.seed);
  return render_response(item_, type_, backend_->truthful(item_, out.tokens));
}

DebateRun debate_corpus(const Backend& backend, const std::vector<Item>& items, const SteeringVector* v,
                        const RunConfig& config, const MethodSpec& method) {
  std::vector<DebateRun> per_item(items.size());
  parallel_for(items.size(), config.workers, [&](std::size_t i) {
    const Item& item = items[i];
    for (PromptMode mode : kAllPromptModes) {
      if (!item.prompt(mode)) continue;
      for (QuestionType type : types_of(item)) {
        Prediction p;
        p.item_id = item.id;
        p.mode = mode;
        p.type = type;
        p.method = "debate-" + method_label(method);
        p.prompt = question_text(item, mode, type);
        BackendGenerator gen(backend, v, config, method, item, mode, type);
        json transcript;
        try {
          const Transcript t = run_debate(gen, p.prompt, config.debate, item_seed(config.seed, item.id, mode, type));
          transcript = t.to_json(config.debate);
          if (t.final_answer) {
            std::string fin = *t.final_answer;
            if (type != QuestionType::open && fin.size() == 1)
              fin = std::string("(") + static_cast<char>(std::toupper(static_cast<unsigned char>(fin[0]))) + ")";
            p.response = "Final Answer: " + fin;
          } else {
            p.response = "";
          }
        } catch (const DebateError& e) {
          transcript = e.partial().to_json(config.debate);
          p.error = e.what();
        }
        transcript["item_id"] = item.id;
        transcript["mode"] = prompt_mode_name(mode);
        transcript["type"] = question_type_name(type);
        per_item[i].transcripts.push_back(std::move(transcript));
        per_item[i].predictions.push_back(std::move(p));
      }
    }
  });
  DebateRun run;
  for (auto& r : per_item) {
    for (auto& p : r.predictions) run.predictions.push_back(std::move(p));
    for (auto& t : r.transcripts) run.transcripts.push_back(std::move(t));
  }
  return run;
}

void score_predictions(std::vector<Prediction>& preds, const std::vector<Item>& items, Judge& judge) {
  std::map<std::string, const Item*> by_id;
  for (const auto& it : items) by_id[it.id] = &it;
  for (auto& p : preds) {
    if (p.error) {
      p.verdict = Verdict::undefined;
      continue;
    }
    auto it = by_id.find(p.item_id);
    if (it == by_id.end()) throw InvalidArgument("prediction for unknown item " + p.item_id);
    const Item& item = *it->second;
    if (p.type == QuestionType::open) {
      const auto fin = extract_final_answer_raw(p.response);
      const std::string answer = fin ? *fin : p.response;
      p.prediction = answer;
      std::string err;
      p.verdict = score_open(judge, answer, item.best_answer, item.incorrect_answers, &err);
      if (!err.empty()) p.error = err;
    } else {
      const ChoiceQuestion& q = p.type == QuestionType::binary ? item.binary.value() : item.mc.value();
      const auto letter = extract_choice_letter(p.response);
      p.prediction = letter ? std::optional<std::string>(std::string(1, *letter)) : std::nullopt;
      p.verdict = score_choice(p.response, q);
    }
  }
}

AlphaSweep alpha_sweep(const Backend& backend, const std::vector<Item>& items, const SteeringVector& v,
                       const RunConfig& config, Judge& judge) {
  AlphaSweep sweep;
  sweep.alphas = AlphaGrid(config.alphas).values();
  std::vector<std::vector<Prediction>> runs;
  for (std::size_t k = 0; k < sweep.alphas.size(); ++k) {
    // Prompts stay fixed across alphas; only the sampling stream changes.
    std::vector<Prediction> preds;
    {
      std::vector<GenerationRun> per_item(items.size());
      const MethodSpec m{Method::steered, sweep.alphas[k]};
      parallel_for(items.size(), config.workers, [&](std::size_t i) {
        const Item& item = items[i];
        for (PromptMode mode : kAllPromptModes) {
          if (!item.prompt(mode)) continue;
          const PromptTokens prompt = backend.prompt_for(item, mode, prompt_seed(config.seed, item.id, mode));
          for (QuestionType type : types_of(item)) {
            Prediction p;
            p.item_id = item.id;
            p.mode = mode;
            p.type = type;
            p.method = method_label(m);
            p.prompt = question_text(item, mode, type);
            const std::uint64_t s = derive_seed(item_seed(config.seed, item.id, mode, type), fnv1a("alpha"), k);
            const DecodeOutcome out = decode(backend.model(), prompt, &v, config, m, s);
            p.response = render_response(item, type, backend.truthful(item, out.tokens));
            per_item[i].predictions.push_back(std::move(p));
          }
        }
      });
      for (auto& r : per_item)
        for (auto& p : r.predictions) preds.push_back(std::move(p));
    }
    score_predictions(preds, items, judge);
    runs.push_back(std::move(preds));
  }
  const std::size_t rows = runs.front().size();
  for (std::size_t r = 0; r < rows; ++r) {
    std::vector<bool> row;
    for (const auto& run : runs) row.push_back(run[r].verdict == Verdict::correct);
    sweep.correct.push_back(std::move(row));
  }
  sweep.coverage = alpha_coverage(sweep.correct);
  return sweep;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<json>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& r : rows) out << r.dump() << "\n";
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<json> rows;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (trim(line).empty()) continue;
    try {
      rows.push_back(json::parse(line));
    } catch (const std::exception& e) {
      throw IoError(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return rows;
}

}  // namespace molace
