#pragma once

// Run configuration and the stages behind the command-line tool: backend loading,
// corpus generation under base / steered / mixture decoding, debate, and scoring.

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "molace/analytic_lm.hpp"
#include "molace/corpus.hpp"
#include "molace/debate.hpp"
#include "molace/eval.hpp"
#include "molace/gate.hpp"
#include "molace/mixture.hpp"
#include "molace/probes.hpp"
#include "molace/toy_corpus.hpp"

namespace molace {

enum class Method { base, steered, molace, uniform };
std::string_view method_name(Method m);
Method parse_method(std::string_view s);

struct RunConfig {
  std::string backend = "toy";  // toy | analytic
  std::string checkpoint;       // toy backend weights
  std::optional<std::size_t> layer;
  std::vector<double> alphas{-3, -2, -1, 0, 1, 2, 3};
  GateConfig gate;
  GenerationParams generation{0.7, 0.9, 8, 0};
  DebateConfig debate;
  std::string corpus;  // empty: bundled corpus
  std::string output_dir = "molace-out";
  std::uint64_t seed = 7;
  int verbosity = 0;
  std::size_t pairs = 5;
  std::size_t workers = 1;
  Method method = Method::molace;
  double alpha = 0.0;    // steered method
  std::string steering;  // steering-vector file; extracted on the fly when empty

  void validate() const;
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  /// Hash of every tunable (output directory, verbosity and worker count excluded).
  std::string fingerprint() const;
};

/// Model plus the glue that maps corpus items onto its prompt language.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual const SteerableModel& model() const = 0;
  virtual PromptTokens prompt_for(const Item& item, PromptMode mode, std::uint64_t seed) const = 0;
  /// true: the continuation commits to the truth; false: to the misconception; empty: neither.
  virtual std::optional<bool> truthful(const Item& item, std::span<const TokenId> generated) const = 0;
  virtual ContrastPairSet contrast_pairs(std::size_t n, std::size_t layer, std::uint64_t seed) const = 0;
  /// Prompts labeled by stance (0 neutral, 1 support, 2 challenge).
  virtual std::vector<LabeledPrompt> probe_prompts(std::size_t per_class, std::uint64_t seed) const = 0;
};

class ToyBackend final : public Backend {
 public:
  explicit ToyBackend(ToyModel toy) : toy_(std::move(toy)) {}
  const SteerableModel& model() const override { return toy_.model; }
  const ToyCorpus& corpus() const { return toy_.corpus; }
  const ToyModel& toy() const { return toy_; }
  std::size_t topic_of(const Item& item) const;
  ToyExample example_for(const Item& item, PromptMode mode, std::uint64_t seed) const;
  PromptTokens prompt_for(const Item& item, PromptMode mode, std::uint64_t seed) const override;
  std::optional<bool> truthful(const Item& item, std::span<const TokenId> generated) const override;
  ContrastPairSet contrast_pairs(std::size_t n, std::size_t layer, std::uint64_t seed) const override;
  std::vector<LabeledPrompt> probe_prompts(std::size_t per_class, std::uint64_t seed) const override;

 private:
  ToyModel toy_;
};

/// YES endorses the framing's claim; NO rejects it.
class AnalyticBackend final : public Backend {
 public:
  explicit AnalyticBackend(AnalyticConceptLM::Config config = {}) : lm_(config) {}
  const SteerableModel& model() const override { return lm_; }
  const AnalyticConceptLM& lm() const { return lm_; }
  PromptTokens prompt_for(const Item& item, PromptMode mode, std::uint64_t seed) const override;
  std::optional<bool> truthful(const Item& item, std::span<const TokenId> generated) const override;
  ContrastPairSet contrast_pairs(std::size_t n, std::size_t layer, std::uint64_t seed) const override;
  std::vector<LabeledPrompt> probe_prompts(std::size_t per_class, std::uint64_t seed) const override;

 private:
  AnalyticConceptLM lm_;
};

std::unique_ptr<Backend> make_backend(const RunConfig& config);
std::size_t steering_layer(const RunConfig& config, const SteerableModel& model);
SteeringVector extract_steering(const Backend& backend, const RunConfig& config);

struct MethodSpec {
  Method method = Method::base;
  double alpha = 0.0;
};

struct DecodeOutcome {
  std::vector<TokenId> tokens;
  std::optional<GateWeights> gate;
  std::vector<MixtureStep> trace;
};

DecodeOutcome decode(const SteerableModel& model, const PromptTokens& prompt, const SteeringVector* v,
                     const RunConfig& config, const MethodSpec& method, std::uint64_t seed);

/// Text reply for a question: the chosen option (choice types) or answer sentence (open),
/// followed by a "Final Answer:" line.
std::string render_response(const Item& item, QuestionType type, std::optional<bool> truthful);

/// Question text shown for (item, mode, type).
std::string question_text(const Item& item, PromptMode mode, QuestionType type);

/// Per (item, mode, type) seeds: derive_seed(seed, fnv1a(item id), mode, type).
std::uint64_t item_seed(std::uint64_t seed, const std::string& item_id, PromptMode mode, QuestionType type);
/// Seed of the backend prompt for (item, mode), shared by all question types.
std::uint64_t prompt_seed(std::uint64_t seed, const std::string& item_id, PromptMode mode);

/// Items with choice questions built (eligible items only).
std::vector<Item> prepare_items(const std::vector<Item>& items, std::uint64_t seed);

struct GenerationRun {
  std::vector<Prediction> predictions;  // verdicts undefined until scored
  std::vector<nlohmann::json> traces;   // per prediction, mixture traces when requested
};

GenerationRun generate_corpus(const Backend& backend, const std::vector<Item>& items, const SteeringVector* v,
                              const RunConfig& config, const MethodSpec& method, bool keep_traces = false);

/// Generator over one (item, mode, type) question backed by a model. Peer text does not
/// reach the model; critiques report no issues and fixes echo the answer.
class BackendGenerator final : public Generator {
 public:
  BackendGenerator(const Backend& backend, const SteeringVector* v, const RunConfig& config, MethodSpec method,
                   Item item, PromptMode mode, QuestionType type);
  std::string name() const override;
  std::string generate(const GenerationRequest& request) override;

 private:
  const Backend* backend_;
  const SteeringVector* v_;
  const RunConfig* config_;
  MethodSpec method_;
  Item item_;
  PromptMode mode_;
  QuestionType type_;
  PromptTokens prompt_;
};

struct DebateRun {
  std::vector<Prediction> predictions;
  std::vector<nlohmann::json> transcripts;
};

DebateRun debate_corpus(const Backend& backend, const std::vector<Item>& items, const SteeringVector* v,
                        const RunConfig& config, const MethodSpec& method);

/// Fills verdict and prediction for every entry.
void score_predictions(std::vector<Prediction>& predictions, const std::vector<Item>& items, Judge& judge);

/// Alpha sweep: each alpha is its own run with seed derive_seed(seed, fnv1a("alpha"), index).
struct AlphaSweep {
  std::vector<double> alphas;
  std::vector<std::vector<bool>> correct;  // rows: (item, mode, type); columns: alphas
  AlphaCoverage coverage;
};

AlphaSweep alpha_sweep(const Backend& backend, const std::vector<Item>& items, const SteeringVector& v,
                       const RunConfig& config, Judge& judge);

/// Runs `fn(i)` for i in [0, n) on up to `workers` threads.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

void write_jsonl(const std::filesystem::path& path, const std::vector<nlohmann::json>& rows);
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);

}  // namespace molace
