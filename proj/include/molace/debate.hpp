#pragma once

// Multi-agent debate over any text generator, with the optional pruning,
// diversity and refutation stages between rounds.

#include <Eigen/Dense>

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "molace/common.hpp"

namespace molace {

enum class PromptKind { base, peers, critic, fix };

struct GenerationRequest {
  PromptKind kind = PromptKind::base;
  std::string prompt;    // rendered template
  std::string question;  // raw question text
  std::uint64_t seed = 0;
};

class Generator {
 public:
  virtual ~Generator() = default;
  virtual std::string name() const = 0;
  /// Throws on failure.
  virtual std::string generate(const GenerationRequest& request) = 0;
};

class FunctionGenerator final : public Generator {
 public:
  using Fn = std::function<std::string(const GenerationRequest&)>;
  FunctionGenerator(std::string name, Fn fn) : name_(std::move(name)), fn_(std::move(fn)) {}
  std::string name() const override { return name_; }
  std::string generate(const GenerationRequest& request) override { return fn_(request); }

 private:
  std::string name_;
  Fn fn_;
};

struct DebateTemplates {
  std::string base =
      "Answer the following question. End your reply with a line of the form \"Final Answer: <answer>\".\n\n"
      "Question: {question}";
  std::string peers =
      "Question: {question}\n\nThese are the answers from the other agents:\n{peer_answers}\n"
      "Using their reasoning as additional advice, give an updated answer. End your reply with a line of the form "
      "\"Final Answer: <answer>\".";
  std::string critic =
      "Question: {question}\n\nProposed answer:\n{answer}\n\nList any factual or logical errors in the proposed "
      "answer. If there are none, say \"no issues\".";
  std::string fix =
      "Question: {question}\n\nProposed answer:\n{answer}\n\nCritique:\n{critique}\n\nRevise the answer minimally to "
      "address the critique. End with a line of the form \"Final Answer: <answer>\".";

  nlohmann::json to_json() const;
  static DebateTemplates from_json(const nlohmann::json& j);
};

/// Replaces {name} placeholders; unknown placeholders are left untouched.
std::string render_template(const std::string& text, const std::vector<std::pair<std::string, std::string>>& values);

struct DebateConfig {
  std::size_t n_agents = 4;
  std::size_t rounds = 2;
  double temperature = 0.7;
  double top_p = 0.9;
  std::size_t max_new_tokens = 256;
  bool quality = false;
  bool diversity = false;
  bool refutation = false;
  double keep_ratio = 0.5;
  DebateTemplates templates;

  void validate() const;
  nlohmann::json to_json() const;
  static DebateConfig from_json(const nlohmann::json& j);
};

/// Lowercase, trim, strip leading/trailing punctuation, collapse internal whitespace.
std::string normalize_answer(std::string_view text);
/// Trimmed remainder of the first line starting with "final answer:" (case-insensitive).
std::optional<std::string> extract_final_answer_raw(std::string_view text);
std::optional<std::string> extract_final_answer(std::string_view text);

class NoConsensusError : public ComputationError {
 public:
  using ComputationError::ComputationError;
};

/// Plurality over present answers; ties go to the answer given by the lowest agent index.
std::string majority_vote(const std::vector<std::optional<std::string>>& answers);

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::size_t dimension() const = 0;
  virtual Eigen::VectorXd embed(std::string_view text) const = 0;
};

/// Feature-hashed bag of words (lowercased alphanumeric runs), term frequencies, L2-normalized.
class HashingEmbedder final : public Embedder {
 public:
  explicit HashingEmbedder(std::size_t dimension = 256);
  std::size_t dimension() const override { return dim_; }
  Eigen::VectorXd embed(std::string_view text) const override;

 private:
  std::size_t dim_;
};

/// Cosine similarity; 0 when either vector is zero.
double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

/// k = max(n_agents, floor(keep_ratio * candidates)), capped at the candidate count.
std::size_t prune_keep_count(std::size_t candidates, std::size_t n_agents, double keep_ratio);

struct PruneResult {
  std::vector<std::size_t> kept;  // ascending input indices
  std::vector<double> scores;     // question similarity per input answer
};

PruneResult quality_prune(const std::string& question, const std::vector<std::string>& answers,
                          const Embedder& embedder, std::size_t n_agents, double keep_ratio);

/// Farthest-first selection over embeddings. Returns indices in selection order.
std::vector<std::size_t> diversity_select(const std::vector<Eigen::VectorXd>& embeddings, std::size_t k,
                                          std::size_t seed_index = 0);
/// Seeds with the answer most similar to the question.
std::vector<std::size_t> diversity_select(const std::string& question, const std::vector<std::string>& answers,
                                          const Embedder& embedder, std::size_t k);

struct RefutationResult {
  std::string answer;  // revised text, or the original on fallback
  std::string critique;
  std::string revision;
  bool revised = false;
  std::optional<std::string> error;
};

RefutationResult refute_then_fix(Generator& generator, const std::string& question, const std::string& answer,
                                 const DebateTemplates& templates = {}, std::uint64_t seed = 0);

struct AgentTurn {
  std::string prompt;
  std::string response;
  std::optional<std::string> final_answer_raw;
  std::optional<std::string> final_answer;
  bool pruned = false;
  std::optional<std::string> critique;
  std::optional<std::string> revision;
  std::optional<std::string> error;
};

struct Transcript {
  std::string question;
  std::vector<std::vector<AgentTurn>> rounds;
  std::optional<std::string> final_answer;
  std::optional<std::string> error;

  nlohmann::json to_json(const DebateConfig& config) const;
};

class DebateError : public std::runtime_error {
 public:
  DebateError(const std::string& what, Transcript partial) : std::runtime_error(what), partial_(std::move(partial)) {}
  const Transcript& partial() const { return partial_; }

 private:
  Transcript partial_;
};

/// Per-agent seeds are derive_seed(seed, round, agent).
Transcript run_debate(Generator& generator, const std::string& question, const DebateConfig& config,
                      std::uint64_t seed, const Embedder* embedder = nullptr);

}  // namespace molace
