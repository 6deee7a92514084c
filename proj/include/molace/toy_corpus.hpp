#pragma once

// Synthetic planted-bias corpus for the tiny transformer and its training recipe.
//
// Sequence layout: Q <topic> <marker> <filler>... <evidence>... ? <draft> A <answer> <eos>
// The prompt ends at "?". The model then writes a draft answer, the cue "A" and
// the final answer. Topic i owns two answer tokens a<i> and b<i>; one of them is
// true and the other is the myth. Evidence tokens, the draft and the final answer
// are drawn independently from the same law: SUPPORT emits the myth with probability
// p_bias, CHALLENGE emits the truth with probability p_bias, NEUTRAL emits the
// truth with probability p_neutral_truth. With probability filler_stance each
// filler after a SUPPORT (CHALLENGE) marker comes from the lower (upper) half of
// the filler vocabulary. A fixed fraction of filler tuples never appears in
// training (held-out prompts).

#include <array>
#include <functional>
#include <optional>
#include <vector>

#include "json.hpp"
#include "molace/model.hpp"
#include "molace/tiny_transformer.hpp"

namespace molace {

enum class Stance { support, challenge, neutral };

std::string_view stance_marker(Stance s);

struct ToyCorpusConfig {
  std::size_t topics = 32;
  std::size_t fillers = 16;
  std::size_t filler_slots = 3;
  double p_bias = 0.8;
  double p_neutral_truth = 0.9;
  std::uint64_t seed = 7;
  std::size_t held_out_modulus = 5;  // 1 / modulus of filler tuples are held out
  bool draft = true;
  double filler_stance = 0.0;
  std::size_t evidence_slots = 3;

  nlohmann::json to_json() const;
  static ToyCorpusConfig from_json(const nlohmann::json& j);
};

enum class Split { train, held_out, any };

struct ToyExample {
  std::size_t topic = 0;
  Stance stance = Stance::neutral;
  std::vector<std::size_t> fillers;
  std::vector<TokenId> evidence;  // answer tokens drawn from the stance law
};

class ToyCorpus {
 public:
  explicit ToyCorpus(ToyCorpusConfig config);

  const ToyCorpusConfig& config() const { return config_; }
  const Vocab& vocab() const { return vocab_; }

  TokenId true_answer(std::size_t topic) const;
  TokenId myth_answer(std::size_t topic) const;
  TokenId answer_marker() const { return a_; }
  bool is_answer_token(TokenId t) const;

  bool held_out(const std::vector<std::size_t>& fillers) const;
  ToyExample sample_example(Rng& rng, Split split, std::optional<Stance> stance = std::nullopt,
                            std::optional<std::size_t> topic = std::nullopt) const;

  /// Q <topic> <marker> fillers ?  (prompt_end at "?")
  PromptTokens prompt(const ToyExample& ex) const;
  /// Full training sequence with the answer drawn from the corpus law.
  std::vector<TokenId> sample_sequence(const ToyExample& ex, Rng& rng) const;
  std::vector<TokenId> sample_training_sequence(Rng& rng) const;
  /// Probability the corpus law emits the true answer for a stance.
  double truth_probability(Stance s) const;

  /// Contrast pair (SUPPORT prompt, CHALLENGE prompt) on one topic, fillers drawn per prompt.
  std::pair<PromptTokens, PromptTokens> contrast_pair(Rng& rng, Split split) const;

 private:
  std::size_t draw_filler(Rng& rng, Stance stance) const;
  TokenId draw_answer(Rng& rng, const ToyExample& ex) const;

  ToyCorpusConfig config_;
  Vocab vocab_;
  TokenId q_, qmark_, a_, eos_;
  std::array<TokenId, 3> markers_;
  std::vector<TokenId> topic_ids_, filler_ids_, true_ids_, myth_ids_;
};

struct ToyTrainConfig {
  ToyCorpusConfig corpus;
  TransformerConfig arch;  // vocab filled from the corpus
  AdamConfig adam;
  std::size_t steps = 3000;
  std::size_t batch = 64;
  std::uint64_t seed = 7;
  double min_separation = 0.20;
  std::size_t eval_prompts = 1000;
  bool require_separation = true;
  std::function<void(std::size_t step, double loss)> on_progress;
};

struct ToyTrainReport {
  double final_loss = 0.0;
  double support_accuracy = 0.0;    // expected accuracy on held-out SUPPORT prompts
  double challenge_accuracy = 0.0;  // expected accuracy on held-out CHALLENGE prompts
  double separation = 0.0;          // |challenge - support|
  bool separated = false;
  std::size_t steps = 0;
  nlohmann::json to_json() const;
};

struct ToyModel {
  TinyTransformerLM model;
  ToyCorpus corpus;
  ToyTrainReport report;
};

class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, ToyTrainReport report)
      : std::runtime_error(what), report_(std::move(report)) {}
  const ToyTrainReport& report() const { return report_; }

 private:
  ToyTrainReport report_;
};

/// Next-token cross-entropy with Adam under a fixed seed and step count.
/// Throws TrainingError when require_separation is set and the held-out
/// marker separation stays below min_separation.
ToyModel train_toy(const ToyTrainConfig& config);

/// Mean probability that temperature-1 decoding ends with the true final answer:
/// the draft is marginalized over the topic's two answer tokens, then "A" is appended.
/// `spec` applies to the generated positions.
double expected_accuracy(const SteerableModel& model, const ToyCorpus& corpus, const std::vector<ToyExample>& examples,
                         const InterventionSpec* spec = nullptr);
double expected_truth(const SteerableModel& model, const ToyCorpus& corpus, const ToyExample& example,
                      const InterventionSpec* spec = nullptr);

/// Samples `count` examples with a fixed stance from a split.
std::vector<ToyExample> sample_examples(const ToyCorpus& corpus, std::size_t count, Split split,
                                        std::optional<Stance> stance, std::uint64_t seed);

/// Final answer of a generated continuation: the answer token right after the first
/// "A", else the last answer token, else nothing.
std::optional<TokenId> extract_toy_answer(const ToyCorpus& corpus, std::span<const TokenId> generated);

}  // namespace molace
