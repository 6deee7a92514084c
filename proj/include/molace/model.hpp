#pragma once

// Steerable language-model contract shared by every backend.
//
// Layer indexing: activation "at layer L" is the residual stream after block L
// (0-based), i.e. after that block's final residual add. Interventions are
// added there, before block L + 1 runs.

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "molace/common.hpp"

namespace molace {

using TokenId = std::int32_t;
using Activation = Eigen::VectorXd;
using Distribution = std::vector<double>;

class Vocab {
 public:
  Vocab() = default;
  explicit Vocab(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  TokenId id_of(std::string_view token) const;
  std::optional<TokenId> find(std::string_view token) const;
  const std::string& token_of(TokenId id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }
  bool valid(TokenId id) const { return id >= 0 && static_cast<std::size_t>(id) < tokens_.size(); }

  /// Whitespace tokenization; every word must be a vocabulary entry.
  std::vector<TokenId> encode(std::string_view text) const;
  std::string decode(std::span<const TokenId> ids) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
};

struct PromptTokens {
  std::vector<TokenId> ids;
  std::size_t prompt_end = 0;  // index of the last prompt position

  /// Every id is prompt; prompt_end = ids.size() - 1.
  static PromptTokens whole(std::vector<TokenId> ids);
  void validate(const Vocab& vocab) const;
};

struct GenerationParams {
  double temperature = 1.0;
  double top_p = 1.0;
  std::size_t max_new_tokens = 16;
  std::uint64_t seed = 0;

  void validate() const;
};

struct InterventionSpec {
  std::size_t layer = 0;
  double alpha = 0.0;
  Eigen::VectorXd direction;  // unit norm
};

/// Per-layer residual-stream activations for every prompt position
/// (rows = positions, cols = hidden_dim) and next-token logits at prompt_end.
struct PromptTrace {
  std::vector<Eigen::MatrixXd> layers;
  Eigen::VectorXd logits;
};

/// Token history of one incremental decode. Backends subclass it to hold caches.
class DecodeState {
 public:
  virtual ~DecodeState() = default;
  virtual std::unique_ptr<DecodeState> clone() const = 0;

  const std::vector<TokenId>& tokens() const { return tokens_; }
  std::size_t prompt_end() const { return prompt_end_; }
  void push(TokenId token) { tokens_.push_back(token); }

 protected:
  explicit DecodeState(const PromptTokens& prompt) : tokens_(prompt.ids), prompt_end_(prompt.prompt_end) {}
  DecodeState(const DecodeState&) = default;

 private:
  std::vector<TokenId> tokens_;
  std::size_t prompt_end_;
};

class SteerableModel {
 public:
  virtual ~SteerableModel() = default;

  virtual std::string backend() const = 0;
  virtual std::size_t layer_count() const = 0;
  virtual std::size_t hidden_dim() const = 0;
  virtual std::size_t context_length() const = 0;
  virtual const Vocab& vocab() const = 0;
  virtual std::optional<TokenId> eos() const = 0;
  /// Stable identifier of the weights (hex digest).
  virtual std::string fingerprint() const = 0;

  /// Unsteered pass over the prompt capturing every layer.
  virtual PromptTrace trace(const PromptTokens& prompt) const = 0;

  virtual std::unique_ptr<DecodeState> begin(const PromptTokens& prompt) const = 0;

  /// Logits for the next token after state.tokens(). The intervention, when
  /// given, is added at its layer for every position t > prompt_end. A state
  /// must be stepped with the same intervention for its whole lifetime.
  virtual Eigen::VectorXd step_logits(DecodeState& state, const InterventionSpec* spec) const = 0;

  std::size_t middle_layer() const { return layer_count() / 2; }
};

struct Capture {
  std::map<std::size_t, Activation> activations;
  Eigen::VectorXd logits;
};

/// Residual-stream activations at prompt_end after each requested block, plus next-token logits.
Capture forward_with_capture(const SteerableModel& model, const PromptTokens& prompt,
                             std::span<const std::size_t> layers);

void validate_intervention(const SteerableModel& model, const InterventionSpec& spec);

/// One decode step: softmax(logits / temperature) under the optional intervention.
Distribution forward_step(const SteerableModel& model, DecodeState& state,
                          const std::optional<InterventionSpec>& spec, double temperature = 1.0);

/// Autoregressive nucleus sampling. Returns the generated tokens only (EOS included if emitted).
std::vector<TokenId> generate(const SteerableModel& model, const PromptTokens& prompt,
                              const GenerationParams& params,
                              const std::optional<InterventionSpec>& spec = std::nullopt);

}  // namespace molace
