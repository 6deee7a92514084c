#pragma once

// Tiny pre-norm decoder-only transformer with learned token and positional
// embeddings, plus the hand-written backward pass used to train it.

#include <Eigen/Dense>

#include <functional>
#include <string>
#include <vector>

#include "molace/model.hpp"

namespace molace {

struct TransformerConfig {
  std::size_t layers = 4;
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t d_ff = 256;
  std::size_t context = 32;
  std::size_t vocab = 0;

  void validate() const;
};

struct BlockWeights {
  Eigen::MatrixXd ln1_g, ln1_b;  // 1 x d
  Eigen::MatrixXd wq, wk, wv, wo;  // d x d
  Eigen::MatrixXd ln2_g, ln2_b;  // 1 x d
  Eigen::MatrixXd w1, b1;  // d x f, 1 x f
  Eigen::MatrixXd w2, b2;  // f x d, 1 x d
};

struct TransformerWeights {
  Eigen::MatrixXd tok_emb;  // V x d
  Eigen::MatrixXd pos_emb;  // context x d
  std::vector<BlockWeights> blocks;
  Eigen::MatrixXd lnf_g, lnf_b;  // 1 x d
  Eigen::MatrixXd w_out, b_out;  // d x V, 1 x V

  static TransformerWeights zeros(const TransformerConfig& config);
  /// GPT-2 style init: N(0, 0.02), residual projections scaled by 1/sqrt(2 * layers).
  static TransformerWeights random(const TransformerConfig& config, std::uint64_t seed);

  void visit(const std::function<void(const std::string&, Eigen::MatrixXd&)>& fn);
  void visit(const std::function<void(const std::string&, const Eigen::MatrixXd&)>& fn) const;
  std::size_t parameter_count() const;
};

class TinyTransformerLM final : public SteerableModel {
 public:
  TinyTransformerLM(TransformerConfig config, Vocab vocab, TransformerWeights weights);

  std::string backend() const override { return "tiny-transformer"; }
  std::size_t layer_count() const override { return config_.layers; }
  std::size_t hidden_dim() const override { return config_.d_model; }
  std::size_t context_length() const override { return config_.context; }
  const Vocab& vocab() const override { return vocab_; }
  std::optional<TokenId> eos() const override { return vocab_.find("<eos>"); }
  std::string fingerprint() const override;

  PromptTrace trace(const PromptTokens& prompt) const override;
  std::unique_ptr<DecodeState> begin(const PromptTokens& prompt) const override;
  Eigen::VectorXd step_logits(DecodeState& state, const InterventionSpec* spec) const override;

  /// Logits at every position of a full sequence (no cache, no intervention).
  Eigen::MatrixXd sequence_logits(std::span<const TokenId> tokens) const;

  const TransformerConfig& config() const { return config_; }
  const TransformerWeights& weights() const { return weights_; }

 private:
  TransformerConfig config_;
  Vocab vocab_;
  TransformerWeights weights_;
};

/// Mean next-token cross-entropy over every position of a batch of equal-length
/// sequences; accumulates the exact gradient into `grad` (which is overwritten).
double loss_and_gradient(const TransformerConfig& config, const TransformerWeights& weights,
                         const std::vector<std::vector<TokenId>>& batch, TransformerWeights& grad);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class AdamOptimizer {
 public:
  AdamOptimizer(const TransformerConfig& config, AdamConfig adam);
  void step(TransformerWeights& weights, TransformerWeights& grad);
  std::size_t steps() const { return t_; }

 private:
  AdamConfig adam_;
  TransformerWeights m_, v_;
  std::size_t t_ = 0;
};

}  // namespace molace
