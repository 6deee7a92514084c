#pragma once

#include <Eigen/Dense>

#include "molace/model.hpp"

namespace molace {

/// Closed-form single-layer backend.
///
/// The prompt's stance marker sets c (SUPPORT +1, CHALLENGE -1, NEUTRAL or
/// none 0; the first marker found wins). Every position carries h = b + c*u
/// with <b, u> = 0 and |u| = 1. The distribution for a generated position t
/// is read from h_t (plus alpha*v when steered): logit(YES) = g<h, u>,
/// logit(NO) = -g<h, u>, every other token -C.
class AnalyticConceptLM final : public SteerableModel {
 public:
  struct Config {
    std::size_t dim = 8;
    double gain = 1.0;
    double filler_logit = 10.0;  // C; filler tokens get logit -C
    std::size_t filler_tokens = 4;
    std::uint64_t seed = 1;
  };

  AnalyticConceptLM() : AnalyticConceptLM(Config{}) {}
  explicit AnalyticConceptLM(const Config& config);
  /// Explicit geometry; b is projected orthogonal to u and u normalized.
  AnalyticConceptLM(const Config& config, Eigen::VectorXd u, Eigen::VectorXd b);

  std::string backend() const override { return "analytic"; }
  std::size_t layer_count() const override { return 1; }
  std::size_t hidden_dim() const override { return config_.dim; }
  std::size_t context_length() const override { return 1u << 20; }
  const Vocab& vocab() const override { return vocab_; }
  std::optional<TokenId> eos() const override { return vocab_.id_of("<eos>"); }
  std::string fingerprint() const override;

  PromptTrace trace(const PromptTokens& prompt) const override;
  std::unique_ptr<DecodeState> begin(const PromptTokens& prompt) const override;
  Eigen::VectorXd step_logits(DecodeState& state, const InterventionSpec* spec) const override;

  const Eigen::VectorXd& planted_direction() const { return u_; }
  const Eigen::VectorXd& base_vector() const { return b_; }
  double gain() const { return config_.gain; }

  /// Stance of a token sequence: +1, -1 or 0.
  int stance(std::span<const TokenId> ids) const;
  Eigen::VectorXd hidden(int stance) const { return b_ + static_cast<double>(stance) * u_; }
  Eigen::VectorXd logits_from_hidden(const Eigen::VectorXd& h) const;

  /// Prompt of the form "w0 ... <marker>" with the given filler count.
  PromptTokens make_prompt(std::string_view marker, std::size_t fillers = 3) const;

 private:
  Config config_;
  Vocab vocab_;
  Eigen::VectorXd u_;
  Eigen::VectorXd b_;
  TokenId yes_, no_, support_, challenge_, neutral_;
};

}  // namespace molace
