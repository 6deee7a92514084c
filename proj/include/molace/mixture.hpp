#pragma once

#include <functional>
#include <map>

#include "molace/gate.hpp"

namespace molace {

/// One decode state per active alpha, all sharing a single emitted-token history.
class ExpertSet {
 public:
  ExpertSet(const SteerableModel& model, const PromptTokens& prompt, const SteeringVector& v,
            std::vector<double> alphas);

  const std::vector<double>& alphas() const { return alphas_; }
  /// Advances every expert by one forward step; alpha = 0 runs without an intervention.
  std::map<double, Distribution> step(double temperature = 1.0);
  void push(TokenId token);
  const std::vector<TokenId>& tokens() const { return states_.front()->tokens(); }
  std::size_t forward_steps() const { return forward_steps_; }

 private:
  const SteerableModel* model_;
  std::vector<double> alphas_;
  std::vector<InterventionSpec> specs_;
  std::vector<std::unique_ptr<DecodeState>> states_;
  std::size_t forward_steps_ = 0;
};

std::map<double, Distribution> expert_step(ExpertSet& experts, double temperature = 1.0);

/// Convex combination sum_alpha w_alpha p_alpha. Every alpha in `dists` must be on the
/// gate, and every alpha with positive weight must be present in `dists`.
Distribution mix(const std::map<double, Distribution>& dists, const GateWeights& w);

struct MixtureStep {
  std::size_t step = 0;
  std::vector<double> alphas;
  std::vector<double> weights;
  std::vector<TokenId> expert_top_token;
  std::vector<double> expert_top_prob;
  double entropy = 0.0;
  TokenId token = 0;
  double token_prob = 0.0;

  nlohmann::json to_json(const Vocab& vocab) const;
};

struct MolaceResult {
  std::vector<TokenId> tokens;  // generated continuation only
  GateWeights gate;
  std::vector<MixtureStep> trace;
  std::size_t forward_steps = 0;
};

using MixtureStepSink = std::function<void(const MixtureStep&)>;

/// Gate computed once from the prompt, then per token: expert_step, mix, nucleus on the
/// mixture, one shared sample appended to every expert. `on_step` sees every record as
/// soon as it exists.
MolaceResult generate_molace(const SteerableModel& model, const PromptTokens& prompt, const SteeringVector& v,
                             const AlphaGrid& grid, const GateConfig& gate_config, const GenerationParams& params,
                             const MixtureStepSink& on_step = {});

/// Same decoding loop with an explicit gate (one-hot, uniform, or precomputed).
MolaceResult generate_with_gate(const SteerableModel& model, const PromptTokens& prompt, const SteeringVector& v,
                                const GateWeights& gate, const GenerationParams& params,
                                const MixtureStepSink& on_step = {});

/// Seed used for the gate's Dirichlet draw, derived from the generation seed.
std::uint64_t gate_seed(std::uint64_t generation_seed);

}  // namespace molace
