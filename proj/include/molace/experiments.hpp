#pragma once

// Desk-scale experiments on the toy model: the alpha ablation with coverage and the
// stance probe sweep.

#include <string>
#include <vector>

#include "json.hpp"
#include "molace/eval.hpp"
#include "molace/gate.hpp"
#include "molace/probes.hpp"
#include "molace/toy_corpus.hpp"

namespace molace {

struct ToyAblationConfig {
  std::size_t prompts = 500;
  Stance stance = Stance::support;
  GenerationParams params{1.0, 0.9, 8, 0};
  AlphaGrid grid;
  GateConfig gate;
  std::uint64_t seed = 7;
};

struct ToyAblationResult {
  std::vector<double> alphas;
  AlphaCoverage coverage;
  double unsteered = 0.0;
  double molace = 0.0;
  std::vector<double> expected_per_alpha;  // exact temperature-1 accuracy per alpha
  double mean_alignment = 0.0;             // mean gate alignment s over the prompts

  nlohmann::json to_json() const;
  std::string to_csv() const;
};

/// Held-out prompts of one stance. Each alpha is sampled on its own stream; unsteered
/// and mixture decoding share the per-prompt seed.
ToyAblationResult run_toy_ablation(const ToyModel& toy, const SteeringVector& v, const ToyAblationConfig& config);

/// Stance-labeled probe sweep over every layer (labels: 0 neutral, 1 support, 2 challenge).
ProbeReport toy_probe_sweep(const SteerableModel& model, const ToyCorpus& corpus, std::size_t per_class,
                            std::uint64_t seed);
std::vector<LabeledPrompt> toy_probe_prompts(const ToyCorpus& corpus, std::size_t per_class, std::uint64_t seed);

}  // namespace molace
