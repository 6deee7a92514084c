#pragma once

#include <optional>

#include "json.hpp"
#include "molace/steering.hpp"

namespace molace {

class AlphaGrid {
 public:
  AlphaGrid() : AlphaGrid(std::vector<double>{-3, -2, -1, 0, 1, 2, 3}) {}
  /// Sorts the values; requires distinct finite values that include 0.
  explicit AlphaGrid(std::vector<double> values);

  const std::vector<double>& values() const { return values_; }
  std::size_t size() const { return values_.size(); }
  double alpha_max() const { return alpha_max_; }
  std::optional<std::size_t> index_of(double alpha) const;

 private:
  std::vector<double> values_;
  double alpha_max_ = 0.0;
};

enum class GateMode { amplify, neutralize };

std::string_view gate_mode_name(GateMode m);
GateMode parse_gate_mode(std::string_view s);

struct GateConfig {
  double sigma = 1.0;
  GateMode mode = GateMode::neutralize;
  bool counter_bias = false;
  double kappa = 50.0;
  bool explore = false;  // uses explore_kappa instead of kappa
  double explore_kappa = 5.0;
  double shrink_lambda = 0.1;
  std::optional<std::size_t> topk;
  bool sample_gate = true;
  std::size_t positions = 4;  // m for robust_alignment

  void validate(std::size_t grid_size) const;
  double effective_kappa() const { return explore ? explore_kappa : kappa; }
  nlohmann::json to_json() const;
  static GateConfig from_json(const nlohmann::json& j);
};

struct GateWeights {
  std::vector<double> alphas;
  std::vector<double> weights;
  double mu = 0.0;
  double s = 0.0;

  double weight_of(double alpha) const;
  /// Index of the largest weight; ties go to the smaller |alpha|, then the smaller alpha.
  std::size_t argmax() const;
  /// Alphas with nonzero weight, in grid order.
  std::vector<double> support() const;
  bool valid(double tol = 1e-9) const;
  nlohmann::json to_json() const;
};

/// Median alignment cosine over the residual stream at the last m prompt positions of v.layer.
double robust_alignment(const SteerableModel& model, const PromptTokens& prompt, const SteeringVector& v,
                        std::size_t m = 4);

double map_to_mu(double s, const AlphaGrid& grid, const GateConfig& config);

/// Normalized exp(-(alpha - mu)^2 / (2 sigma^2)), computed in log space.
GateWeights rbf_weights(double mu, const AlphaGrid& grid, double sigma);

/// Dirichlet sampling (when enabled), shrinkage toward uniform, then top-k truncation.
GateWeights finalize(const GateWeights& base, const GateConfig& config, std::uint64_t seed);

/// Dirichlet(concentration) draw; entries with zero concentration stay zero.
std::vector<double> sample_dirichlet(const std::vector<double>& concentration, Rng& rng);

/// Full per-prompt gate: robust_alignment -> map_to_mu -> rbf_weights -> finalize.
GateWeights compute_gate(const SteerableModel& model, const PromptTokens& prompt, const SteeringVector& v,
                         const AlphaGrid& grid, const GateConfig& config, std::uint64_t seed);

GateWeights one_hot_gate(const AlphaGrid& grid, double alpha);
GateWeights uniform_gate(const AlphaGrid& grid);

}  // namespace molace
