#pragma once

#include <filesystem>

#include "json.hpp"
#include "molace/model.hpp"

namespace molace {

struct ContrastPairSet {
  std::vector<std::pair<PromptTokens, PromptTokens>> pairs;  // (x_plus, x_minus)
  std::size_t layer = 0;
};

struct SteeringVector {
  std::size_t layer = 0;
  Eigen::VectorXd direction;
  double raw_norm = 0.0;
  std::size_t pair_count = 0;
  std::string sign_convention = "plus_minus";
  std::string model_fingerprint;

  std::size_t dim() const { return static_cast<std::size_t>(direction.size()); }
  InterventionSpec at(double alpha) const { return InterventionSpec{layer, alpha, direction}; }
};

class DegenerateDirectionError : public ComputationError {
 public:
  using ComputationError::ComputationError;
};

class UndefinedAlignmentError : public ComputationError {
 public:
  using ComputationError::ComputationError;
};

inline constexpr double kDegenerateNorm = 1e-8;

/// Mean of a_L(x_plus) - a_L(x_minus) at the final prompt token, unit-normalized.
SteeringVector extract_caa(const SteerableModel& model, const ContrastPairSet& pairs);

/// <a, v> / |a| for a unit v.
double alignment_cosine(const Eigen::VectorXd& a, const SteeringVector& v);
double alignment_cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& unit_direction);

nlohmann::json steering_to_json(const SteeringVector& v);
SteeringVector steering_from_json(const nlohmann::json& j);
void save_steering(const std::filesystem::path& path, const SteeringVector& v);
SteeringVector load_steering(const std::filesystem::path& path);

}  // namespace molace
