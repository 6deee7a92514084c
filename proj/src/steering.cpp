#include "molace/steering.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>

namespace molace {

SteeringVector extract_caa(const SteerableModel& model, const ContrastPairSet& set) {
  if (set.pairs.empty()) throw InvalidArgument("extract_caa: no contrast pairs");
  if (set.layer >= model.layer_count()) throw InvalidArgument("extract_caa: layer out of range");
  const std::array<std::size_t, 1> layers{set.layer};
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.hidden_dim()));
  for (const auto& [plus, minus] : set.pairs) {
    plus.validate(model.vocab());
    minus.validate(model.vocab());
    const Capture a = forward_with_capture(model, plus, layers);
    const Capture b = forward_with_capture(model, minus, layers);
    sum += a.activations.at(set.layer) - b.activations.at(set.layer);
  }
  const Eigen::VectorXd raw = sum / static_cast<double>(set.pairs.size());
  const double norm = raw.norm();
  if (!std::isfinite(norm)) throw ComputationError("extract_caa: non-finite activations");
  if (norm < kDegenerateNorm)
    throw DegenerateDirectionError("extract_caa: degenerate direction (pair differences cancel)");
  SteeringVector v;
  v.layer = set.layer;
  v.direction = raw / norm;
  v.raw_norm = norm;
  v.pair_count = set.pairs.size();
  v.model_fingerprint = model.fingerprint();
  return v;
}

double alignment_cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& unit_direction) {
  if (a.size() != unit_direction.size()) throw InvalidArgument("alignment_cosine: dimension mismatch");
  const double n = a.norm();
  if (!(n > 0.0) || !std::isfinite(n)) throw UndefinedAlignmentError("alignment_cosine: zero-norm activation");
  return std::clamp(a.dot(unit_direction) / n, -1.0, 1.0);
}

double alignment_cosine(const Eigen::VectorXd& a, const SteeringVector& v) { return alignment_cosine(a, v.direction); }

nlohmann::json steering_to_json(const SteeringVector& v) {
  return {{"schema_version", 1},
          {"layer", v.layer},
          {"dim", v.dim()},
          {"direction", std::vector<double>(v.direction.data(), v.direction.data() + v.direction.size())},
          {"raw_norm", v.raw_norm},
          {"pair_count", v.pair_count},
          {"sign_convention", v.sign_convention},
          {"model_fingerprint", v.model_fingerprint}};
}

SteeringVector steering_from_json(const nlohmann::json& j) {
  SteeringVector v;
  try {
    if (j.at("schema_version").get<int>() != 1) throw InvalidArgument("steering vector: unsupported schema_version");
    v.layer = j.at("layer").get<std::size_t>();
    const auto dir = j.at("direction").get<std::vector<double>>();
    if (dir.size() != j.at("dim").get<std::size_t>()) throw InvalidArgument("steering vector: dim mismatch");
    v.direction = Eigen::Map<const Eigen::VectorXd>(dir.data(), static_cast<Eigen::Index>(dir.size()));
    v.raw_norm = j.at("raw_norm").get<double>();
    v.pair_count = j.at("pair_count").get<std::size_t>();
    v.sign_convention = j.value("sign_convention", std::string("plus_minus"));
    v.model_fingerprint = j.value("model_fingerprint", std::string());
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("steering vector: ") + e.what());
  }
  if (v.direction.size() == 0 || std::abs(v.direction.norm() - 1.0) > 1e-9)
    throw InvalidArgument("steering vector: direction is not unit norm");
  return v;
}

void save_steering(const std::filesystem::path& path, const SteeringVector& v) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ComputationError("save_steering: cannot open " + path.string());
  out << steering_to_json(v).dump(2) << "\n";
}

SteeringVector load_steering(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("load_steering: cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("load_steering: ") + e.what());
  }
  return steering_from_json(j);
}

}  // namespace molace
