#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "json.hpp"
#include "molace/model.hpp"

namespace molace {

struct LabeledActivations {
  Eigen::MatrixXd rows;     // one activation per row
  std::vector<int> labels;  // class ids 0..k-1
  std::size_t layer = 0;
  std::string scheme = "stance";

  std::size_t classes() const;
};

struct ProbeConfig {
  double l2 = 1e-3;
  double lr = 0.1;
  std::size_t iterations = 500;
  double test_fraction = 0.2;
};

struct LinearProbe {
  Eigen::VectorXd mean, scale;  // train-split standardization
  Eigen::MatrixXd weights;      // features x classes
  Eigen::RowVectorXd bias;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;

  std::vector<int> predict(const Eigen::MatrixXd& x) const;
};

/// Stratified split: `test_fraction` of every class (at least one row) goes to test.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_split(const std::vector<int>& labels,
                                                                               double test_fraction,
                                                                               std::uint64_t seed);

/// Mean cross-entropy plus (l2/2)||W||^2 of a softmax-linear model on standardized
/// features; writes the exact gradient.
double probe_loss(const Eigen::MatrixXd& x, const std::vector<int>& y, const Eigen::MatrixXd& w,
                  const Eigen::RowVectorXd& b, double l2, Eigen::MatrixXd* gw, Eigen::RowVectorXd* gb);

LinearProbe train_linear_probe(const LabeledActivations& data, std::uint64_t split_seed, const ProbeConfig& config = {});

/// Mean silhouette with Euclidean distances; singleton clusters and a = b = 0 score 0.
double silhouette(const Eigen::MatrixXd& points, const std::vector<int>& labels);

struct KMeansResult {
  std::vector<int> labels;
  Eigen::MatrixXd centers;
  double inertia = 0.0;
};

KMeansResult kmeans(const Eigen::MatrixXd& points, std::size_t k, std::uint64_t seed, std::size_t restarts = 10,
                    std::size_t iterations = 100);

double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b);

struct PcaResult {
  Eigen::MatrixXd coords;      // n x 2
  Eigen::MatrixXd components;  // d x 2, unit columns
  double explained[2] = {0.0, 0.0};
};

PcaResult pca_project(const Eigen::MatrixXd& points);

struct LayerMetrics {
  std::size_t layer = 0;
  double probe_accuracy = 0.0;
  double silhouette = 0.0;
  double ari = 0.0;
};

struct ProbeReport {
  std::string scheme;
  std::vector<LayerMetrics> layers;
  std::size_t best_probe_layer = 0, best_silhouette_layer = 0, best_ari_layer = 0;

  nlohmann::json to_json() const;
  std::string to_csv() const;
};

struct LabeledPrompt {
  PromptTokens prompt;
  int label = 0;
};

/// Final-prompt-token activations of every prompt at one layer.
LabeledActivations capture_layer(const SteerableModel& model, const std::vector<LabeledPrompt>& prompts,
                                 std::size_t layer, const std::string& scheme = "stance");

ProbeReport layer_sweep(const SteerableModel& model, const std::vector<LabeledPrompt>& prompts,
                        const std::string& scheme, std::uint64_t seed, const ProbeConfig& config = {});

std::string pca_csv(const PcaResult& pca, const std::vector<int>& labels);

}  // namespace molace
