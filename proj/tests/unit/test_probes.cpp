#include "doctest.h"

#include <cmath>
#include <random>
#include <set>

#include "molace/analytic_lm.hpp"
#include "molace/probes.hpp"

using namespace molace;

namespace {

Eigen::MatrixXd rows(std::initializer_list<std::initializer_list<double>> r) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(r.size()), static_cast<Eigen::Index>(r.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& row : r) {
    Eigen::Index j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

Eigen::MatrixXd blobs(std::size_t per, double separation, std::uint64_t seed, std::vector<int>& labels) {
  Rng rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  Eigen::MatrixXd m(static_cast<Eigen::Index>(2 * per), 3);
  labels.clear();
  for (std::size_t i = 0; i < 2 * per; ++i) {
    const int c = i < per ? 0 : 1;
    for (Eigen::Index j = 0; j < 3; ++j) m(static_cast<Eigen::Index>(i), j) = 0.1 * n01(rng);
    m(static_cast<Eigen::Index>(i), 0) += c * separation;
    labels.push_back(c);
  }
  return m;
}

}  // namespace

TEST_CASE("silhouette fixtures") {
  const auto pts = rows({{0, 0}, {0, 1}, {10, 0}, {10, 1}});
  const double b = (10.0 + std::sqrt(101.0)) / 2.0;
  const double want = (b - 1.0) / b;
  CHECK(silhouette(pts, {0, 0, 1, 1}) == doctest::Approx(want).epsilon(1e-12));
  CHECK(std::abs(silhouette(pts, {0, 0, 1, 1}) - 0.9002) < 1e-3);

  const auto same = rows({{1, 1}, {1, 1}, {1, 1}, {1, 1}});
  CHECK(silhouette(same, {0, 0, 1, 1}) == 0.0);

  const auto far = rows({{0, 0}, {0, 1}, {100, 0}, {100, 1}});
  CHECK(silhouette(far, {0, 0, 1, 1}) > silhouette(pts, {0, 0, 1, 1}));
}

TEST_CASE("adjusted rand index") {
  CHECK(adjusted_rand_index({0, 0, 1, 1}, {0, 1, 0, 1}) == doctest::Approx(-0.5).epsilon(1e-12));
  CHECK(adjusted_rand_index({0, 0, 1, 2, 2}, {0, 0, 1, 2, 2}) == doctest::Approx(1.0));
  CHECK(adjusted_rand_index({0, 0, 1, 2, 2}, {5, 5, 3, 1, 1}) == doctest::Approx(1.0));
}

TEST_CASE("k-means") {
  const auto pts = rows({{0, 0}, {1, 2}, {5, 5}, {9, 1}});
  const auto each = kmeans(pts, 4, 3);
  CHECK(each.inertia == doctest::Approx(0.0));
  std::vector<int> sorted = each.labels;
  std::sort(sorted.begin(), sorted.end());
  CHECK(std::unique(sorted.begin(), sorted.end()) == sorted.end());

  std::vector<int> truth;
  const auto b = blobs(40, 20.0, 8, truth);
  const auto km = kmeans(b, 2, 11);
  CHECK(adjusted_rand_index(km.labels, truth) == doctest::Approx(1.0));
  CHECK(kmeans(b, 2, 11).labels == km.labels);
}

TEST_CASE("PCA") {
  Rng rng(4);
  std::normal_distribution<double> n01(0.0, 1.0);
  Eigen::MatrixXd line(50, 3);
  for (Eigen::Index i = 0; i < 50; ++i) {
    const double t = n01(rng);
    line.row(i) << t, 2 * t, -t;
  }
  const auto p = pca_project(line);
  CHECK(p.explained[0] >= 0.999);
  const Eigen::MatrixXd gram = p.components.transpose() * p.components;
  CHECK((gram - Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() <= 1e-9);

  Eigen::MatrixXd iso(1000, 2);
  for (Eigen::Index i = 0; i < 1000; ++i) iso.row(i) << n01(rng), n01(rng);
  const auto q = pca_project(iso);
  CHECK(std::abs(q.explained[0] - 0.5) <= 0.05);
  CHECK(std::abs(q.explained[1] - 0.5) <= 0.05);

  Eigen::MatrixXd plane(30, 4);
  Eigen::Vector4d e1(1, 1, 0, 0), e2(0, 0, 1, -1);
  e1.normalize();
  e2.normalize();
  for (Eigen::Index i = 0; i < 30; ++i) plane.row(i) = (n01(rng) * e1 + n01(rng) * e2).transpose();
  const auto r = pca_project(plane);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < 30; ++i)
    for (Eigen::Index j = 0; j < 30; ++j)
      worst = std::max(worst, std::abs((plane.row(i) - plane.row(j)).norm() - (r.coords.row(i) - r.coords.row(j)).norm()));
  CHECK(worst <= 1e-9);
}

TEST_CASE("probe gradient matches finite differences") {
  Rng rng(21);
  std::normal_distribution<double> n01(0.0, 1.0);
  const Eigen::Index n = 12, d = 4, k = 3;
  Eigen::MatrixXd x(n, d);
  std::vector<int> y;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) x(i, j) = n01(rng);
    y.push_back(static_cast<int>(i % k));
  }
  Eigen::MatrixXd w(d, k);
  Eigen::RowVectorXd b(k);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < k; ++j) w(i, j) = 0.5 * n01(rng);
  for (Eigen::Index j = 0; j < k; ++j) b(j) = 0.5 * n01(rng);
  Eigen::MatrixXd gw;
  Eigen::RowVectorXd gb;
  const double l2 = 1e-2;
  probe_loss(x, y, w, b, l2, &gw, &gb);
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < k; ++j) {
      Eigen::MatrixXd wp = w, wm = w;
      wp(i, j) += h;
      wm(i, j) -= h;
      const double fd = (probe_loss(x, y, wp, b, l2, nullptr, nullptr) - probe_loss(x, y, wm, b, l2, nullptr, nullptr)) / (2 * h);
      CHECK(std::abs(fd - gw(i, j)) <= 1e-5 * std::max(1.0, std::abs(fd)));
    }
  for (Eigen::Index j = 0; j < k; ++j) {
    Eigen::RowVectorXd bp = b, bm = b;
    bp(j) += h;
    bm(j) -= h;
    const double fd = (probe_loss(x, y, w, bp, l2, nullptr, nullptr) - probe_loss(x, y, w, bm, l2, nullptr, nullptr)) / (2 * h);
    CHECK(std::abs(fd - gb(j)) <= 1e-5 * std::max(1.0, std::abs(fd)));
  }
}

TEST_CASE("linear probe on separable and shuffled data") {
  AnalyticConceptLM lm;
  std::vector<LabeledPrompt> prompts;
  const char* markers[] = {"NEUTRAL", "SUPPORT", "CHALLENGE"};
  for (int c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 10; ++i) prompts.push_back({lm.make_prompt(markers[c], 1 + i % 4), c});
  LabeledActivations acts = capture_layer(lm, prompts, 0);
  const LinearProbe probe = train_linear_probe(acts, 1);
  CHECK(probe.test_accuracy == 1.0);

  std::vector<int> truth;
  LabeledActivations noisy;
  noisy.rows = blobs(60, 0.0, 3, truth);
  double mean = 0.0;
  for (std::uint64_t s = 0; s < 5; ++s) {
    Rng rng(s);
    noisy.labels = truth;
    shuffle_in_place(noisy.labels, rng);
    mean += train_linear_probe(noisy, s).test_accuracy / 5.0;
  }
  CHECK(std::abs(mean - 0.5) <= 0.1);

  LabeledActivations dup;
  dup.rows = Eigen::MatrixXd::Ones(20, 2);
  for (int i = 0; i < 20; ++i) dup.labels.push_back(i < 12 ? 0 : 1);
  const auto pred = train_linear_probe(dup, 2).predict(dup.rows);
  double hits = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == dup.labels[i];
  CHECK(hits / 20.0 <= 0.6 + 1e-12);
}

TEST_CASE("layer sweep on the single-layer analytic model") {
  AnalyticConceptLM lm;
  std::vector<LabeledPrompt> prompts;
  for (std::size_t i = 0; i < 8; ++i) {
    prompts.push_back({lm.make_prompt("SUPPORT", 1 + i % 3), 1});
    prompts.push_back({lm.make_prompt("CHALLENGE", 1 + i % 3), 0});
  }
  const ProbeReport r = layer_sweep(lm, prompts, "stance", 3);
  CHECK(r.layers.size() == 1);
  CHECK(r.to_csv().rfind("layer,metric,value", 0) == 0);
}

TEST_CASE("stratified split keeps every class in test") {
  std::vector<int> labels{0, 0, 0, 1, 1, 2, 2, 2, 2, 2};
  const auto [train, test] = stratified_split(labels, 0.2, 4);
  CHECK(train.size() + test.size() == labels.size());
  std::set<int> seen;
  for (auto i : test) seen.insert(labels[i]);
  CHECK(seen.size() == 3);
  CHECK_THROWS_AS(stratified_split({0, 1, 1}, 0.2, 1), InvalidArgument);
}
