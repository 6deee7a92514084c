#include "molace/probes.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace molace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

std::size_t LabeledActivations::classes() const {
  int mx = -1;
  for (int l : labels) mx = std::max(mx, l);
  return static_cast<std::size_t>(mx + 1);
}

namespace {

void check_labels(const std::vector<int>& labels, Index rows) {
  if (static_cast<Index>(labels.size()) != rows) throw InvalidArgument("labels and rows differ in count");
  for (int l : labels)
    if (l < 0) throw InvalidArgument("labels must be non-negative");
}

MatrixXd select_rows(const MatrixXd& x, const std::vector<std::size_t>& idx) {
  MatrixXd out(static_cast<Index>(idx.size()), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Index>(i)) = x.row(static_cast<Index>(idx[i]));
  return out;
}

double accuracy(const std::vector<int>& pred, const std::vector<int>& y) {
  std::size_t hit = 0;
  for (std::size_t i = 0; i < y.size(); ++i) hit += pred[i] == y[i];
  return y.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(y.size());
}

}  // namespace

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_split(const std::vector<int>& labels,
                                                                               double test_fraction,
                                                                               std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw InvalidArgument("stratified_split: bad test fraction");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  std::vector<std::size_t> train, test;
  for (auto& [label, idx] : by_class) {
    if (idx.size() < 2) throw InvalidArgument("stratified_split: class with fewer than 2 rows");
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(label)));
    shuffle_in_place(idx, rng);
    std::size_t n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(idx.size())));
    n_test = std::clamp<std::size_t>(n_test, 1, idx.size() - 1);
    test.insert(test.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
    train.insert(train.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {train, test};
}

double probe_loss(const MatrixXd& x, const std::vector<int>& y, const MatrixXd& w, const Eigen::RowVectorXd& b,
                  double l2, MatrixXd* gw, Eigen::RowVectorXd* gb) {
  const Index n = x.rows();
  MatrixXd logits = (x * w).rowwise() + b;
  double loss = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double mx = logits.row(i).maxCoeff();
    logits.row(i) = (logits.row(i).array() - mx).exp();
    const double z = logits.row(i).sum();
    logits.row(i) /= z;
    loss -= std::log(std::max(logits(i, y[static_cast<std::size_t>(i)]), std::numeric_limits<double>::min()));
  }
  loss = loss / static_cast<double>(n) + 0.5 * l2 * w.squaredNorm();
  if (gw || gb) {
    MatrixXd d = logits;
    for (Index i = 0; i < n; ++i) d(i, y[static_cast<std::size_t>(i)]) -= 1.0;
    d /= static_cast<double>(n);
    if (gw) *gw = x.transpose() * d + l2 * w;
    if (gb) *gb = d.colwise().sum();
  }
  return loss;
}

std::vector<int> LinearProbe::predict(const MatrixXd& x) const {
  const MatrixXd z = ((x.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array()).matrix();
  const MatrixXd logits = (z * weights).rowwise() + bias;
  std::vector<int> out(static_cast<std::size_t>(x.rows()));
  for (Index i = 0; i < x.rows(); ++i) {
    Index arg;
    logits.row(i).maxCoeff(&arg);
    out[static_cast<std::size_t>(i)] = static_cast<int>(arg);
  }
  return out;
}

LinearProbe train_linear_probe(const LabeledActivations& data, std::uint64_t split_seed, const ProbeConfig& config) {
  check_labels(data.labels, data.rows.rows());
  const std::size_t k = data.classes();
  std::set<int> present(data.labels.begin(), data.labels.end());
  if (present.size() < 2) throw InvalidArgument("train_linear_probe: need at least 2 classes");
  const auto [train, test] = stratified_split(data.labels, config.test_fraction, split_seed);
  const MatrixXd xtr = select_rows(data.rows, train), xte = select_rows(data.rows, test);
  std::vector<int> ytr, yte;
  for (auto i : train) ytr.push_back(data.labels[i]);
  for (auto i : test) yte.push_back(data.labels[i]);

  LinearProbe p;
  p.mean = xtr.colwise().mean().transpose();
  const MatrixXd centered = xtr.rowwise() - p.mean.transpose();
  p.scale = (centered.array().square().colwise().sum() / static_cast<double>(xtr.rows())).sqrt().transpose();
  for (Index j = 0; j < p.scale.size(); ++j)
    if (!(p.scale(j) > 1e-12)) p.scale(j) = 1.0;  // constant feature
  const MatrixXd z = (centered.array().rowwise() / p.scale.transpose().array()).matrix();

  p.weights = MatrixXd::Zero(data.rows.cols(), static_cast<Index>(k));
  p.bias = Eigen::RowVectorXd::Zero(static_cast<Index>(k));
  MatrixXd gw;
  Eigen::RowVectorXd gb;
  for (std::size_t it = 0; it < config.iterations; ++it) {
    probe_loss(z, ytr, p.weights, p.bias, config.l2, &gw, &gb);
    p.weights -= config.lr * gw;
    p.bias -= config.lr * gb;
  }
  p.train_accuracy = accuracy(p.predict(xtr), ytr);
  p.test_accuracy = accuracy(p.predict(xte), yte);
  return p;
}

double silhouette(const MatrixXd& x, const std::vector<int>& labels) {
  check_labels(labels, x.rows());
  std::map<int, std::size_t> sizes;
  for (int l : labels) ++sizes[l];
  if (sizes.size() < 2) throw InvalidArgument("silhouette: undefined for a single cluster");
  const Index n = x.rows();
  double total = 0.0;
  for (Index i = 0; i < n; ++i) {
    const int li = labels[static_cast<std::size_t>(i)];
    if (sizes[li] == 1) continue;
    std::map<int, double> sum;
    for (Index j = 0; j < n; ++j) {
      if (j == i) continue;
      sum[labels[static_cast<std::size_t>(j)]] += (x.row(i) - x.row(j)).norm();
    }
    const double a = sum[li] / static_cast<double>(sizes[li] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (const auto& [l, s] : sum)
      if (l != li) b = std::min(b, s / static_cast<double>(sizes[l]));
    const double m = std::max(a, b);
    total += m > 0.0 ? (b - a) / m : 0.0;
  }
  return total / static_cast<double>(n);
}

namespace {

KMeansResult kmeans_once(const MatrixXd& x, std::size_t k, Rng& rng, std::size_t iterations) {
  const Index n = x.rows();
  const Index kk = static_cast<Index>(k);
  MatrixXd c(kk, x.cols());
  // k-means++ seeding.
  c.row(0) = x.row(static_cast<Index>(uniform_index(rng, static_cast<std::uint64_t>(n))));
  VectorXd d2(n);
  for (Index i = 0; i < n; ++i) d2(i) = (x.row(i) - c.row(0)).squaredNorm();
  for (Index j = 1; j < kk; ++j) {
    const double total = d2.sum();
    Index pick = 0;
    if (total > 0.0) {
      double r = uniform01(rng) * total;
      pick = n - 1;
      for (Index i = 0; i < n; ++i) {
        r -= d2(i);
        if (r < 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<Index>(uniform_index(rng, static_cast<std::uint64_t>(n)));
    }
    c.row(j) = x.row(pick);
    for (Index i = 0; i < n; ++i) d2(i) = std::min(d2(i), (x.row(i) - c.row(j)).squaredNorm());
  }

  std::vector<int> labels(static_cast<std::size_t>(n), -1);
  for (std::size_t it = 0; it < iterations; ++it) {
    bool changed = false;
    for (Index i = 0; i < n; ++i) {
      Index best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (Index j = 0; j < kk; ++j) {
        const double d = (x.row(i) - c.row(j)).squaredNorm();
        if (d < bd) {
          bd = d;
          best = j;
        }
      }
      if (labels[static_cast<std::size_t>(i)] != static_cast<int>(best)) {
        labels[static_cast<std::size_t>(i)] = static_cast<int>(best);
        changed = true;
      }
    }
    if (!changed && it > 0) break;
    MatrixXd sum = MatrixXd::Zero(kk, x.cols());
    std::vector<std::size_t> cnt(k, 0);
    for (Index i = 0; i < n; ++i) {
      sum.row(labels[static_cast<std::size_t>(i)]) += x.row(i);
      ++cnt[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
    }
    for (Index j = 0; j < kk; ++j)
      if (cnt[static_cast<std::size_t>(j)] > 0) c.row(j) = sum.row(j) / static_cast<double>(cnt[static_cast<std::size_t>(j)]);
  }
  KMeansResult r;
  r.labels = std::move(labels);
  r.centers = c;
  for (Index i = 0; i < n; ++i) r.inertia += (x.row(i) - c.row(r.labels[static_cast<std::size_t>(i)])).squaredNorm();
  return r;
}

}  // namespace

KMeansResult kmeans(const MatrixXd& x, std::size_t k, std::uint64_t seed, std::size_t restarts, std::size_t iterations) {
  if (k < 1 || static_cast<Index>(k) > x.rows()) throw InvalidArgument("kmeans: need 1 <= k <= #points");
  if (restarts < 1) throw InvalidArgument("kmeans: need at least one restart");
  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < restarts; ++r) {
    Rng rng(derive_seed(seed, r));
    KMeansResult cur = kmeans_once(x, k, rng, iterations);
    if (cur.inertia < best.inertia) best = std::move(cur);
  }
  return best;
}

double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) throw InvalidArgument("adjusted_rand_index: length mismatch");
  if (a.size() < 2) throw InvalidArgument("adjusted_rand_index: need at least 2 items");
  std::map<std::pair<int, int>, double> cells;
  std::map<int, double> ra, rb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ++cells[{a[i], b[i]}];
    ++ra[a[i]];
    ++rb[b[i]];
  }
  auto c2 = [](double n) { return n * (n - 1.0) / 2.0; };
  double index = 0.0, sa = 0.0, sb = 0.0;
  for (const auto& [_, n] : cells) index += c2(n);
  for (const auto& [_, n] : ra) sa += c2(n);
  for (const auto& [_, n] : rb) sb += c2(n);
  const double expected = sa * sb / c2(static_cast<double>(a.size()));
  const double max_index = 0.5 * (sa + sb);
  if (max_index == expected) return 1.0;  // both partitions trivial and identical in structure
  return (index - expected) / (max_index - expected);
}

PcaResult pca_project(const MatrixXd& x) {
  if (x.rows() < 3 || x.cols() < 2) throw InvalidArgument("pca_project: need >= 3 points of dimension >= 2");
  const MatrixXd c = x.rowwise() - x.colwise().mean();
  const MatrixXd cov = (c.transpose() * c) / static_cast<double>(x.rows() - 1);
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(cov);
  if (es.info() != Eigen::Success) throw ComputationError("pca_project: eigendecomposition failed");
  const VectorXd vals = es.eigenvalues().cwiseMax(0.0);
  const double total = vals.sum();
  if (!(total > 0.0)) throw InvalidArgument("pca_project: rank-0 data");
  PcaResult r;
  const Index d = x.cols();
  r.components.resize(d, 2);
  for (int k = 0; k < 2; ++k) {
    VectorXd v = es.eigenvectors().col(d - 1 - k);
    Index arg;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    r.components.col(k) = v.normalized();
    r.explained[k] = vals(d - 1 - k) / total;
  }
  r.coords = c * r.components;
  return r;
}

nlohmann::json ProbeReport::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& l : layers)
    rows.push_back({{"layer", l.layer}, {"probe_accuracy", l.probe_accuracy}, {"silhouette", l.silhouette}, {"ari", l.ari}});
  return {{"scheme", scheme},
          {"layers", rows},
          {"best_layer", {{"probe_accuracy", best_probe_layer}, {"silhouette", best_silhouette_layer}, {"ari", best_ari_layer}}}};
}

std::string ProbeReport::to_csv() const {
  std::ostringstream out;
  out.precision(10);
  out << "layer,metric,value\n";
  for (const auto& l : layers) {
    out << l.layer << ",probe_accuracy," << l.probe_accuracy << "\n";
    out << l.layer << ",silhouette," << l.silhouette << "\n";
    out << l.layer << ",ari," << l.ari << "\n";
  }
  return out.str();
}

LabeledActivations capture_layer(const SteerableModel& model, const std::vector<LabeledPrompt>& prompts,
                                 std::size_t layer, const std::string& scheme) {
  if (prompts.empty()) throw InvalidArgument("capture_layer: no prompts");
  LabeledActivations d;
  d.layer = layer;
  d.scheme = scheme;
  d.rows.resize(static_cast<Index>(prompts.size()), static_cast<Index>(model.hidden_dim()));
  const std::size_t layers[1] = {layer};
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const Capture cap = forward_with_capture(model, prompts[i].prompt, layers);
    d.rows.row(static_cast<Index>(i)) = cap.activations.at(layer).transpose();
    d.labels.push_back(prompts[i].label);
  }
  return d;
}

ProbeReport layer_sweep(const SteerableModel& model, const std::vector<LabeledPrompt>& prompts,
                        const std::string& scheme, std::uint64_t seed, const ProbeConfig& config) {
  if (prompts.empty()) throw InvalidArgument("layer_sweep: no prompts");
  const std::size_t L = model.layer_count();
  std::vector<MatrixXd> acts(L, MatrixXd(static_cast<Index>(prompts.size()), static_cast<Index>(model.hidden_dim())));
  std::vector<int> labels;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    prompts[i].prompt.validate(model.vocab());
    const PromptTrace tr = model.trace(prompts[i].prompt);
    for (std::size_t l = 0; l < L; ++l)
      acts[l].row(static_cast<Index>(i)) = tr.layers[l].row(static_cast<Index>(prompts[i].prompt.prompt_end));
    labels.push_back(prompts[i].label);
  }
  ProbeReport rep;
  rep.scheme = scheme;
  const std::size_t k = std::set<int>(labels.begin(), labels.end()).size();
  for (std::size_t l = 0; l < L; ++l) {
    LabeledActivations d{acts[l], labels, l, scheme};
    LayerMetrics m;
    m.layer = l;
    m.probe_accuracy = train_linear_probe(d, seed, config).test_accuracy;
    m.silhouette = silhouette(acts[l], labels);
    m.ari = adjusted_rand_index(kmeans(acts[l], k, derive_seed(seed, l)).labels, labels);
    rep.layers.push_back(m);
  }
  auto best = [&](auto field) {
    std::size_t b = 0;
    for (std::size_t i = 1; i < rep.layers.size(); ++i)
      if (rep.layers[i].*field > rep.layers[b].*field) b = i;
    return rep.layers[b].layer;
  };
  rep.best_probe_layer = best(&LayerMetrics::probe_accuracy);
  rep.best_silhouette_layer = best(&LayerMetrics::silhouette);
  rep.best_ari_layer = best(&LayerMetrics::ari);
  return rep;
}

std::string pca_csv(const PcaResult& pca, const std::vector<int>& labels) {
  std::ostringstream out;
  out.precision(12);
  out << "index,label,pc1,pc2\n";
  for (Index i = 0; i < pca.coords.rows(); ++i)
    out << i << "," << (static_cast<std::size_t>(i) < labels.size() ? labels[static_cast<std::size_t>(i)] : -1) << ","
        << pca.coords(i, 0) << "," << pca.coords(i, 1) << "\n";
  return out.str();
}

}  // namespace molace
