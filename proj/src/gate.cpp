#include "molace/gate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace molace {

AlphaGrid::AlphaGrid(std::vector<double> values) : values_(std::move(values)) {
  if (values_.empty()) throw InvalidArgument("AlphaGrid: empty grid");
  for (double a : values_)
    if (!std::isfinite(a)) throw InvalidArgument("AlphaGrid: non-finite value");
  std::sort(values_.begin(), values_.end());
  if (std::adjacent_find(values_.begin(), values_.end()) != values_.end())
    throw InvalidArgument("AlphaGrid: duplicate values");
  if (!index_of(0.0)) throw InvalidArgument("AlphaGrid: grid must contain 0");
  for (double a : values_) alpha_max_ = std::max(alpha_max_, std::abs(a));
}

std::optional<std::size_t> AlphaGrid::index_of(double alpha) const {
  for (std::size_t i = 0; i < values_.size(); ++i)
    if (values_[i] == alpha) return i;
  return std::nullopt;
}

std::string_view gate_mode_name(GateMode m) { return m == GateMode::amplify ? "amplify" : "neutralize"; }

GateMode parse_gate_mode(std::string_view s) {
  if (s == "amplify") return GateMode::amplify;
  if (s == "neutralize") return GateMode::neutralize;
  throw InvalidArgument("unknown gate mode: " + std::string(s));
}

void GateConfig::validate(std::size_t grid_size) const {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw InvalidArgument("GateConfig: sigma must be > 0");
  if (!(kappa > 0.0) || !(explore_kappa > 0.0)) throw InvalidArgument("GateConfig: kappa must be > 0");
  if (!(shrink_lambda >= 0.0 && shrink_lambda <= 1.0)) throw InvalidArgument("GateConfig: shrink_lambda must lie in [0, 1]");
  if (topk && (*topk < 1 || *topk > grid_size)) throw InvalidArgument("GateConfig: topk must lie in [1, |grid|]");
  if (positions < 1) throw InvalidArgument("GateConfig: positions must be >= 1");
}

nlohmann::json GateConfig::to_json() const {
  nlohmann::json j{{"sigma", sigma},
                   {"mode", gate_mode_name(mode)},
                   {"counter_bias", counter_bias},
                   {"kappa", kappa},
                   {"explore", explore},
                   {"explore_kappa", explore_kappa},
                   {"shrink_lambda", shrink_lambda},
                   {"sample_gate", sample_gate},
                   {"positions", positions}};
  j["topk"] = topk ? nlohmann::json(*topk) : nlohmann::json(nullptr);
  return j;
}

GateConfig GateConfig::from_json(const nlohmann::json& j) {
  GateConfig c;
  c.sigma = j.value("sigma", c.sigma);
  if (j.contains("mode")) c.mode = parse_gate_mode(j["mode"].get<std::string>());
  c.counter_bias = j.value("counter_bias", c.counter_bias);
  c.kappa = j.value("kappa", c.kappa);
  c.explore = j.value("explore", c.explore);
  c.explore_kappa = j.value("explore_kappa", c.explore_kappa);
  c.shrink_lambda = j.value("shrink_lambda", c.shrink_lambda);
  c.sample_gate = j.value("sample_gate", c.sample_gate);
  c.positions = j.value("positions", c.positions);
  if (j.contains("topk") && !j["topk"].is_null()) c.topk = j["topk"].get<std::size_t>();
  return c;
}

double GateWeights::weight_of(double alpha) const {
  for (std::size_t i = 0; i < alphas.size(); ++i)
    if (alphas[i] == alpha) return weights[i];
  throw InvalidArgument("GateWeights: alpha not on the grid");
}

namespace {

// True when (wa, a) ranks ahead of (wb, b): larger weight, then smaller |alpha|, then smaller alpha.
bool ranks_ahead(double wa, double a, double wb, double b) {
  if (wa != wb) return wa > wb;
  if (std::abs(a) != std::abs(b)) return std::abs(a) < std::abs(b);
  return a < b;
}

}  // namespace

std::size_t GateWeights::argmax() const {
  if (weights.empty()) throw InvalidArgument("GateWeights: empty");
  std::size_t best = 0;
  for (std::size_t i = 1; i < weights.size(); ++i)
    if (ranks_ahead(weights[i], alphas[i], weights[best], alphas[best])) best = i;
  return best;
}

std::vector<double> GateWeights::support() const {
  std::vector<double> out;
  for (std::size_t i = 0; i < weights.size(); ++i)
    if (weights[i] > 0.0) out.push_back(alphas[i]);
  return out;
}

bool GateWeights::valid(double tol) const {
  if (weights.size() != alphas.size() || weights.empty()) return false;
  double sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) return false;
    sum += w;
  }
  return std::abs(sum - 1.0) <= tol;
}

nlohmann::json GateWeights::to_json() const {
  return {{"alphas", alphas}, {"weights", weights}, {"mu", mu}, {"s", s}};
}

double robust_alignment(const SteerableModel& model, const PromptTokens& prompt, const SteeringVector& v,
                        std::size_t m) {
  if (m < 1) throw InvalidArgument("robust_alignment: m must be >= 1");
  if (prompt.prompt_end + 1 < m) throw InvalidArgument("robust_alignment: prompt shorter than m positions");
  if (v.layer >= model.layer_count()) throw InvalidArgument("robust_alignment: layer out of range");
  prompt.validate(model.vocab());
  const PromptTrace tr = model.trace(prompt);
  const Eigen::MatrixXd& rows = tr.layers.at(v.layer);
  std::vector<double> cos;
  cos.reserve(m);
  for (std::size_t i = prompt.prompt_end + 1 - m; i <= prompt.prompt_end; ++i)
    cos.push_back(alignment_cosine(Eigen::VectorXd(rows.row(static_cast<Eigen::Index>(i)).transpose()), v));
  std::sort(cos.begin(), cos.end());
  const std::size_t mid = cos.size() / 2;
  return cos.size() % 2 == 1 ? cos[mid] : 0.5 * (cos[mid - 1] + cos[mid]);
}

double map_to_mu(double s, const AlphaGrid& grid, const GateConfig& config) {
  if (!(s >= -1.0 && s <= 1.0)) throw InvalidArgument("map_to_mu: s must lie in [-1, 1]");
  double mu = grid.alpha_max() * s;
  if (config.mode == GateMode::neutralize) mu = -mu;
  if (config.counter_bias) mu = -mu;
  return mu + 0.0;  // canonical +0 for s = 0
}

GateWeights rbf_weights(double mu, const AlphaGrid& grid, double sigma) {
  if (!(sigma > 0.0)) throw InvalidArgument("rbf_weights: sigma must be > 0");
  if (!std::isfinite(mu)) throw InvalidArgument("rbf_weights: mu must be finite");
  GateWeights g;
  g.alphas = grid.values();
  g.mu = mu;
  std::vector<double> logw(g.alphas.size());
  for (std::size_t i = 0; i < logw.size(); ++i) {
    const double d = g.alphas[i] - mu;
    logw[i] = -(d * d) / (2.0 * sigma * sigma);
  }
  const double mx = *std::max_element(logw.begin(), logw.end());
  g.weights.resize(logw.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logw.size(); ++i) sum += g.weights[i] = std::exp(logw[i] - mx);
  for (double& w : g.weights) w /= sum;
  return g;
}

std::vector<double> sample_dirichlet(const std::vector<double>& conc, Rng& rng) {
  std::vector<double> out(conc.size(), 0.0);
  double sum = 0.0;
  for (std::size_t i = 0; i < conc.size(); ++i) {
    if (!(conc[i] >= 0.0) || !std::isfinite(conc[i])) throw InvalidArgument("sample_dirichlet: bad concentration");
    if (conc[i] == 0.0) continue;
    std::gamma_distribution<double> gamma(conc[i], 1.0);
    sum += out[i] = gamma(rng);
  }
  if (!(sum > 0.0)) {
    // Every draw underflowed; fall back to the Dirichlet mean.
    const double total = std::accumulate(conc.begin(), conc.end(), 0.0);
    if (!(total > 0.0)) throw InvalidArgument("sample_dirichlet: all concentrations are zero");
    for (std::size_t i = 0; i < conc.size(); ++i) out[i] = conc[i] / total;
    return out;
  }
  for (double& w : out) w /= sum;
  return out;
}

GateWeights finalize(const GateWeights& base, const GateConfig& config, std::uint64_t seed) {
  if (!base.valid()) throw InvalidArgument("finalize: base weights are not a distribution");
  config.validate(base.weights.size());
  GateWeights g = base;
  const std::size_t n = g.weights.size();
  if (config.sample_gate) {
    Rng rng(seed);
    std::vector<double> conc(n);
    for (std::size_t i = 0; i < n; ++i) conc[i] = config.effective_kappa() * base.weights[i];
    g.weights = sample_dirichlet(conc, rng);
  }
  const double lam = config.shrink_lambda;
  for (double& w : g.weights) w = (1.0 - lam) * w + lam / static_cast<double>(n);
  if (config.topk && *config.topk < n) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return ranks_ahead(g.weights[a], g.alphas[a], g.weights[b], g.alphas[b]);
    });
    for (std::size_t r = *config.topk; r < n; ++r) g.weights[order[r]] = 0.0;
  }
  double sum = std::accumulate(g.weights.begin(), g.weights.end(), 0.0);
  if (!(sum > 0.0)) {
    // Only reachable when every kept entry is exactly zero; keep the top entry.
    std::fill(g.weights.begin(), g.weights.end(), 0.0);
    g.weights[base.argmax()] = 1.0;
    sum = 1.0;
  }
  for (double& w : g.weights) w /= sum;
  return g;
}

GateWeights compute_gate(const SteerableModel& model, const PromptTokens& prompt, const SteeringVector& v,
                         const AlphaGrid& grid, const GateConfig& config, std::uint64_t seed) {
  config.validate(grid.size());
  const double s = robust_alignment(model, prompt, v, config.positions);
  GateWeights g = finalize(rbf_weights(map_to_mu(s, grid, config), grid, config.sigma), config, seed);
  g.s = s;
  return g;
}

GateWeights one_hot_gate(const AlphaGrid& grid, double alpha) {
  const auto idx = grid.index_of(alpha);
  if (!idx) throw InvalidArgument("one_hot_gate: alpha not on the grid");
  GateWeights g;
  g.alphas = grid.values();
  g.weights.assign(grid.size(), 0.0);
  g.weights[*idx] = 1.0;
  g.mu = alpha;
  return g;
}

GateWeights uniform_gate(const AlphaGrid& grid) {
  GateWeights g;
  g.alphas = grid.values();
  g.weights.assign(grid.size(), 1.0 / static_cast<double>(grid.size()));
  return g;
}

}  // namespace molace
