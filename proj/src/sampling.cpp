#include "molace/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace molace {

Distribution softmax(const Eigen::VectorXd& logits, double temperature) {
  if (!(temperature > 0.0)) throw InvalidArgument("softmax: temperature must be positive");
  Distribution out(static_cast<std::size_t>(logits.size()));
  if (out.empty()) return out;
  const double mx = logits.maxCoeff();
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    const double e = std::exp((logits[i] - mx) / temperature);
    out[static_cast<std::size_t>(i)] = e;
    total += e;
  }
  for (double& p : out) p /= total;
  return out;
}

Distribution nucleus_filter(std::span<const double> probs, double top_p) {
  if (!(top_p > 0.0 && top_p <= 1.0)) throw InvalidArgument("nucleus_filter: top_p must lie in (0, 1]");
  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });

  Distribution out(probs.size(), 0.0);
  double cumulative = 0.0;
  std::size_t kept = 0;
  for (std::size_t idx : order) {
    cumulative += probs[idx];
    ++kept;
    if (cumulative >= top_p) break;
  }
  double mass = 0.0;
  for (std::size_t i = 0; i < kept; ++i) mass += probs[order[i]];
  if (!(mass > 0.0)) throw ComputationError("nucleus_filter: kept set has zero mass");
  for (std::size_t i = 0; i < kept; ++i) out[order[i]] = probs[order[i]] / mass;
  return out;
}

TokenId sample_token(std::span<const double> probs, Rng& rng) {
  if (probs.empty()) throw InvalidArgument("sample_token: empty distribution");
  const double total = std::accumulate(probs.begin(), probs.end(), 0.0);
  const double target = uniform01(rng) * total;
  double acc = 0.0;
  std::size_t last_nonzero = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    last_nonzero = i;
    acc += probs[i];
    if (target < acc) return static_cast<TokenId>(i);
  }
  return static_cast<TokenId>(last_nonzero);
}

TokenId sample_nucleus(std::span<const double> probs, double top_p, Rng& rng) {
  if (top_p >= 1.0) return sample_token(probs, rng);
  const Distribution kept = nucleus_filter(probs, top_p);
  return sample_token(kept, rng);
}

bool is_distribution(std::span<const double> probs, double tol) {
  double total = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0) || !std::isfinite(p)) return false;
    total += p;
  }
  return std::abs(total - 1.0) <= tol;
}

}  // namespace molace
