#include "doctest.h"

#include <cmath>

#include "molace/analytic_lm.hpp"
#include "molace/gate.hpp"
#include "molace/mixture.hpp"
#include "molace/sampling.hpp"

using namespace molace;

namespace {

ContrastPairSet analytic_pairs(const AnalyticConceptLM& lm, std::size_t n) {
  ContrastPairSet set;
  for (std::size_t i = 0; i < n; ++i)
    set.pairs.emplace_back(lm.make_prompt("SUPPORT", 1 + i % 3), lm.make_prompt("CHALLENGE", 2 + i % 2));
  return set;
}

double yes_prob(const AnalyticConceptLM& lm, const PromptTokens& p, const std::optional<InterventionSpec>& spec) {
  auto state = lm.begin(p);
  return forward_step(lm, *state, spec)[static_cast<std::size_t>(lm.vocab().id_of("YES"))];
}

}  // namespace

TEST_CASE("analytic activations follow the marker") {
  AnalyticConceptLM lm;
  const auto support = lm.trace(lm.make_prompt("SUPPORT"));
  const auto neutral = lm.trace(lm.make_prompt("NEUTRAL"));
  const Eigen::VectorXd last_s = support.layers[0].bottomRows(1).transpose();
  const Eigen::VectorXd last_n = neutral.layers[0].bottomRows(1).transpose();
  CHECK((last_s - (lm.base_vector() + lm.planted_direction())).norm() < 1e-12);
  CHECK((last_n - lm.base_vector()).norm() < 1e-12);
}

TEST_CASE("intervention shifts the analytic logit gap by 2 g alpha") {
  AnalyticConceptLM lm;
  const PromptTokens p = lm.make_prompt("NEUTRAL");
  const TokenId yes = lm.vocab().id_of("YES"), no = lm.vocab().id_of("NO");
  for (double alpha : {2.0, -2.0}) {
    auto state = lm.begin(p);
    const InterventionSpec spec{0, alpha, lm.planted_direction()};
    const Eigen::VectorXd logits = lm.step_logits(*state, &spec);
    CHECK(logits[yes] - logits[no] == doctest::Approx(2.0 * alpha).epsilon(1e-12));
  }
}

TEST_CASE("zero intervention leaves the step distribution unchanged") {
  AnalyticConceptLM lm;
  const PromptTokens p = lm.make_prompt("SUPPORT");
  auto a = lm.begin(p);
  auto b = lm.begin(p);
  const auto plain = forward_step(lm, *a, std::nullopt);
  const auto zero = forward_step(lm, *b, InterventionSpec{0, 0.0, lm.planted_direction()});
  for (std::size_t i = 0; i < plain.size(); ++i) CHECK(std::abs(plain[i] - zero[i]) <= 1e-9);
}

TEST_CASE("nucleus filter keeps the crossing token and renormalizes") {
  const std::vector<double> p{0.5, 0.3, 0.15, 0.05};
  const auto q = nucleus_filter(p, 0.9);
  CHECK(q[0] == doctest::Approx(0.5 / 0.95).epsilon(1e-12));
  CHECK(q[1] == doctest::Approx(0.3 / 0.95).epsilon(1e-12));
  CHECK(q[2] == doctest::Approx(0.15 / 0.95).epsilon(1e-12));
  CHECK(q[3] == 0.0);
  CHECK(q[0] == doctest::Approx(0.5263).epsilon(1e-4));
  const auto same = nucleus_filter(p, 1.0);
  for (std::size_t i = 0; i < p.size(); ++i) CHECK(same[i] == doctest::Approx(p[i]));
}

TEST_CASE("generation is deterministic under a seed") {
  AnalyticConceptLM lm;
  GenerationParams params{0.9, 0.95, 6, 11};
  const auto p = lm.make_prompt("SUPPORT");
  CHECK(generate(lm, p, params) == generate(lm, p, params));
}

TEST_CASE("CAA on the analytic model recovers the planted direction") {
  AnalyticConceptLM lm;
  const auto pairs = analytic_pairs(lm, 5);
  const SteeringVector v = extract_caa(lm, pairs);
  CHECK(v.direction.norm() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(v.direction.dot(lm.planted_direction()) >= 1.0 - 1e-12);
  CHECK(v.raw_norm == doctest::Approx(2.0).epsilon(1e-12));

  ContrastPairSet swapped = pairs;
  for (auto& pr : swapped.pairs) std::swap(pr.first, pr.second);
  const SteeringVector w = extract_caa(lm, swapped);
  CHECK((w.direction + v.direction).norm() == 0.0);
}

TEST_CASE("identical contrast prompts give a degenerate direction") {
  AnalyticConceptLM lm;
  ContrastPairSet set;
  set.pairs.emplace_back(lm.make_prompt("SUPPORT"), lm.make_prompt("SUPPORT"));
  CHECK_THROWS_AS(extract_caa(lm, set), DegenerateDirectionError);
}

TEST_CASE("alignment cosine") {
  Eigen::VectorXd v(3);
  v << 0.0, 0.6, 0.8;
  Eigen::VectorXd orth(3);
  orth << 1.0, 0.0, 0.0;
  CHECK(alignment_cosine(Eigen::VectorXd(2 * v), v) == doctest::Approx(1.0));
  CHECK(alignment_cosine(orth, v) == doctest::Approx(0.0));
  CHECK(alignment_cosine(Eigen::VectorXd(-3 * v), v) == doctest::Approx(-1.0));
  CHECK_THROWS_AS(alignment_cosine(Eigen::VectorXd::Zero(3), v), UndefinedAlignmentError);
}

TEST_CASE("steering vector JSON round trip") {
  AnalyticConceptLM lm;
  const SteeringVector v = extract_caa(lm, analytic_pairs(lm, 3));
  const SteeringVector w = steering_from_json(steering_to_json(v));
  CHECK(w.layer == v.layer);
  CHECK((w.direction - v.direction).norm() == 0.0);
  CHECK(w.model_fingerprint == v.model_fingerprint);
}

TEST_CASE("robust alignment on the analytic model") {
  AnalyticConceptLM lm;
  const SteeringVector v = extract_caa(lm, analytic_pairs(lm, 5));
  const double expected = 1.0 / std::sqrt(lm.base_vector().squaredNorm() + 1.0);
  const auto support = lm.make_prompt("SUPPORT", 5);
  const double s = robust_alignment(lm, support, v, 4);
  CHECK(s == doctest::Approx(expected).epsilon(1e-9));
  CHECK(robust_alignment(lm, lm.make_prompt("CHALLENGE", 5), v, 4) == doctest::Approx(-s).epsilon(1e-9));

  const auto tr = lm.trace(support);
  const Eigen::VectorXd last = tr.layers[0].row(static_cast<Eigen::Index>(support.prompt_end)).transpose();
  CHECK(robust_alignment(lm, support, v, 1) == doctest::Approx(alignment_cosine(last, v)).epsilon(1e-12));
}

TEST_CASE("map_to_mu sign conventions") {
  const AlphaGrid grid;
  GateConfig amplify;
  amplify.mode = GateMode::amplify;
  GateConfig neutralize;
  CHECK(map_to_mu(1.0, grid, amplify) == doctest::Approx(3.0));
  CHECK(map_to_mu(0.0, grid, amplify) == 0.0);
  CHECK(map_to_mu(0.0, grid, neutralize) == 0.0);
  CHECK(map_to_mu(-0.5, grid, neutralize) == doctest::Approx(1.5));
}

TEST_CASE("RBF weights at mu 0") {
  const AlphaGrid grid;
  const GateWeights w = rbf_weights(0.0, grid, 1.0);
  // Independent evaluation of exp(-a^2/2) normalized.
  double z = 0.0;
  for (double a : grid.values()) z += std::exp(-a * a / 2.0);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double a = grid.values()[i];
    CHECK(w.weights[i] == doctest::Approx(std::exp(-a * a / 2.0) / z).epsilon(1e-12));
    CHECK(w.weight_of(a) == w.weight_of(-a));
  }
  const double pattern[] = {0.0044, 0.0540, 0.2420, 0.3991, 0.2420, 0.0540, 0.0044};
  for (std::size_t i = 0; i < 7; ++i) CHECK(std::abs(w.weights[i] - pattern[i]) < 1e-4);

  const GateWeights sharp = rbf_weights(2.0, grid, 1e-6);
  CHECK(sharp.weight_of(2.0) >= 1.0 - 1e-9);
}

TEST_CASE("finalize pipeline") {
  const AlphaGrid grid;
  const GateWeights base = rbf_weights(0.7, grid, 1.0);
  GateConfig off;
  off.sample_gate = false;
  off.shrink_lambda = 0.0;
  const GateWeights same = finalize(base, off, 1);
  for (std::size_t i = 0; i < grid.size(); ++i) CHECK(same.weights[i] == doctest::Approx(base.weights[i]));

  GateConfig full = off;
  full.shrink_lambda = 1.0;
  for (double w : finalize(base, full, 1).weights) CHECK(w == doctest::Approx(1.0 / 7.0));

  GateConfig top1 = off;
  top1.topk = 1;
  const GateWeights one = finalize(rbf_weights(0.0, grid, 1.0), top1, 1);
  CHECK(one.weight_of(0.0) == doctest::Approx(1.0));

  GateConfig sampled;
  const GateWeights a = finalize(base, sampled, 42), b = finalize(base, sampled, 42);
  CHECK(a.weights == b.weights);
  CHECK(a.valid());
}

TEST_CASE("gate contract over random configurations") {
  Rng rng(2024);
  const AlphaGrid grid;
  for (int i = 0; i < 300; ++i) {
    GateConfig c;
    c.mode = uniform01(rng) < 0.5 ? GateMode::amplify : GateMode::neutralize;
    c.sigma = 0.05 + 3.0 * uniform01(rng);
    c.shrink_lambda = uniform01(rng);
    if (uniform01(rng) < 0.5) c.topk = 1 + uniform_index(rng, grid.size());
    c.sample_gate = uniform01(rng) < 0.5;
    const double s = 2.0 * uniform01(rng) - 1.0;
    const GateWeights w = finalize(rbf_weights(map_to_mu(s, grid, c), grid, c.sigma), c, rng());
    double sum = 0.0;
    for (double x : w.weights) {
      CHECK(x >= 0.0);
      sum += x;
    }
    CHECK(std::abs(sum - 1.0) <= 1e-9);
  }
}

TEST_CASE("mixture of expert distributions") {
  const AlphaGrid grid(std::vector<double>{-1, 0, 1});
  std::map<double, Distribution> d{{-1.0, {0.7, 0.2, 0.1}}, {0.0, {0.2, 0.5, 0.3}}, {1.0, {0.1, 0.1, 0.8}}};
  const GateWeights w = rbf_weights(0.0, grid, 1.0);
  const Distribution m = mix(d, w);
  for (std::size_t t = 0; t < 3; ++t) {
    const double want = w.weights[0] * d[-1.0][t] + w.weights[1] * d[0.0][t] + w.weights[2] * d[1.0][t];
    CHECK(std::abs(m[t] - want) <= 1e-12);
  }
  const Distribution hot = mix(d, one_hot_gate(grid, 1.0));
  CHECK(hot == d[1.0]);

  const AlphaGrid two(std::vector<double>{0, 1});
  GateWeights half = uniform_gate(two);
  const Distribution sym = mix({{0.0, {0.8, 0.2}}, {1.0, {0.2, 0.8}}}, half);
  CHECK(sym[0] == doctest::Approx(0.5));
}

TEST_CASE("expert YES probability increases with alpha on the analytic model") {
  AnalyticConceptLM lm;
  const SteeringVector v = extract_caa(lm, analytic_pairs(lm, 5));
  const auto p = lm.make_prompt("NEUTRAL");
  ExpertSet experts(lm, p, v, {-2.0, 0.0, 2.0});
  const auto d = experts.step();
  const auto yes = static_cast<std::size_t>(lm.vocab().id_of("YES"));
  CHECK(d.at(-2.0)[yes] < d.at(0.0)[yes]);
  CHECK(d.at(0.0)[yes] < d.at(2.0)[yes]);
  CHECK(std::abs(d.at(0.0)[yes] - yes_prob(lm, p, std::nullopt)) <= 1e-12);
}

TEST_CASE("one-hot gate reproduces the fixed intervention") {
  AnalyticConceptLM lm;
  const SteeringVector v = extract_caa(lm, analytic_pairs(lm, 5));
  const AlphaGrid grid;
  const GenerationParams params{0.8, 0.9, 6, 5};
  const auto p = lm.make_prompt("CHALLENGE");
  const auto mixed = generate_with_gate(lm, p, v, one_hot_gate(grid, 2.0), params);
  CHECK(mixed.tokens == generate(lm, p, params, v.at(2.0)));
  const auto neutral = generate_with_gate(lm, p, v, one_hot_gate(grid, 0.0), params);
  CHECK(neutral.tokens == generate(lm, p, params));
}
