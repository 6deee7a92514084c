#pragma once

// Discrete latent-concept model: concepts theta with prior P(theta), per-prompt
// likelihood weights P(x|theta) and per-concept answer distributions P(z|theta).
// The simulator assumes concept sufficiency: once theta is fixed, the surface
// prompt carries no further information about the answer.

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "molace/common.hpp"

namespace molace {

struct Concept {
  std::string label;
  double prior = 0.0;
  std::set<std::string> tags;
  std::vector<double> response;  // aligned with ConceptSpace::answers()
};

class ConceptSpace {
 public:
  ConceptSpace(std::vector<std::string> answers, std::vector<Concept> concepts,
               std::map<std::string, std::vector<double>> prompts);

  const std::vector<std::string>& answers() const { return answers_; }
  const std::vector<Concept>& concepts() const { return concepts_; }
  const std::map<std::string, std::vector<double>>& prompts() const { return prompts_; }
  std::size_t answer_index(std::string_view answer) const;
  const std::vector<double>& likelihood(std::string_view prompt) const;

  static ConceptSpace from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  static ConceptSpace load(const std::filesystem::path& path);

 private:
  std::vector<std::string> answers_;
  std::vector<Concept> concepts_;
  std::map<std::string, std::vector<double>> prompts_;
};

/// P(theta|x) proportional to P(x|theta) P(theta).
std::vector<double> posterior(const ConceptSpace& space, std::string_view x);
/// P(z|x) = sum_theta P(z|theta) P(theta|x).
std::vector<double> marginal_response(const ConceptSpace& space, std::string_view x);
/// Posterior mass on the concepts carrying `tag`.
double posterior_mass(const ConceptSpace& space, std::string_view x, std::string_view tag);

/// P(z | x, Z) proportional to sum_theta P(z|theta) P(x|theta) P(theta) prod_j P(z_j|theta),
/// with the prior (not the posterior) inside the sum. Z holds answer indices.
std::vector<double> debate_update(const ConceptSpace& space, std::string_view x, const std::vector<std::size_t>& prev);
std::vector<double> debate_update(const ConceptSpace& space, std::string_view x,
                                  const std::vector<std::string>& prev);
/// Unnormalized concept weights P(x|theta) P(theta) prod_j P(z_j|theta) inside the sum, normalized over theta.
std::vector<double> debate_concept_weights(const ConceptSpace& space, std::string_view x,
                                           const std::vector<std::size_t>& prev);

enum class SimMode { sampled, expected };

struct SimRound {
  std::size_t round = 0;
  std::vector<std::vector<double>> agent_dists;  // per agent, over answers
  std::vector<std::size_t> responses;            // sampled mode only
};

struct SimResult {
  std::vector<SimRound> rounds;
  SimMode mode = SimMode::expected;
  std::vector<std::string> warnings;
};

/// Round 0 draws from the baseline marginal; round t applies debate_update to round t-1.
/// Expected mode tracks the exact joint law of the agents' answers and needs
/// n_agents <= 4 and |answers| <= 4; larger spaces fall back to sampled mode with a warning.
SimResult simulate_debate(const ConceptSpace& space, std::string_view x, std::size_t n_agents, std::size_t rounds,
                          SimMode mode, std::uint64_t seed = 0);

enum class Evidence { last_round, cumulative };

/// Every agent answers `forced` in every round; returns P(forced) per round, starting
/// with the baseline. last_round conditions on the previous round only;
/// cumulative conditions on every earlier round.
std::vector<double> echo_trajectory(const ConceptSpace& space, std::string_view x, std::string_view forced,
                                    std::size_t n_agents, std::size_t rounds, Evidence evidence = Evidence::last_round);

/// Two equally likely concepts answering z* with probability 0.9 and 0.1.
ConceptSpace echo_space();

/// Fraction of trials in which plurality over k i.i.d. draws picks the modal answer.
/// Plurality ties go to the lowest answer index.
double majority_limit(const std::vector<double>& answer_dist, std::size_t k, std::size_t trials, std::uint64_t seed);

/// CSV lines "round,answer,probability" (with header) for per-agent-mean distributions.
std::string sim_csv(const ConceptSpace& space, const SimResult& result);

}  // namespace molace
