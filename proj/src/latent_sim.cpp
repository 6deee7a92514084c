#include "molace/latent_sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "molace/sampling.hpp"

namespace molace {

namespace {

constexpr double kSumTol = 1e-9;

std::vector<double> normalized(std::vector<double> w, const char* what) {
  const double sum = std::accumulate(w.begin(), w.end(), 0.0);
  if (!(sum > 0.0) || !std::isfinite(sum)) throw ComputationError(std::string(what) + ": zero total weight");
  for (double& x : w) x /= sum;
  return w;
}

}  // namespace

ConceptSpace::ConceptSpace(std::vector<std::string> answers, std::vector<Concept> concepts,
                           std::map<std::string, std::vector<double>> prompts)
    : answers_(std::move(answers)), concepts_(std::move(concepts)), prompts_(std::move(prompts)) {
  if (answers_.empty()) throw InvalidArgument("ConceptSpace: no answers");
  if (concepts_.empty()) throw InvalidArgument("ConceptSpace: no concepts");
  std::set<std::string> seen(answers_.begin(), answers_.end());
  if (seen.size() != answers_.size()) throw InvalidArgument("ConceptSpace: duplicate answers");
  double prior = 0.0;
  std::set<std::string> labels;
  for (const auto& c : concepts_) {
    if (!labels.insert(c.label).second) throw InvalidArgument("ConceptSpace: duplicate concept label " + c.label);
    if (!(c.prior >= 0.0)) throw InvalidArgument("ConceptSpace: negative prior for " + c.label);
    prior += c.prior;
    if (c.response.size() != answers_.size()) throw InvalidArgument("ConceptSpace: response size mismatch for " + c.label);
    double row = 0.0;
    for (double p : c.response) {
      if (!(p >= 0.0)) throw InvalidArgument("ConceptSpace: negative response probability for " + c.label);
      row += p;
    }
    if (std::abs(row - 1.0) > kSumTol) throw InvalidArgument("ConceptSpace: response row does not sum to 1 for " + c.label);
  }
  if (std::abs(prior - 1.0) > kSumTol) throw InvalidArgument("ConceptSpace: prior does not sum to 1");
  for (const auto& [name, lik] : prompts_) {
    if (lik.size() != concepts_.size()) throw InvalidArgument("ConceptSpace: likelihood size mismatch for prompt " + name);
    double mass = 0.0;
    for (std::size_t i = 0; i < lik.size(); ++i) {
      if (!(lik[i] >= 0.0) || !std::isfinite(lik[i]))
        throw InvalidArgument("ConceptSpace: likelihood must be finite and >= 0 for prompt " + name);
      mass += lik[i] * concepts_[i].prior;
    }
    if (!(mass > 0.0)) throw InvalidArgument("ConceptSpace: prompt " + name + " has zero evidence");
  }
}

std::size_t ConceptSpace::answer_index(std::string_view answer) const {
  for (std::size_t i = 0; i < answers_.size(); ++i)
    if (answers_[i] == answer) return i;
  throw InvalidArgument("ConceptSpace: answer outside the alphabet: " + std::string(answer));
}

const std::vector<double>& ConceptSpace::likelihood(std::string_view prompt) const {
  const auto it = prompts_.find(std::string(prompt));
  if (it == prompts_.end()) throw InvalidArgument("ConceptSpace: unknown prompt " + std::string(prompt));
  return it->second;
}

ConceptSpace ConceptSpace::from_json(const nlohmann::json& j) {
  try {
    std::vector<std::string> answers;
    if (j.contains("answers")) {
      answers = j["answers"].get<std::vector<std::string>>();
    } else {
      std::set<std::string> keys;
      for (const auto& c : j.at("concepts"))
        for (const auto& [k, _] : c.at("response").items()) keys.insert(k);
      answers.assign(keys.begin(), keys.end());
    }
    std::vector<Concept> concepts;
    for (const auto& c : j.at("concepts")) {
      Concept k;
      k.label = c.at("label").get<std::string>();
      k.prior = c.at("prior").get<double>();
      if (c.contains("tags")) {
        const auto tags = c["tags"].get<std::vector<std::string>>();
        k.tags.insert(tags.begin(), tags.end());
      }
      k.response.assign(answers.size(), 0.0);
      for (const auto& [a, p] : c.at("response").items()) {
        const auto it = std::find(answers.begin(), answers.end(), a);
        if (it == answers.end()) throw InvalidArgument("ConceptSpace: response answer not in alphabet: " + a);
        k.response[static_cast<std::size_t>(it - answers.begin())] = p.get<double>();
      }
      concepts.push_back(std::move(k));
    }
    std::map<std::string, std::vector<double>> prompts;
    if (j.contains("prompts")) {
      for (const auto& [name, lik] : j["prompts"].items()) {
        std::vector<double> w(concepts.size(), 0.0);
        for (const auto& [label, v] : lik.items()) {
          const auto it = std::find_if(concepts.begin(), concepts.end(), [&](const Concept& c) { return c.label == label; });
          if (it == concepts.end()) throw InvalidArgument("ConceptSpace: prompt " + name + " names unknown concept " + label);
          w[static_cast<std::size_t>(it - concepts.begin())] = v.get<double>();
        }
        prompts.emplace(name, std::move(w));
      }
    }
    return ConceptSpace(std::move(answers), std::move(concepts), std::move(prompts));
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("ConceptSpace: malformed JSON: ") + e.what());
  }
}

nlohmann::json ConceptSpace::to_json() const {
  nlohmann::json concepts = nlohmann::json::array();
  for (const auto& c : concepts_) {
    nlohmann::json resp = nlohmann::json::object();
    for (std::size_t i = 0; i < answers_.size(); ++i) resp[answers_[i]] = c.response[i];
    concepts.push_back({{"label", c.label}, {"prior", c.prior}, {"tags", c.tags}, {"response", resp}});
  }
  nlohmann::json prompts = nlohmann::json::object();
  for (const auto& [name, lik] : prompts_) {
    nlohmann::json w = nlohmann::json::object();
    for (std::size_t i = 0; i < lik.size(); ++i) w[concepts_[i].label] = lik[i];
    prompts[name] = w;
  }
  return {{"answers", answers_}, {"concepts", concepts}, {"prompts", prompts}};
}

ConceptSpace ConceptSpace::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("ConceptSpace: cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument("ConceptSpace: " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

std::vector<double> posterior(const ConceptSpace& space, std::string_view x) {
  const auto& lik = space.likelihood(x);
  std::vector<double> w(lik.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = lik[i] * space.concepts()[i].prior;
  return normalized(std::move(w), "posterior");
}

std::vector<double> marginal_response(const ConceptSpace& space, std::string_view x) {
  const auto post = posterior(space, x);
  std::vector<double> out(space.answers().size(), 0.0);
  for (std::size_t i = 0; i < post.size(); ++i)
    for (std::size_t z = 0; z < out.size(); ++z) out[z] += post[i] * space.concepts()[i].response[z];
  return out;
}

double posterior_mass(const ConceptSpace& space, std::string_view x, std::string_view tag) {
  bool known = tag == "all";
  for (const auto& c : space.concepts()) known = known || c.tags.count(std::string(tag)) > 0;
  if (!known && tag != "none") throw InvalidArgument("posterior_mass: unknown tag " + std::string(tag));
  const auto post = posterior(space, x);
  double mass = 0.0;
  for (std::size_t i = 0; i < post.size(); ++i)
    if (tag == "all" || space.concepts()[i].tags.count(std::string(tag))) mass += post[i];
  return mass;
}

std::vector<double> debate_concept_weights(const ConceptSpace& space, std::string_view x,
                                           const std::vector<std::size_t>& prev) {
  const auto& lik = space.likelihood(x);
  for (std::size_t z : prev)
    if (z >= space.answers().size()) throw InvalidArgument("debate_update: answer outside the alphabet");
  std::vector<double> w(space.concepts().size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    const Concept& c = space.concepts()[i];
    double v = lik[i] * c.prior;
    for (std::size_t z : prev) v *= c.response[z];
    w[i] = v;
  }
  return normalized(std::move(w), "debate_update (history impossible under every concept)");
}

std::vector<double> debate_update(const ConceptSpace& space, std::string_view x, const std::vector<std::size_t>& prev) {
  const auto w = debate_concept_weights(space, x, prev);
  std::vector<double> out(space.answers().size(), 0.0);
  for (std::size_t i = 0; i < w.size(); ++i)
    for (std::size_t z = 0; z < out.size(); ++z) out[z] += w[i] * space.concepts()[i].response[z];
  return normalized(std::move(out), "debate_update");
}

std::vector<double> debate_update(const ConceptSpace& space, std::string_view x, const std::vector<std::string>& prev) {
  std::vector<std::size_t> idx;
  idx.reserve(prev.size());
  for (const auto& a : prev) idx.push_back(space.answer_index(a));
  return debate_update(space, x, idx);
}

namespace {

SimResult simulate_sampled(const ConceptSpace& space, std::string_view x, std::size_t n, std::size_t rounds,
                           std::uint64_t seed) {
  SimResult res;
  res.mode = SimMode::sampled;
  const auto base = marginal_response(space, x);
  std::vector<std::size_t> prev;
  for (std::size_t t = 0; t < rounds; ++t) {
    SimRound r;
    r.round = t;
    const auto dist = t == 0 ? base : debate_update(space, x, prev);
    for (std::size_t a = 0; a < n; ++a) {
      Rng rng(derive_seed(seed, t, a));
      r.agent_dists.push_back(dist);
      r.responses.push_back(static_cast<std::size_t>(sample_token(dist, rng)));
    }
    prev = r.responses;
    res.rounds.push_back(std::move(r));
  }
  return res;
}

}  // namespace

SimResult simulate_debate(const ConceptSpace& space, std::string_view x, std::size_t n, std::size_t rounds,
                          SimMode mode, std::uint64_t seed) {
  if (n < 1 || rounds < 1) throw InvalidArgument("simulate_debate: need n_agents >= 1 and rounds >= 1");
  const std::size_t k = space.answers().size();
  if (mode == SimMode::sampled) return simulate_sampled(space, x, n, rounds, seed);
  if (n > 4 || k > 4) {
    SimResult res = simulate_sampled(space, x, n, rounds, seed);
    res.warnings.push_back("expected mode needs <= 4 agents and <= 4 answers; fell back to sampled mode");
    return res;
  }

  // Exact joint law over the agents' answers, indexed in base k.
  std::size_t states = 1;
  for (std::size_t a = 0; a < n; ++a) states *= k;
  auto decode = [&](std::size_t s) {
    std::vector<std::size_t> z(n);
    for (std::size_t a = 0; a < n; ++a) {
      z[a] = s % k;
      s /= k;
    }
    return z;
  };

  SimResult res;
  res.mode = SimMode::expected;
  const auto base = marginal_response(space, x);
  std::vector<double> joint(states, 1.0);
  for (std::size_t s = 0; s < states; ++s)
    for (std::size_t z : decode(s)) joint[s] *= base[z];

  for (std::size_t t = 0; t < rounds; ++t) {
    if (t > 0) {
      std::vector<double> next(states, 0.0);
      for (std::size_t s = 0; s < states; ++s) {
        if (joint[s] == 0.0) continue;
        std::vector<double> q;
        try {
          q = debate_update(space, x, decode(s));
        } catch (const ComputationError&) {
          continue;  // history impossible under every concept: carries no mass
        }
        for (std::size_t s2 = 0; s2 < states; ++s2) {
          double p = joint[s];
          for (std::size_t z : decode(s2)) p *= q[z];
          next[s2] += p;
        }
      }
      joint = normalized(std::move(next), "simulate_debate");
    }
    SimRound r;
    r.round = t;
    r.agent_dists.assign(n, std::vector<double>(k, 0.0));
    for (std::size_t s = 0; s < states; ++s) {
      const auto z = decode(s);
      for (std::size_t a = 0; a < n; ++a) r.agent_dists[a][z[a]] += joint[s];
    }
    res.rounds.push_back(std::move(r));
  }
  return res;
}

std::vector<double> echo_trajectory(const ConceptSpace& space, std::string_view x, std::string_view forced,
                                    std::size_t n_agents, std::size_t rounds, Evidence evidence) {
  if (n_agents < 1 || rounds < 1) throw InvalidArgument("echo_trajectory: need n_agents >= 1 and rounds >= 1");
  const std::size_t z = space.answer_index(forced);
  std::vector<double> out{marginal_response(space, x)[z]};
  std::vector<std::size_t> history;
  for (std::size_t t = 1; t < rounds; ++t) {
    const std::vector<std::size_t> round(n_agents, z);
    if (evidence == Evidence::last_round) history = round;
    else history.insert(history.end(), round.begin(), round.end());
    out.push_back(debate_update(space, x, history)[z]);
  }
  return out;
}

ConceptSpace echo_space() {
  std::vector<Concept> c(2);
  c[0] = Concept{"theta1", 0.5, {"biased"}, {0.9, 0.1}};
  c[1] = Concept{"theta2", 0.5, {"unbiased"}, {0.1, 0.9}};
  return ConceptSpace({"z*", "other"}, std::move(c), {{"x", {1.0, 1.0}}});
}

double majority_limit(const std::vector<double>& dist, std::size_t k, std::size_t trials, std::uint64_t seed) {
  if (k < 1 || trials < 1) throw InvalidArgument("majority_limit: need k >= 1 and trials >= 1");
  if (!is_distribution(dist, 1e-9)) throw InvalidArgument("majority_limit: answer_dist is not a distribution");
  const std::size_t mode = static_cast<std::size_t>(std::max_element(dist.begin(), dist.end()) - dist.begin());
  std::size_t wins = 0;
  std::vector<std::size_t> counts(dist.size());
  for (std::size_t trial = 0; trial < trials; ++trial) {
    Rng rng(derive_seed(seed, trial));
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < k; ++i) ++counts[static_cast<std::size_t>(sample_token(dist, rng))];
    const std::size_t winner = static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
    if (winner == mode) ++wins;
  }
  return static_cast<double>(wins) / static_cast<double>(trials);
}

std::string sim_csv(const ConceptSpace& space, const SimResult& result) {
  std::ostringstream out;
  out.precision(17);
  out << "round,answer,probability\n";
  for (const auto& r : result.rounds) {
    for (std::size_t z = 0; z < space.answers().size(); ++z) {
      double p = 0.0;
      for (const auto& d : r.agent_dists) p += d[z];
      out << r.round << "," << space.answers()[z] << "," << p / static_cast<double>(r.agent_dists.size()) << "\n";
    }
  }
  return out.str();
}

}  // namespace molace
