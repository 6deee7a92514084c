#include "molace/mixture.hpp"

#include <cmath>

#include "molace/sampling.hpp"

namespace molace {

ExpertSet::ExpertSet(const SteerableModel& model, const PromptTokens& prompt, const SteeringVector& v,
                     std::vector<double> alphas)
    : model_(&model), alphas_(std::move(alphas)) {
  if (alphas_.empty()) throw InvalidArgument("ExpertSet: no experts");
  prompt.validate(model.vocab());
  for (double a : alphas_) {
    InterventionSpec spec = v.at(a);
    if (a != 0.0) validate_intervention(model, spec);
    specs_.push_back(std::move(spec));
    states_.push_back(model.begin(prompt));
  }
}

std::map<double, Distribution> ExpertSet::step(double temperature) {
  std::map<double, Distribution> out;
  for (std::size_t i = 0; i < alphas_.size(); ++i) {
    const InterventionSpec* spec = alphas_[i] == 0.0 ? nullptr : &specs_[i];
    out.emplace(alphas_[i], softmax(model_->step_logits(*states_[i], spec), temperature));
    ++forward_steps_;
  }
  return out;
}

void ExpertSet::push(TokenId token) {
  for (auto& s : states_) s->push(token);
}

std::map<double, Distribution> expert_step(ExpertSet& experts, double temperature) {
  return experts.step(temperature);
}

Distribution mix(const std::map<double, Distribution>& dists, const GateWeights& w) {
  if (dists.empty()) throw InvalidArgument("mix: no expert distributions");
  if (w.alphas.size() != w.weights.size()) throw InvalidArgument("mix: malformed gate");
  const std::size_t n = dists.begin()->second.size();
  for (const auto& [a, p] : dists) {
    if (p.size() != n) throw InvalidArgument("mix: distributions differ in size");
    w.weight_of(a);  // throws when alpha is not on the gate
  }
  Distribution out(n, 0.0);
  for (std::size_t i = 0; i < w.alphas.size(); ++i) {
    if (w.weights[i] == 0.0) continue;
    const auto it = dists.find(w.alphas[i]);
    if (it == dists.end()) throw InvalidArgument("mix: gate weight on an alpha with no expert distribution");
    for (std::size_t t = 0; t < n; ++t) out[t] += w.weights[i] * it->second[t];
  }
  return out;
}

nlohmann::json MixtureStep::to_json(const Vocab& vocab) const {
  nlohmann::json experts = nlohmann::json::array();
  for (std::size_t i = 0; i < alphas.size(); ++i)
    experts.push_back({{"alpha", alphas[i]},
                       {"weight", weights[i]},
                       {"top_token", std::string(vocab.token_of(expert_top_token[i]))},
                       {"top_prob", expert_top_prob[i]}});
  return {{"step", step},
          {"experts", experts},
          {"entropy", entropy},
          {"token", std::string(vocab.token_of(token))},
          {"token_id", token},
          {"token_prob", token_prob}};
}

std::uint64_t gate_seed(std::uint64_t generation_seed) { return derive_seed(generation_seed, 0x67617465ULL); }

MolaceResult generate_with_gate(const SteerableModel& model, const PromptTokens& prompt, const SteeringVector& v,
                                const GateWeights& gate, const GenerationParams& params,
                                const MixtureStepSink& on_step) {
  params.validate();
  if (!gate.valid()) throw InvalidArgument("generate_molace: gate weights are not a distribution");
  MolaceResult result;
  result.gate = gate;
  // Experts with zero weight are skipped; with a full gate this is every grid point.
  ExpertSet experts(model, prompt, v, gate.support());
  Rng rng(params.seed);
  const auto eos = model.eos();
  for (std::size_t step = 0; step < params.max_new_tokens; ++step) {
    if (step > 0 && experts.tokens().size() > model.context_length()) break;
    const auto dists = experts.step(params.temperature);
    const Distribution mixed = mix(dists, gate);
    const TokenId tok = sample_nucleus(mixed, params.top_p, rng);

    MixtureStep rec;
    rec.step = step;
    for (const auto& [a, p] : dists) {
      const auto top = std::max_element(p.begin(), p.end());
      rec.alphas.push_back(a);
      rec.weights.push_back(gate.weight_of(a));
      rec.expert_top_token.push_back(static_cast<TokenId>(top - p.begin()));
      rec.expert_top_prob.push_back(*top);
    }
    for (double p : mixed)
      if (p > 0.0) rec.entropy -= p * std::log(p);
    rec.token = tok;
    rec.token_prob = mixed[static_cast<std::size_t>(tok)];
    if (on_step) on_step(rec);
    result.trace.push_back(std::move(rec));

    result.tokens.push_back(tok);
    experts.push(tok);
    if (eos && tok == *eos) break;
  }
  result.forward_steps = experts.forward_steps();
  return result;
}

MolaceResult generate_molace(const SteerableModel& model, const PromptTokens& prompt, const SteeringVector& v,
                             const AlphaGrid& grid, const GateConfig& gate_config, const GenerationParams& params,
                             const MixtureStepSink& on_step) {
  const GateWeights gate = compute_gate(model, prompt, v, grid, gate_config, gate_seed(params.seed));
  return generate_with_gate(model, prompt, v, gate, params, on_step);
}

}  // namespace molace
