#include "molace/model.hpp"

#include <cmath>

#include "molace/sampling.hpp"

namespace molace {

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i].empty()) throw InvalidArgument("Vocab: empty token string");
    auto [it, inserted] = ids_.emplace(tokens_[i], static_cast<TokenId>(i));
    if (!inserted) throw InvalidArgument("Vocab: duplicate token '" + tokens_[i] + "'");
  }
}

TokenId Vocab::id_of(std::string_view token) const {
  auto id = find(token);
  if (!id) throw InvalidArgument("Vocab: unknown token '" + std::string(token) + "'");
  return *id;
}

std::optional<TokenId> Vocab::find(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

const std::string& Vocab::token_of(TokenId id) const {
  if (!valid(id)) throw InvalidArgument("Vocab: token id out of range: " + std::to_string(id));
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<TokenId> Vocab::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  for (const auto& word : split_whitespace(text)) ids.push_back(id_of(word));
  return ids;
}

std::string Vocab::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) {
    if (!out.empty()) out += ' ';
    out += token_of(id);
  }
  return out;
}

PromptTokens PromptTokens::whole(std::vector<TokenId> ids) {
  if (ids.empty()) throw InvalidArgument("PromptTokens: empty prompt");
  PromptTokens p;
  p.prompt_end = ids.size() - 1;
  p.ids = std::move(ids);
  return p;
}

void PromptTokens::validate(const Vocab& vocab) const {
  if (ids.empty() || prompt_end >= ids.size()) throw InvalidArgument("PromptTokens: prompt_end out of range");
  for (TokenId id : ids)
    if (!vocab.valid(id)) throw InvalidArgument("PromptTokens: invalid token id " + std::to_string(id));
}

void GenerationParams::validate() const {
  if (!(temperature > 0.0)) throw InvalidArgument("GenerationParams: temperature must be > 0");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw InvalidArgument("GenerationParams: top_p must lie in (0, 1]");
  if (max_new_tokens == 0) throw InvalidArgument("GenerationParams: max_new_tokens must be positive");
}

Capture forward_with_capture(const SteerableModel& model, const PromptTokens& prompt,
                             std::span<const std::size_t> layers) {
  for (std::size_t l : layers)
    if (l >= model.layer_count()) throw InvalidArgument("forward_with_capture: invalid layer index " + std::to_string(l));
  PromptTrace tr = model.trace(prompt);
  Capture cap;
  for (std::size_t l : layers) cap.activations[l] = tr.layers[l].row(static_cast<Eigen::Index>(prompt.prompt_end)).transpose();
  cap.logits = std::move(tr.logits);
  return cap;
}

void validate_intervention(const SteerableModel& model, const InterventionSpec& spec) {
  if (spec.layer >= model.layer_count())
    throw InvalidArgument("intervention: layer " + std::to_string(spec.layer) + " out of range");
  if (static_cast<std::size_t>(spec.direction.size()) != model.hidden_dim())
    throw InvalidArgument("intervention: direction dimension " + std::to_string(spec.direction.size()) +
                          " does not match hidden_dim " + std::to_string(model.hidden_dim()));
  if (!std::isfinite(spec.alpha) || !spec.direction.allFinite())
    throw InvalidArgument("intervention: non-finite alpha or direction");
}

Distribution forward_step(const SteerableModel& model, DecodeState& state,
                          const std::optional<InterventionSpec>& spec, double temperature) {
  if (spec) validate_intervention(model, *spec);
  const Eigen::VectorXd logits = model.step_logits(state, spec ? &*spec : nullptr);
  return softmax(logits, temperature);
}

std::vector<TokenId> generate(const SteerableModel& model, const PromptTokens& prompt,
                              const GenerationParams& params, const std::optional<InterventionSpec>& spec) {
  params.validate();
  prompt.validate(model.vocab());
  if (spec) validate_intervention(model, *spec);
  auto state = model.begin(prompt);
  Rng rng(params.seed);
  const auto eos = model.eos();
  std::vector<TokenId> out;
  for (std::size_t i = 0; i < params.max_new_tokens; ++i) {
    if (i > 0 && state->tokens().size() > model.context_length()) break;
    const Distribution probs = softmax(model.step_logits(*state, spec ? &*spec : nullptr), params.temperature);
    const TokenId tok = sample_nucleus(probs, params.top_p, rng);
    out.push_back(tok);
    state->push(tok);
    if (eos && tok == *eos) break;
  }
  return out;
}

}  // namespace molace
