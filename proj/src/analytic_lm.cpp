#include "molace/analytic_lm.hpp"

#include <cmath>
#include <random>

namespace molace {

namespace {

Vocab analytic_vocab(std::size_t fillers) {
  std::vector<std::string> tokens{"<eos>", "YES", "NO", "SUPPORT", "CHALLENGE", "NEUTRAL"};
  for (std::size_t i = 0; i < fillers; ++i) tokens.push_back("w" + std::to_string(i));
  return Vocab(std::move(tokens));
}

class AnalyticState final : public DecodeState {
 public:
  explicit AnalyticState(const PromptTokens& p) : DecodeState(p) {}
  std::unique_ptr<DecodeState> clone() const override { return std::make_unique<AnalyticState>(*this); }
};

}  // namespace

AnalyticConceptLM::AnalyticConceptLM(const Config& config)
    : AnalyticConceptLM(config, Eigen::VectorXd(), Eigen::VectorXd()) {}

AnalyticConceptLM::AnalyticConceptLM(const Config& config, Eigen::VectorXd u, Eigen::VectorXd b)
    : config_(config), vocab_(analytic_vocab(config.filler_tokens)) {
  if (config_.dim < 2) throw InvalidArgument("AnalyticConceptLM: dim must be >= 2");
  if (!(config_.gain > 0.0)) throw InvalidArgument("AnalyticConceptLM: gain must be positive");
  const auto d = static_cast<Eigen::Index>(config_.dim);
  if (u.size() == 0) {
    Rng rng(config_.seed);
    std::normal_distribution<double> n01(0.0, 1.0);
    u = Eigen::VectorXd(d);
    b = Eigen::VectorXd(d);
    for (Eigen::Index i = 0; i < d; ++i) u[i] = n01(rng);
    for (Eigen::Index i = 0; i < d; ++i) b[i] = n01(rng);
  }
  if (u.size() != d || b.size() != d) throw InvalidArgument("AnalyticConceptLM: u/b dimension mismatch");
  if (!(u.norm() > 0.0)) throw InvalidArgument("AnalyticConceptLM: u must be nonzero");
  u_ = u.normalized();
  b_ = b - b.dot(u_) * u_;
  yes_ = vocab_.id_of("YES");
  no_ = vocab_.id_of("NO");
  support_ = vocab_.id_of("SUPPORT");
  challenge_ = vocab_.id_of("CHALLENGE");
  neutral_ = vocab_.id_of("NEUTRAL");
}

std::string AnalyticConceptLM::fingerprint() const {
  std::string blob = "analytic:" + std::to_string(config_.dim) + ":" + std::to_string(config_.gain) + ":" +
                     std::to_string(config_.filler_logit);
  for (Eigen::Index i = 0; i < u_.size(); ++i) blob += ":" + std::to_string(u_[i]) + "," + std::to_string(b_[i]);
  return hex64(fnv1a(blob));
}

int AnalyticConceptLM::stance(std::span<const TokenId> ids) const {
  for (TokenId id : ids) {
    if (id == support_) return 1;
    if (id == challenge_) return -1;
    if (id == neutral_) return 0;
  }
  return 0;
}

Eigen::VectorXd AnalyticConceptLM::logits_from_hidden(const Eigen::VectorXd& h) const {
  Eigen::VectorXd logits = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(vocab_.size()), -config_.filler_logit);
  const double proj = h.dot(u_);
  logits[yes_] = config_.gain * proj;
  logits[no_] = -config_.gain * proj;
  return logits;
}

PromptTrace AnalyticConceptLM::trace(const PromptTokens& prompt) const {
  prompt.validate(vocab_);
  const std::span<const TokenId> ids(prompt.ids.data(), prompt.prompt_end + 1);
  const Eigen::VectorXd h = hidden(stance(ids));
  PromptTrace tr;
  Eigen::MatrixXd acts(static_cast<Eigen::Index>(prompt.prompt_end + 1), static_cast<Eigen::Index>(config_.dim));
  acts.rowwise() = h.transpose();
  tr.layers.push_back(std::move(acts));
  tr.logits = logits_from_hidden(h);
  return tr;
}

std::unique_ptr<DecodeState> AnalyticConceptLM::begin(const PromptTokens& prompt) const {
  prompt.validate(vocab_);
  return std::make_unique<AnalyticState>(prompt);
}

Eigen::VectorXd AnalyticConceptLM::step_logits(DecodeState& state, const InterventionSpec* spec) const {
  const auto& toks = state.tokens();
  const std::span<const TokenId> prompt(toks.data(), state.prompt_end() + 1);
  Eigen::VectorXd h = hidden(stance(prompt));
  // The position being produced is always past prompt_end.
  if (spec) {
    if (spec->layer != 0 || static_cast<std::size_t>(spec->direction.size()) != config_.dim)
      throw InvalidArgument("AnalyticConceptLM: intervention layer/dimension mismatch");
    h += spec->alpha * spec->direction;
  }
  return logits_from_hidden(h);
}

PromptTokens AnalyticConceptLM::make_prompt(std::string_view marker, std::size_t fillers) const {
  std::vector<TokenId> ids;
  for (std::size_t i = 0; i < fillers; ++i)
    ids.push_back(vocab_.id_of("w" + std::to_string(i % config_.filler_tokens)));
  ids.push_back(vocab_.id_of(marker));
  return PromptTokens::whole(std::move(ids));
}

}  // namespace molace
