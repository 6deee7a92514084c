#include "molace/toy_corpus.hpp"

#include <cmath>

#include "molace/sampling.hpp"

namespace molace {

std::string_view stance_marker(Stance s) {
  switch (s) {
    case Stance::support: return "SUPPORT";
    case Stance::challenge: return "CHALLENGE";
    case Stance::neutral: return "NEUTRAL";
  }
  return "NEUTRAL";
}

nlohmann::json ToyCorpusConfig::to_json() const {
  return {{"topics", topics},
          {"fillers", fillers},
          {"filler_slots", filler_slots},
          {"p_bias", p_bias},
          {"p_neutral_truth", p_neutral_truth},
          {"seed", seed},
          {"held_out_modulus", held_out_modulus},
          {"draft", draft},
          {"filler_stance", filler_stance},
          {"evidence_slots", evidence_slots}};
}

ToyCorpusConfig ToyCorpusConfig::from_json(const nlohmann::json& j) {
  ToyCorpusConfig c;
  c.topics = j.value("topics", c.topics);
  c.fillers = j.value("fillers", c.fillers);
  c.filler_slots = j.value("filler_slots", c.filler_slots);
  c.p_bias = j.value("p_bias", c.p_bias);
  c.p_neutral_truth = j.value("p_neutral_truth", c.p_neutral_truth);
  c.seed = j.value("seed", c.seed);
  c.held_out_modulus = j.value("held_out_modulus", c.held_out_modulus);
  c.draft = j.value("draft", c.draft);
  c.filler_stance = j.value("filler_stance", c.filler_stance);
  c.evidence_slots = j.value("evidence_slots", c.evidence_slots);
  return c;
}

namespace {

Vocab toy_vocab(const ToyCorpusConfig& c) {
  std::vector<std::string> t{"<eos>", "Q", "?", "A", "SUPPORT", "CHALLENGE", "NEUTRAL"};
  for (std::size_t i = 0; i < c.topics; ++i) t.push_back("t" + std::to_string(i));
  for (std::size_t i = 0; i < c.fillers; ++i) t.push_back("f" + std::to_string(i));
  for (std::size_t i = 0; i < c.topics; ++i) {
    t.push_back("a" + std::to_string(i));
    t.push_back("b" + std::to_string(i));
  }
  return Vocab(std::move(t));
}

}  // namespace

ToyCorpus::ToyCorpus(ToyCorpusConfig config) : config_(config), vocab_(toy_vocab(config)) {
  if (config_.topics < 2 || config_.fillers < 2) throw InvalidArgument("ToyCorpus: need >= 2 topics and fillers");
  if (config_.filler_slots < 1) throw InvalidArgument("ToyCorpus: need >= 1 filler slot");
  for (double p : {config_.p_bias, config_.p_neutral_truth, config_.filler_stance})
    if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("ToyCorpus: probabilities must lie in [0, 1]");
  if (config_.held_out_modulus < 2) throw InvalidArgument("ToyCorpus: held_out_modulus must be >= 2");
  q_ = vocab_.id_of("Q");
  qmark_ = vocab_.id_of("?");
  a_ = vocab_.id_of("A");
  eos_ = vocab_.id_of("<eos>");
  markers_ = {vocab_.id_of("SUPPORT"), vocab_.id_of("CHALLENGE"), vocab_.id_of("NEUTRAL")};
  for (std::size_t i = 0; i < config_.topics; ++i) topic_ids_.push_back(vocab_.id_of("t" + std::to_string(i)));
  for (std::size_t i = 0; i < config_.fillers; ++i) filler_ids_.push_back(vocab_.id_of("f" + std::to_string(i)));

  // Which of a<i>/b<i> is true: a balanced, seeded assignment.
  std::vector<std::size_t> order(config_.topics);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(config_.seed, 0x7275746873ULL));
  shuffle_in_place(order, rng);
  std::vector<bool> a_true(config_.topics, false);
  for (std::size_t i = 0; i < config_.topics / 2; ++i) a_true[order[i]] = true;
  for (std::size_t i = 0; i < config_.topics; ++i) {
    const TokenId a = vocab_.id_of("a" + std::to_string(i)), b = vocab_.id_of("b" + std::to_string(i));
    true_ids_.push_back(a_true[i] ? a : b);
    myth_ids_.push_back(a_true[i] ? b : a);
  }
}

TokenId ToyCorpus::true_answer(std::size_t topic) const {
  if (topic >= config_.topics) throw InvalidArgument("ToyCorpus: topic out of range");
  return true_ids_[topic];
}

TokenId ToyCorpus::myth_answer(std::size_t topic) const {
  if (topic >= config_.topics) throw InvalidArgument("ToyCorpus: topic out of range");
  return myth_ids_[topic];
}

bool ToyCorpus::is_answer_token(TokenId t) const {
  const TokenId first = vocab_.id_of("a0");
  return t >= first && t < first + static_cast<TokenId>(2 * config_.topics);
}

bool ToyCorpus::held_out(const std::vector<std::size_t>& fillers) const {
  std::uint64_t key = 0;
  for (std::size_t f : fillers) key = key * config_.fillers + f;
  return mix64(key ^ derive_seed(config_.seed, 0x686f6c64ULL)) % config_.held_out_modulus == 0;
}

std::size_t ToyCorpus::draw_filler(Rng& rng, Stance stance) const {
  if (stance != Stance::neutral && config_.filler_stance > 0.0 && uniform01(rng) < config_.filler_stance) {
    const std::size_t half = config_.fillers / 2;
    return stance == Stance::support ? uniform_index(rng, half) : half + uniform_index(rng, config_.fillers - half);
  }
  return uniform_index(rng, config_.fillers);
}

ToyExample ToyCorpus::sample_example(Rng& rng, Split split, std::optional<Stance> stance,
                                     std::optional<std::size_t> topic) const {
  ToyExample ex;
  if (topic && *topic >= config_.topics) throw InvalidArgument("ToyCorpus: topic out of range");
  ex.topic = topic ? *topic : uniform_index(rng, config_.topics);
  ex.stance = stance ? *stance : static_cast<Stance>(uniform_index(rng, 3));
  for (;;) {
    ex.fillers.assign(config_.filler_slots, 0);
    for (auto& f : ex.fillers) f = draw_filler(rng, ex.stance);
    if (split == Split::any) break;
    if (held_out(ex.fillers) == (split == Split::held_out)) break;
  }
  ex.evidence.clear();
  for (std::size_t i = 0; i < config_.evidence_slots; ++i) ex.evidence.push_back(draw_answer(rng, ex));
  return ex;
}

PromptTokens ToyCorpus::prompt(const ToyExample& ex) const {
  std::vector<TokenId> ids{q_, topic_ids_.at(ex.topic), markers_[static_cast<std::size_t>(ex.stance)]};
  for (std::size_t f : ex.fillers) ids.push_back(filler_ids_.at(f));
  for (TokenId e : ex.evidence) ids.push_back(e);
  ids.push_back(qmark_);
  return PromptTokens::whole(std::move(ids));
}

double ToyCorpus::truth_probability(Stance s) const {
  switch (s) {
    case Stance::support: return 1.0 - config_.p_bias;
    case Stance::challenge: return config_.p_bias;
    case Stance::neutral: return config_.p_neutral_truth;
  }
  return 0.5;
}

TokenId ToyCorpus::draw_answer(Rng& rng, const ToyExample& ex) const {
  return uniform01(rng) < truth_probability(ex.stance) ? true_answer(ex.topic) : myth_answer(ex.topic);
}

std::vector<TokenId> ToyCorpus::sample_sequence(const ToyExample& ex, Rng& rng) const {
  std::vector<TokenId> seq = prompt(ex).ids;
  if (config_.draft) seq.push_back(draw_answer(rng, ex));
  seq.push_back(a_);
  seq.push_back(draw_answer(rng, ex));
  seq.push_back(eos_);
  return seq;
}

std::vector<TokenId> ToyCorpus::sample_training_sequence(Rng& rng) const {
  return sample_sequence(sample_example(rng, Split::train), rng);
}

std::pair<PromptTokens, PromptTokens> ToyCorpus::contrast_pair(Rng& rng, Split split) const {
  const ToyExample plus = sample_example(rng, split, Stance::support);
  ToyExample minus;
  do {
    minus = sample_example(rng, split, Stance::challenge);
  } while (minus.topic != plus.topic);
  return {prompt(plus), prompt(minus)};
}

nlohmann::json ToyTrainReport::to_json() const {
  return {{"final_loss", final_loss},
          {"support_accuracy", support_accuracy},
          {"challenge_accuracy", challenge_accuracy},
          {"separation", separation},
          {"separated", separated},
          {"steps", steps}};
}

std::vector<ToyExample> sample_examples(const ToyCorpus& corpus, std::size_t count, Split split,
                                        std::optional<Stance> stance, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<ToyExample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(corpus.sample_example(rng, split, stance));
  return out;
}

double expected_truth(const SteerableModel& model, const ToyCorpus& corpus, const ToyExample& ex,
                      const InterventionSpec* spec) {
  auto state = model.begin(corpus.prompt(ex));
  const TokenId truth = corpus.true_answer(ex.topic);
  if (!corpus.config().draft) {
    state->push(corpus.answer_marker());
    return softmax(model.step_logits(*state, spec))[static_cast<std::size_t>(truth)];
  }
  const Distribution draft = softmax(model.step_logits(*state, spec));
  double total = 0.0, mass = 0.0;
  for (const TokenId d : {truth, corpus.myth_answer(ex.topic)}) {
    const double w = draft[static_cast<std::size_t>(d)];
    auto branch = state->clone();
    branch->push(d);
    branch->push(corpus.answer_marker());
    total += w * softmax(model.step_logits(*branch, spec))[static_cast<std::size_t>(truth)];
    mass += w;
  }
  if (!(mass > 0.0)) throw ComputationError("expected_truth: draft mass vanished");
  return total / mass;
}

double expected_accuracy(const SteerableModel& model, const ToyCorpus& corpus, const std::vector<ToyExample>& examples,
                         const InterventionSpec* spec) {
  if (examples.empty()) throw InvalidArgument("expected_accuracy: no examples");
  double total = 0.0;
  for (const auto& ex : examples) total += expected_truth(model, corpus, ex, spec);
  return total / static_cast<double>(examples.size());
}

std::optional<TokenId> extract_toy_answer(const ToyCorpus& corpus, std::span<const TokenId> generated) {
  std::optional<TokenId> last;
  for (std::size_t i = 0; i < generated.size(); ++i) {
    if (generated[i] == corpus.answer_marker() && i + 1 < generated.size() && corpus.is_answer_token(generated[i + 1]))
      return generated[i + 1];
    if (corpus.is_answer_token(generated[i])) last = generated[i];
  }
  return last;
}

ToyModel train_toy(const ToyTrainConfig& config) {
  ToyCorpus corpus(config.corpus);
  TransformerConfig arch = config.arch;
  arch.vocab = corpus.vocab().size();
  arch.validate();
  if (config.steps == 0 || config.batch == 0) throw InvalidArgument("train_toy: steps and batch must be positive");

  TransformerWeights weights = TransformerWeights::random(arch, derive_seed(config.seed, 0x696e6974ULL));
  TransformerWeights grad = TransformerWeights::zeros(arch);
  AdamOptimizer adam(arch, config.adam);
  Rng data_rng(derive_seed(config.seed, 0x64617461ULL));

  ToyTrainReport report;
  std::vector<std::vector<TokenId>> batch(config.batch);
  double smoothed = 0.0;
  for (std::size_t step = 0; step < config.steps; ++step) {
    for (auto& seq : batch) seq = corpus.sample_training_sequence(data_rng);
    const double loss = loss_and_gradient(arch, weights, batch, grad);
    adam.step(weights, grad);
    smoothed = step == 0 ? loss : 0.98 * smoothed + 0.02 * loss;
    if (config.on_progress && (step + 1) % 100 == 0) config.on_progress(step + 1, smoothed);
  }
  report.final_loss = smoothed;
  report.steps = config.steps;

  TinyTransformerLM model(arch, corpus.vocab(), std::move(weights));
  const std::size_t half = std::max<std::size_t>(1, config.eval_prompts / 2);
  const auto sup = sample_examples(corpus, half, Split::held_out, Stance::support, derive_seed(config.seed, 0x73ULL));
  const auto cha = sample_examples(corpus, half, Split::held_out, Stance::challenge, derive_seed(config.seed, 0x63ULL));
  report.support_accuracy = expected_accuracy(model, corpus, sup);
  report.challenge_accuracy = expected_accuracy(model, corpus, cha);
  report.separation = std::abs(report.challenge_accuracy - report.support_accuracy);
  report.separated = report.separation >= config.min_separation;
  if (config.require_separation && !report.separated)
    throw TrainingError("train_toy: marker separation " + std::to_string(report.separation) + " below required " +
                            std::to_string(config.min_separation),
                        report);
  return ToyModel{std::move(model), std::move(corpus), report};
}

}  // namespace molace
