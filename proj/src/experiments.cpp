#include "molace/experiments.hpp"

#include <sstream>

#include "molace/mixture.hpp"

namespace molace {

nlohmann::json ToyAblationResult::to_json() const {
  return {{"alphas", alphas},
          {"per_alpha", coverage.per_alpha},
          {"coverage", coverage.coverage},
          {"counts", coverage.counts},
          {"unsteered", unsteered},
          {"molace", molace},
          {"expected_per_alpha", expected_per_alpha},
          {"mean_alignment", mean_alignment}};
}

std::string ToyAblationResult::to_csv() const {
  std::ostringstream out;
  out.precision(10);
  out << "series,alpha,value\n";
  for (std::size_t k = 0; k < alphas.size(); ++k) out << "accuracy," << alphas[k] << "," << coverage.per_alpha[k] << "\n";
  for (std::size_t k = 0; k < alphas.size(); ++k) out << "expected," << alphas[k] << "," << expected_per_alpha[k] << "\n";
  for (std::size_t c = 0; c < coverage.counts.size(); ++c) out << "correct_count," << c << "," << coverage.counts[c] << "\n";
  out << "coverage,," << coverage.coverage << "\n";
  out << "unsteered,," << unsteered << "\n";
  out << "molace,," << molace << "\n";
  return out.str();
}

ToyAblationResult run_toy_ablation(const ToyModel& toy, const SteeringVector& v, const ToyAblationConfig& config) {
  if (config.prompts == 0) throw InvalidArgument("run_toy_ablation: no prompts");
  const auto examples =
      sample_examples(toy.corpus, config.prompts, Split::held_out, config.stance, derive_seed(config.seed, fnv1a("prompts")));
  ToyAblationResult r;
  r.alphas = config.grid.values();
  std::vector<std::vector<bool>> correct(examples.size(), std::vector<bool>(r.alphas.size(), false));
  std::size_t base_hits = 0, molace_hits = 0;
  double s_sum = 0.0;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& ex = examples[i];
    const PromptTokens prompt = toy.corpus.prompt(ex);
    const TokenId truth = toy.corpus.true_answer(ex.topic);
    auto hit = [&](const std::vector<TokenId>& gen) {
      const auto a = extract_toy_answer(toy.corpus, gen);
      return a && *a == truth;
    };
    GenerationParams p = config.params;
    for (std::size_t k = 0; k < r.alphas.size(); ++k) {
      p.seed = derive_seed(config.seed, i, fnv1a("alpha"), k);
      const auto gen = r.alphas[k] == 0.0 ? generate(toy.model, prompt, p) : generate(toy.model, prompt, p, v.at(r.alphas[k]));
      correct[i][k] = hit(gen);
    }
    p.seed = derive_seed(config.seed, i);
    base_hits += hit(generate(toy.model, prompt, p));
    const MolaceResult m = generate_molace(toy.model, prompt, v, config.grid, config.gate, p);
    molace_hits += hit(m.tokens);
    s_sum += m.gate.s;
  }
  r.coverage = alpha_coverage(correct);
  const double n = static_cast<double>(examples.size());
  r.unsteered = static_cast<double>(base_hits) / n;
  r.molace = static_cast<double>(molace_hits) / n;
  r.mean_alignment = s_sum / n;
  for (double a : r.alphas) {
    const InterventionSpec spec = v.at(a);
    r.expected_per_alpha.push_back(expected_accuracy(toy.model, toy.corpus, examples, a == 0.0 ? nullptr : &spec));
  }
  return r;
}

std::vector<LabeledPrompt> toy_probe_prompts(const ToyCorpus& corpus, std::size_t per_class, std::uint64_t seed) {
  std::vector<LabeledPrompt> out;
  const Stance order[3] = {Stance::neutral, Stance::support, Stance::challenge};
  for (int label = 0; label < 3; ++label)
    for (const auto& ex : sample_examples(corpus, per_class, Split::any, order[label], derive_seed(seed, label)))
      out.push_back({corpus.prompt(ex), label});
  return out;
}

ProbeReport toy_probe_sweep(const SteerableModel& model, const ToyCorpus& corpus, std::size_t per_class,
                            std::uint64_t seed) {
  return layer_sweep(model, toy_probe_prompts(corpus, per_class, seed), "stance", seed);
}

}  // namespace molace
