// Acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance <toy checkpoint> <work dir>
//
// The work dir also holds manifest-train-toy.json from the training fixture,
// which supplies the training time for criterion 6.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <limits>
#include <sstream>

#include "cli.hpp"
#include "molace/analytic_lm.hpp"
#include "molace/checkpoint.hpp"
#include "molace/experiments.hpp"
#include "molace/latent_sim.hpp"
#include "molace/pipeline.hpp"
#include "molace/sampling.hpp"

using namespace molace;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

class Timer {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count(); }

 private:
  std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

json read_json(const fs::path& p) {
  std::ifstream f(p);
  if (!f) throw std::runtime_error("missing " + p.string());
  return json::parse(f);
}

std::vector<json> read_rows(const fs::path& p) { return read_jsonl(p); }

int run_tool(std::vector<std::string> args, std::string* err_text = nullptr) {
  args.insert(args.begin(), "molace");
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  if (err_text) *err_text = err.str();
  return code;
}

double tv(const Distribution& a, const Distribution& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return 0.5 * s;
}

// ---------------------------------------------------------------- criteria

// Per-step distributions of the one-hot (alpha = 0) mixture against the base model
// along a shared sampled trajectory.
double zero_gate_gap(const SteerableModel& model, const std::vector<PromptTokens>& prompts, const SteeringVector& v,
                     std::size_t steps) {
  const AlphaGrid grid;
  const GateWeights hot = one_hot_gate(grid, 0.0);
  double worst = 0.0;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    Rng rng(derive_seed(99, i));
    ExpertSet experts(model, prompts[i], v, grid.values());
    auto base = model.begin(prompts[i]);
    for (std::size_t t = 0; t < steps && base->tokens().size() < model.context_length(); ++t) {
      const Distribution mixed = mix(experts.step(), hot);
      const Distribution plain = forward_step(model, *base, std::nullopt);
      worst = std::max(worst, tv(mixed, plain));
      const TokenId tok = sample_token(plain, rng);
      experts.push(tok);
      base->push(tok);
    }
    GenerationParams params{0.8, 0.9, steps, derive_seed(5, i)};
    if (generate_with_gate(model, prompts[i], v, hot, params).tokens != generate(model, prompts[i], params))
      worst = std::numeric_limits<double>::infinity();
  }
  return worst;
}

Outcome criterion1(const ToyModel* toy) {
  AnalyticConceptLM lm;
  ContrastPairSet pairs;
  for (std::size_t i = 0; i < 5; ++i) pairs.pairs.emplace_back(lm.make_prompt("SUPPORT", 1 + i), lm.make_prompt("CHALLENGE", 1 + i));
  const SteeringVector va = extract_caa(lm, pairs);
  std::vector<PromptTokens> ap;
  Rng rng(1);
  const char* markers[] = {"SUPPORT", "CHALLENGE", "NEUTRAL"};
  for (std::size_t i = 0; i < 100; ++i) ap.push_back(lm.make_prompt(markers[uniform_index(rng, 3)], 1 + uniform_index(rng, 6)));
  const double gap_a = zero_gate_gap(lm, ap, va, 4);
  if (!toy) return {false, "analytic TV " + fmt(gap_a) + "; toy checkpoint unavailable"};

  ToyBackend backend(*toy);
  RunConfig rc;
  const SteeringVector vt = extract_steering(backend, rc);
  std::vector<PromptTokens> tp;
  for (const auto& ex : sample_examples(toy->corpus, 100, Split::any, std::nullopt, 3)) tp.push_back(toy->corpus.prompt(ex));
  const double gap_t = zero_gate_gap(toy->model, tp, vt, 4);
  const bool ok = gap_a <= 1e-9 && gap_t <= 1e-9;
  return {ok, "max TV analytic " + fmt(gap_a) + ", toy " + fmt(gap_t) + " over 100 prompts each"};
}

Outcome criterion2() {
  AnalyticConceptLM lm;
  ContrastPairSet pairs;
  for (std::size_t i = 0; i < 5; ++i) pairs.pairs.emplace_back(lm.make_prompt("SUPPORT", 1 + i % 3), lm.make_prompt("CHALLENGE", 1 + (i + 1) % 3));
  const SteeringVector v = extract_caa(lm, pairs);
  ContrastPairSet swapped = pairs;
  for (auto& p : swapped.pairs) std::swap(p.first, p.second);
  const SteeringVector w = extract_caa(lm, swapped);
  const double cos = v.direction.dot(lm.planted_direction());
  const bool negated = (w.direction + v.direction).cwiseAbs().maxCoeff() == 0.0;
  return {cos >= 0.999 && negated, "cosine " + fmt(cos, 12) + (negated ? ", swap negates exactly" : ", swap mismatch")};
}

Outcome criterion3() {
  Rng rng(3);
  const AlphaGrid grid;
  double worst = 0.0;
  bool nonneg = true;
  for (int i = 0; i < 1000; ++i) {
    GateConfig c;
    c.mode = uniform01(rng) < 0.5 ? GateMode::amplify : GateMode::neutralize;
    c.sigma = 0.01 + 4.0 * uniform01(rng);
    c.shrink_lambda = uniform01(rng);
    if (uniform01(rng) < 0.5) c.topk = 1 + uniform_index(rng, grid.size());
    c.sample_gate = uniform01(rng) < 0.5;
    const double s = 2.0 * uniform01(rng) - 1.0;
    const GateWeights w = finalize(rbf_weights(map_to_mu(s, grid, c), grid, c.sigma), c, rng());
    double sum = 0.0;
    for (double x : w.weights) {
      nonneg = nonneg && x >= 0.0;
      sum += x;
    }
    worst = std::max(worst, std::abs(sum - 1.0));
  }
  const GateWeights base = rbf_weights(0.0, grid, 1.0);
  const double pattern[] = {0.0044, 0.0540, 0.2420, 0.3991, 0.2420, 0.0540, 0.0044};
  double dev = 0.0;
  for (std::size_t i = 0; i < 7; ++i) dev = std::max(dev, std::abs(base.weights[i] - pattern[i]));
  return {nonneg && worst <= 1e-9 && dev <= 1e-4,
          "max |sum - 1| " + fmt(worst) + ", pattern deviation " + fmt(dev)};
}

Outcome criterion4(const fs::path& work) {
  Rng rng(4);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n_theta = 1 + uniform_index(rng, 5), n_ans = 1 + uniform_index(rng, 4), agents = 1 + uniform_index(rng, 3);
    std::vector<std::string> answers;
    for (std::size_t a = 0; a < n_ans; ++a) answers.push_back("z" + std::to_string(a));
    std::vector<Concept> cs(n_theta);
    std::vector<double> lik(n_theta);
    double ptot = 0.0;
    for (std::size_t t = 0; t < n_theta; ++t) {
      cs[t].label = "t" + std::to_string(t);
      cs[t].prior = 0.05 + uniform01(rng);
      ptot += cs[t].prior;
      double row = 0.0;
      for (std::size_t a = 0; a < n_ans; ++a) {
        cs[t].response.push_back(0.01 + uniform01(rng));
        row += cs[t].response.back();
      }
      for (double& r : cs[t].response) r /= row;
      lik[t] = 0.05 + uniform01(rng);
    }
    for (auto& c : cs) c.prior /= ptot;
    const ConceptSpace space(answers, cs, {{"x", lik}});
    std::vector<std::size_t> prev;
    for (std::size_t j = 0; j < agents; ++j) prev.push_back(uniform_index(rng, n_ans));
    // Brute force: joint over (theta, previous answers, next answer), then condition.
    std::vector<double> joint(n_ans, 0.0);
    for (std::size_t t = 0; t < n_theta; ++t)
      for (std::size_t z = 0; z < n_ans; ++z) {
        double term = cs[t].prior * lik[t] * cs[t].response[z];
        for (std::size_t zj : prev) term *= cs[t].response[zj];
        joint[z] += term;
      }
    double total = 0.0;
    for (double j : joint) total += j;
    const auto got = debate_update(space, "x", prev);
    for (std::size_t z = 0; z < n_ans; ++z) worst = std::max(worst, std::abs(got[z] - joint[z] / total));
  }

  const fs::path dir = work / "c4-echo";
  fs::remove_all(dir);
  if (run_tool({"sim", "--echo-demo", "--rounds", "7", "-o", dir.string()}) != 0) return {false, "sim --echo-demo failed"};
  std::ifstream f(dir / "sim.csv");
  std::string line;
  std::getline(f, line);
  std::vector<double> traj;
  while (std::getline(f, line)) {
    std::stringstream ss(line);
    std::string round, answer, prob;
    std::getline(ss, round, ',');
    std::getline(ss, answer, ',');
    std::getline(ss, prob, ',');
    if (answer == "z*") traj.push_back(std::stod(prob));
  }
  bool monotone = traj.size() >= 7;
  for (std::size_t t = 1; t + 1 < traj.size(); ++t) monotone = monotone && traj[t + 1] >= traj[t];
  const bool echo = traj.size() >= 2 && std::abs(traj[0] - 0.5) <= 1e-6 && std::abs(traj[1] - 0.8902) <= 1e-4 &&
                    std::abs(traj[1] - 0.73 / 0.82) <= 1e-6;
  return {worst <= 1e-12 && echo && monotone,
          "max oracle gap " + fmt(worst) + ", echo " + (traj.size() >= 2 ? fmt(traj[0]) + " -> " + fmt(traj[1], 6) : "?") +
              ", " + std::to_string(traj.size() >= 2 ? traj.size() - 2 : 0) + " further rounds" +
              (monotone ? " non-decreasing" : " NOT monotone")};
}

Outcome criterion5() {
  const std::size_t n = 501;
  double exact = 0.0;
  for (std::size_t k = 251; k <= n; ++k)
    exact += std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) + k * std::log(0.6) +
                      (n - k) * std::log(0.4));
  const double freq = majority_limit({0.6, 0.4}, n, 1000, 5);
  return {freq >= 0.99 && std::abs(freq - exact) <= 0.01, "frequency " + fmt(freq) + ", exact tail " + fmt(exact, 6)};
}

Outcome criterion6(const ToyModel* toy, double train_seconds) {
  if (!toy) return {false, "toy checkpoint unavailable"};
  Timer timer;
  ToyBackend backend(*toy);
  RunConfig rc;
  const SteeringVector v = extract_steering(backend, rc);
  ToyAblationConfig ac;
  const ToyAblationResult r = run_toy_ablation(*toy, v, ac);
  const double elapsed = train_seconds + timer.seconds();
  const auto& acc = r.coverage.per_alpha;
  const double best = *std::max_element(acc.begin(), acc.end());
  const double spread = best - *std::min_element(acc.begin(), acc.end());
  const bool a = spread >= 0.10;
  const bool b = r.coverage.coverage >= best && r.coverage.coverage - best >= 0.05;
  const bool c = r.molace - r.unsteered >= 0.10;
  std::string per;
  for (std::size_t i = 0; i < acc.size(); ++i) per += (i ? "/" : "") + fmt(acc[i], 3);
  return {a && b && c && elapsed < 600.0,
          "per-alpha " + per + " (spread " + fmt(spread, 3) + "), coverage " + fmt(r.coverage.coverage, 3) + " vs best " +
              fmt(best, 3) + ", molace " + fmt(r.molace, 3) + " vs unsteered " + fmt(r.unsteered, 3) + ", " +
              fmt(elapsed, 4) + " s with training"};
}

Outcome criterion7(const ToyModel* toy) {
  // Gradient check on a random softmax-linear problem.
  Rng rng(7);
  const Eigen::Index n = 20, d = 5, k = 3;
  Eigen::MatrixXd x(n, d), w(d, k);
  Eigen::RowVectorXd b(k);
  std::vector<int> y;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) x(i, j) = 2.0 * uniform01(rng) - 1.0;
    y.push_back(static_cast<int>(uniform_index(rng, k)));
  }
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < k; ++j) w(i, j) = uniform01(rng) - 0.5;
  for (Eigen::Index j = 0; j < k; ++j) b(j) = uniform01(rng) - 0.5;
  Eigen::MatrixXd gw;
  Eigen::RowVectorXd gb;
  probe_loss(x, y, w, b, 1e-3, &gw, &gb);
  double worst = 0.0;
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < k; ++j) {
      Eigen::MatrixXd wp = w, wm = w;
      wp(i, j) += h;
      wm(i, j) -= h;
      const double fd = (probe_loss(x, y, wp, b, 1e-3, nullptr, nullptr) - probe_loss(x, y, wm, b, 1e-3, nullptr, nullptr)) / (2 * h);
      worst = std::max(worst, std::abs(fd - gw(i, j)) / std::max(std::abs(fd), 1e-3));
    }
  if (!toy) return {false, "toy checkpoint unavailable; gradient rel. error " + fmt(worst)};
  const ProbeReport rep = toy_probe_sweep(toy->model, toy->corpus, 100, 7);
  double best_probe = 0.0, max_sil = -1.0;
  for (const auto& l : rep.layers) {
    best_probe = std::max(best_probe, l.probe_accuracy);
    max_sil = std::max(max_sil, l.silhouette);
  }
  return {best_probe >= 0.9 && max_sil <= 0.5 && worst <= 1e-5,
          "best probe accuracy " + fmt(best_probe, 3) + " (layer " + std::to_string(rep.best_probe_layer) +
              "), max silhouette " + fmt(max_sil, 3) + ", gradient rel. error " + fmt(worst)};
}

Outcome criterion8() {
  std::vector<std::string> failures;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  };
  // Round structure and vote.
  std::vector<std::vector<std::string>> script{{"A", "A", "B", "C"}, {"A", "A", "A", "B"}};
  std::vector<PromptKind> kinds;
  std::size_t calls = 0;
  FunctionGenerator gen("scripted", [&](const GenerationRequest& r) {
    kinds.push_back(r.kind);
    const std::size_t i = calls++;
    return "Final Answer: " + script[i / 4][i % 4];
  });
  const Transcript t = run_debate(gen, "q", DebateConfig{}, 1);
  expect(t.rounds.size() == 2 && t.rounds[0].size() == 4 && t.rounds[1].size() == 4, "round structure");
  expect(kinds.size() == 8 && kinds[0] == PromptKind::base && kinds[4] == PromptKind::peers, "prompt kinds");
  expect(t.final_answer == std::optional<std::string>("a"), "final vote");
  // Extraction grammar.
  expect(extract_final_answer("x\nFinal Answer: (B)") == std::optional<std::string>("b"), "golden (B)");
  expect(extract_final_answer_raw("x\nFinal Answer: (B)") == std::optional<std::string>("(B)"), "golden raw");
  expect(extract_final_answer("final ANSWER:  Paris.") == std::optional<std::string>("paris"), "golden Paris");
  expect(!extract_final_answer("I think the answer is B").has_value(), "golden absent");
  // Tie-break.
  expect(majority_vote({std::string("a"), std::string("b")}) == "a", "tie-break");
  expect(majority_vote({std::string("b"), std::string("a"), std::string("a"), std::string("b")}) == "b", "tie-break order");
  // Pruning formula.
  for (std::size_t cand : {4, 7, 10}) {
    const std::size_t want = std::min(cand, std::max<std::size_t>(4, cand / 2));
    expect(prune_keep_count(cand, 4, 0.5) == want, "keep count " + std::to_string(cand));
  }
  // Farthest-first step optimality.
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + uniform_index(rng, 7), k = 1 + uniform_index(rng, n);
    std::vector<Eigen::VectorXd> e;
    for (std::size_t i = 0; i < n; ++i) {
      Eigen::VectorXd v(3);
      v << uniform01(rng) - 0.2, uniform01(rng) - 0.2, uniform01(rng) - 0.2;
      e.push_back(v);
    }
    const auto sel = diversity_select(e, k, 0);
    auto min_dist = [&](std::size_t c, std::size_t upto) {
      double m = std::numeric_limits<double>::infinity();
      for (std::size_t s = 0; s < upto; ++s) m = std::min(m, 1.0 - cosine_similarity(e[c], e[sel[s]]));
      return m;
    };
    for (std::size_t step = 1; step < sel.size(); ++step) {
      double best = -1.0;
      for (std::size_t c = 0; c < n; ++c)
        if (std::find(sel.begin(), sel.begin() + static_cast<std::ptrdiff_t>(step), c) == sel.begin() + static_cast<std::ptrdiff_t>(step))
          best = std::max(best, min_dist(c, step));
      if (std::abs(min_dist(sel[step], step) - best) > 1e-12) {
        failures.push_back("farthest-first trial " + std::to_string(trial));
        break;
      }
    }
  }
  std::string detail = failures.empty() ? "all scripted checks hold" : "failed:";
  for (const auto& f : failures) detail += " " + f;
  return {failures.empty(), detail};
}

Outcome criterion9() {
  Eigen::MatrixXd pts(4, 2);
  pts << 0, 0, 0, 1, 10, 0, 10, 1;
  const double sil = silhouette(pts, {0, 0, 1, 1});
  const double ari = adjusted_rand_index({0, 0, 1, 1}, {0, 1, 0, 1});
  const double ari_same = adjusted_rand_index({0, 1, 1, 2}, {2, 0, 0, 1});
  Rng rng(9);
  Eigen::MatrixXd data(40, 6);
  for (Eigen::Index i = 0; i < 40; ++i)
    for (Eigen::Index j = 0; j < 6; ++j) data(i, j) = uniform01(rng) * (j + 1);
  const PcaResult p = pca_project(data);
  const double ortho = (p.components.transpose() * p.components - Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff();
  return {std::abs(sil - 0.9002) <= 1e-3 && std::abs(ari + 0.5) <= 1e-12 && std::abs(ari_same - 1.0) <= 1e-12 && ortho <= 1e-9,
          "silhouette " + fmt(sil, 6) + ", ARI " + fmt(ari, 6) + " / " + fmt(ari_same, 6) + ", PCA orthonormality " + fmt(ortho)};
}

bool tables_sum(const json& tables, double& worst) {
  for (const auto& [family, by_type] : tables.items())
    for (const auto& [type, table] : by_type.items()) {
      if (table.at("items").get<std::size_t>() == 0) continue;
      double sum = 0.0;
      for (const auto& [k, v] : table.items())
        if (k != "items") sum += v.get<double>();
      worst = std::max(worst, std::abs(sum - 100.0));
    }
  return worst <= 0.01;
}

Outcome criterion10(const fs::path& checkpoint, const fs::path& work, bool have_toy) {
  if (!have_toy) return {false, "toy checkpoint unavailable"};
  std::string summaries[2];
  double seconds = 0.0;
  for (int run = 0; run < 2; ++run) {
    const fs::path dir = work / "c10-pipeline";
    fs::remove_all(dir);
    const std::string o = dir.string(), ck = checkpoint.string();
    Timer timer;
    std::string err;
    if (run_tool({"extract", "--checkpoint", ck, "-o", o}, &err) != 0) return {false, "extract: " + err};
    const std::string steering = (dir / "steering.json").string();
    if (run_tool({"gen", "--checkpoint", ck, "--steering", steering, "--method", "molace", "-o", o}, &err) != 0)
      return {false, "gen: " + err};
    if (run_tool({"debate", "--checkpoint", ck, "--steering", steering, "--method", "molace", "--agents", "2", "--rounds",
                  "2", "-o", o},
                 &err) != 0)
      return {false, "debate: " + err};
    if (run_tool({"eval", "--input", (dir / "debate.jsonl").string(), "-o", o}, &err) != 0) return {false, "eval: " + err};
    if (run == 0) seconds = timer.seconds();
    json s = read_json(dir / "summary.json");
    s.erase("created_at");
    summaries[run] = s.dump();
  }
  const fs::path dir = work / "c10-pipeline";
  const json results = read_json(dir / "results.json");
  const json summary = read_json(dir / "summary.json");
  bool schema = results.contains("items") && results.contains("fingerprint") && results.contains("seeds") &&
                summary.contains("accuracy") && summary.contains("pairwise") && summary.contains("triplet") &&
                summary.contains("fingerprint") && fs::exists(dir / "pairwise.csv") && fs::exists(dir / "triplet.csv");
  std::size_t items = results.contains("items") ? results["items"].size() : 0;
  schema = schema && items == 15;
  double worst = 0.0;
  const bool sums = tables_sum(summary["pairwise"], worst) && tables_sum(summary["triplet"], worst);
  std::size_t correct = 0;
  for (const auto& [mode, by_type] : summary["accuracy"].items())
    for (const auto& [type, cell] : by_type.items()) correct += cell.at("correct").get<std::size_t>();
  const bool deterministic = summaries[0] == summaries[1];
  const std::size_t predictions = read_rows(dir / "debate.jsonl").size();
  return {schema && sums && correct > 0 && deterministic && seconds < 60.0,
          std::to_string(items) + " items, " + std::to_string(predictions) + " predictions, " + std::to_string(correct) +
              " correct, table sum deviation " + fmt(worst) + ", " + (deterministic ? "deterministic" : "NOT deterministic") +
              ", " + fmt(seconds, 3) + " s"};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 3) {
    std::cerr << "usage: acceptance <toy checkpoint> <work dir>\n";
    return 2;
  }
  const fs::path checkpoint = argv[1], work = argv[2];
  fs::create_directories(work);

  std::optional<ToyModel> toy;
  std::string toy_error;
  try {
    toy = toy_from_checkpoint(load_checkpoint(checkpoint));
  } catch (const std::exception& e) {
    toy_error = e.what();
  }
  double train_seconds = 0.0;
  try {
    train_seconds = read_json(checkpoint.parent_path() / "manifest-train-toy.json").at("train_seconds").get<double>();
  } catch (const std::exception&) {
  }
  const ToyModel* tp = toy ? &*toy : nullptr;
  if (!tp) std::cout << "note: toy checkpoint not loaded (" << toy_error << ")\n";

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"zero-intervention identity", [&] { return criterion1(tp); }},
      {"CAA recovery", [] { return criterion2(); }},
      {"gate contract", [] { return criterion3(); }},
      {"debate update oracle and echo demo", [&] { return criterion4(work); }},
      {"majority-vote limit", [] { return criterion5(); }},
      {"toy alpha ablation", [&] { return criterion6(tp, train_seconds); }},
      {"toy stance probes", [&] { return criterion7(tp); }},
      {"debate harness semantics", [] { return criterion8(); }},
      {"metric oracles", [] { return criterion9(); }},
      {"end-to-end pipeline", [&] { return criterion10(checkpoint, work, tp != nullptr); }},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Timer timer;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << (i + 1) << " " << criteria[i].first << ": " << o.detail << " ["
              << fmt(timer.seconds(), 3) << " s]\n"
              << std::flush;
  }
  std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed\n";
  return failed == 0 ? 0 : 1;
}
