#include "molace/debate.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <map>

namespace molace {

namespace {

std::string_view kind_name(PromptKind k) {
  switch (k) {
    case PromptKind::base: return "base";
    case PromptKind::peers: return "peers";
    case PromptKind::critic: return "critic";
    case PromptKind::fix: return "fix";
  }
  return "base";
}

bool is_punct(char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; }

}  // namespace

nlohmann::json DebateTemplates::to_json() const {
  return {{"base", base}, {"peers", peers}, {"critic", critic}, {"fix", fix}};
}

DebateTemplates DebateTemplates::from_json(const nlohmann::json& j) {
  DebateTemplates t;
  t.base = j.value("base", t.base);
  t.peers = j.value("peers", t.peers);
  t.critic = j.value("critic", t.critic);
  t.fix = j.value("fix", t.fix);
  return t;
}

std::string render_template(const std::string& text, const std::vector<std::pair<std::string, std::string>>& values) {
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    bool replaced = false;
    if (text[i] == '{') {
      for (const auto& [key, value] : values) {
        const std::string ph = "{" + key + "}";
        if (text.compare(i, ph.size(), ph) == 0) {
          out += value;
          i += ph.size();
          replaced = true;
          break;
        }
      }
    }
    if (!replaced) out += text[i++];
  }
  return out;
}

void DebateConfig::validate() const {
  if (n_agents < 1) throw InvalidArgument("debate: n_agents must be >= 1");
  if (rounds < 1) throw InvalidArgument("debate: rounds must be >= 1");
  if (!(keep_ratio > 0.0 && keep_ratio <= 1.0)) throw InvalidArgument("debate: keep_ratio must be in (0, 1]");
  if (!(temperature > 0.0)) throw InvalidArgument("debate: temperature must be positive");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw InvalidArgument("debate: top_p must be in (0, 1]");
  if (max_new_tokens < 1) throw InvalidArgument("debate: max_new_tokens must be >= 1");
}

nlohmann::json DebateConfig::to_json() const {
  return {{"n_agents", n_agents},   {"rounds", rounds},       {"temperature", temperature},
          {"top_p", top_p},         {"max_new_tokens", max_new_tokens},
          {"quality", quality},     {"diversity", diversity}, {"refutation", refutation},
          {"keep_ratio", keep_ratio}, {"templates", templates.to_json()}};
}

DebateConfig DebateConfig::from_json(const nlohmann::json& j) {
  DebateConfig c;
  c.n_agents = j.value("n_agents", c.n_agents);
  c.rounds = j.value("rounds", c.rounds);
  c.temperature = j.value("temperature", c.temperature);
  c.top_p = j.value("top_p", c.top_p);
  c.max_new_tokens = j.value("max_new_tokens", c.max_new_tokens);
  c.quality = j.value("quality", c.quality);
  c.diversity = j.value("diversity", c.diversity);
  c.refutation = j.value("refutation", c.refutation);
  c.keep_ratio = j.value("keep_ratio", c.keep_ratio);
  if (j.contains("templates")) c.templates = DebateTemplates::from_json(j.at("templates"));
  c.validate();
  return c;
}

std::string normalize_answer(std::string_view text) {
  std::string s = to_lower(trim(text));
  std::size_t b = 0, e = s.size();
  while (b < e && (is_punct(s[b]) || std::isspace(static_cast<unsigned char>(s[b])))) ++b;
  while (e > b && (is_punct(s[e - 1]) || std::isspace(static_cast<unsigned char>(s[e - 1])))) --e;
  std::string out;
  bool space = false;
  for (std::size_t i = b; i < e; ++i) {
    if (std::isspace(static_cast<unsigned char>(s[i]))) {
      space = true;
      continue;
    }
    if (space && !out.empty()) out += ' ';
    space = false;
    out += s[i];
  }
  return out;
}

std::optional<std::string> extract_final_answer_raw(std::string_view text) {
  static constexpr std::string_view prefix = "final answer:";
  for (const auto& line : split_lines(text)) {
    const std::string t = trim(line);
    if (t.size() >= prefix.size() && to_lower(t.substr(0, prefix.size())) == prefix)
      return trim(std::string_view(t).substr(prefix.size()));
  }
  return std::nullopt;
}

std::optional<std::string> extract_final_answer(std::string_view text) {
  auto raw = extract_final_answer_raw(text);
  if (!raw) return std::nullopt;
  return normalize_answer(*raw);
}

std::string majority_vote(const std::vector<std::optional<std::string>>& answers) {
  std::map<std::string, std::pair<std::size_t, std::size_t>> tally;  // answer -> (count, first agent)
  for (std::size_t i = 0; i < answers.size(); ++i) {
    if (!answers[i]) continue;
    auto [it, inserted] = tally.try_emplace(*answers[i], 0, i);
    ++it->second.first;
  }
  if (tally.empty()) throw NoConsensusError("majority_vote: no present answers");
  auto best = tally.begin();
  for (auto it = tally.begin(); it != tally.end(); ++it) {
    const auto [c, first] = it->second;
    if (c > best->second.first || (c == best->second.first && first < best->second.second)) best = it;
  }
  return best->first;
}

HashingEmbedder::HashingEmbedder(std::size_t dimension) : dim_(dimension) {
  if (dim_ < 1) throw InvalidArgument("HashingEmbedder: dimension must be positive");
}

Eigen::VectorXd HashingEmbedder::embed(std::string_view text) const {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim_));
  std::string word;
  auto flush = [&] {
    if (!word.empty()) v(static_cast<Eigen::Index>(fnv1a(word) % dim_)) += 1.0;
    word.clear();
  };
  for (char c : text) {
    if (std::isalnum(static_cast<unsigned char>(c)))
      word += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    else
      flush();
  }
  flush();
  if (v.isZero() && !trim(text).empty()) v(static_cast<Eigen::Index>(fnv1a(trim(text)) % dim_)) = 1.0;
  const double n = v.norm();
  if (n > 0.0) v /= n;
  return v;
}

double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double na = a.norm(), nb = b.norm();
  if (!(na > 0.0) || !(nb > 0.0)) return 0.0;
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

std::size_t prune_keep_count(std::size_t candidates, std::size_t n_agents, double keep_ratio) {
  const auto frac = static_cast<std::size_t>(std::floor(keep_ratio * static_cast<double>(candidates) + 1e-12));
  return std::min(candidates, std::max(n_agents, frac));
}

PruneResult quality_prune(const std::string& question, const std::vector<std::string>& answers,
                          const Embedder& embedder, std::size_t n_agents, double keep_ratio) {
  if (answers.empty()) throw InvalidArgument("quality_prune: no answers");
  PruneResult r;
  const Eigen::VectorXd q = embedder.embed(question);
  for (const auto& a : answers) r.scores.push_back(cosine_similarity(q, embedder.embed(a)));
  const std::size_t k = prune_keep_count(answers.size(), n_agents, keep_ratio);
  std::vector<std::size_t> order(answers.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return r.scores[a] > r.scores[b]; });
  r.kept.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(r.kept.begin(), r.kept.end());
  return r;
}

std::vector<std::size_t> diversity_select(const std::vector<Eigen::VectorXd>& e, std::size_t k, std::size_t seed_index) {
  if (k > e.size()) throw InvalidArgument("diversity_select: k exceeds the number of answers");
  if (k == 0) return {};
  if (seed_index >= e.size()) throw InvalidArgument("diversity_select: seed index out of range");
  std::vector<std::size_t> selected{seed_index};
  std::vector<double> min_dist(e.size(), std::numeric_limits<double>::infinity());
  std::vector<bool> taken(e.size(), false);
  taken[seed_index] = true;
  while (selected.size() < k) {
    const auto& last = e[selected.back()];
    for (std::size_t i = 0; i < e.size(); ++i)
      if (!taken[i]) min_dist[i] = std::min(min_dist[i], 1.0 - cosine_similarity(e[i], last));
    std::size_t best = e.size();
    for (std::size_t i = 0; i < e.size(); ++i)
      if (!taken[i] && (best == e.size() || min_dist[i] > min_dist[best])) best = i;
    taken[best] = true;
    selected.push_back(best);
  }
  return selected;
}

std::vector<std::size_t> diversity_select(const std::string& question, const std::vector<std::string>& answers,
                                          const Embedder& embedder, std::size_t k) {
  std::vector<Eigen::VectorXd> e;
  for (const auto& a : answers) e.push_back(embedder.embed(a));
  const Eigen::VectorXd q = embedder.embed(question);
  std::size_t seed = 0;
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < e.size(); ++i) {
    const double s = cosine_similarity(q, e[i]);
    if (s > best) {
      best = s;
      seed = i;
    }
  }
  return diversity_select(e, k, seed);
}

RefutationResult refute_then_fix(Generator& generator, const std::string& question, const std::string& answer,
                                 const DebateTemplates& templates, std::uint64_t seed) {
  RefutationResult r;
  r.answer = answer;
  try {
    GenerationRequest critic{PromptKind::critic,
                             render_template(templates.critic, {{"question", question}, {"answer", answer}}),
                             question, derive_seed(seed, 0)};
    r.critique = generator.generate(critic);
  } catch (const std::exception& e) {
    r.error = std::string("critique failed: ") + e.what();
    return r;
  }
  try {
    GenerationRequest fix{
        PromptKind::fix,
        render_template(templates.fix, {{"question", question}, {"answer", answer}, {"critique", r.critique}}),
        question, derive_seed(seed, 1)};
    r.revision = generator.generate(fix);
  } catch (const std::exception& e) {
    r.error = std::string("fix failed: ") + e.what();
    return r;
  }
  if (extract_final_answer(r.revision)) {
    r.answer = r.revision;
    r.revised = true;
  }
  return r;
}

nlohmann::json Transcript::to_json(const DebateConfig& config) const {
  auto opt = [](const std::optional<std::string>& s) -> nlohmann::json { return s ? nlohmann::json(*s) : nlohmann::json(); };
  nlohmann::json rs = nlohmann::json::array();
  for (const auto& round : rounds) {
    nlohmann::json agents = nlohmann::json::array();
    for (const auto& a : round)
      agents.push_back({{"prompt", a.prompt},
                        {"response", a.response},
                        {"final_answer_raw", opt(a.final_answer_raw)},
                        {"final_answer", opt(a.final_answer)},
                        {"pruned", a.pruned},
                        {"critique", opt(a.critique)},
                        {"revision", opt(a.revision)},
                        {"error", opt(a.error)}});
    rs.push_back({{"agents", agents}});
  }
  return {{"config", config.to_json()}, {"question", question}, {"rounds", rs}, {"final", opt(final_answer)},
          {"error", opt(error)}};
}

Transcript run_debate(Generator& generator, const std::string& question, const DebateConfig& config,
                      std::uint64_t seed, const Embedder* embedder) {
  config.validate();
  HashingEmbedder fallback;
  const Embedder& emb = embedder ? *embedder : fallback;
  Transcript t;
  t.question = question;
  std::vector<std::string> peers;  // surviving answers of the previous round

  for (std::size_t round = 0; round < config.rounds; ++round) {
    std::string peer_text;
    for (std::size_t j = 0; j < peers.size(); ++j)
      peer_text += "Agent " + std::to_string(j + 1) + ": " + peers[j] + "\n\n";
    t.rounds.emplace_back();
    for (std::size_t i = 0; i < config.n_agents; ++i) {
      AgentTurn turn;
      GenerationRequest req;
      req.kind = round == 0 ? PromptKind::base : PromptKind::peers;
      req.question = question;
      req.prompt = round == 0 ? render_template(config.templates.base, {{"question", question}})
                              : render_template(config.templates.peers,
                                                {{"question", question}, {"peer_answers", peer_text}});
      req.seed = derive_seed(seed, round, i);
      turn.prompt = req.prompt;
      try {
        turn.response = generator.generate(req);
      } catch (const std::exception& e) {
        turn.error = e.what();
        t.rounds.back().push_back(turn);
        t.error = "round " + std::to_string(round) + ", agent " + std::to_string(i) + " (" +
                  std::string(kind_name(req.kind)) + "): " + e.what();
        throw DebateError(*t.error, t);
      }
      turn.final_answer_raw = extract_final_answer_raw(turn.response);
      turn.final_answer = extract_final_answer(turn.response);
      t.rounds.back().push_back(std::move(turn));
    }
    if (round + 1 == config.rounds) break;

    auto& cur = t.rounds.back();
    std::vector<std::size_t> alive(cur.size());
    for (std::size_t i = 0; i < alive.size(); ++i) alive[i] = i;
    auto texts = [&] {
      std::vector<std::string> out;
      for (auto i : alive) out.push_back(cur[i].response);
      return out;
    };
    if (config.quality) {
      const PruneResult pr = quality_prune(question, texts(), emb, config.n_agents, config.keep_ratio);
      std::vector<std::size_t> next;
      for (auto k : pr.kept) next.push_back(alive[k]);
      alive = next;
    }
    if (config.diversity) {
      const std::size_t k = prune_keep_count(alive.size(), config.n_agents, config.keep_ratio);
      auto sel = diversity_select(question, texts(), emb, k);
      std::vector<std::size_t> next;
      for (auto s : sel) next.push_back(alive[s]);
      std::sort(next.begin(), next.end());
      alive = next;
    }
    for (std::size_t i = 0; i < cur.size(); ++i)
      cur[i].pruned = std::find(alive.begin(), alive.end(), i) == alive.end();
    peers.clear();
    for (auto i : alive) {
      std::string text = cur[i].response;
      if (config.refutation) {
        RefutationResult rr = refute_then_fix(generator, question, text, config.templates, derive_seed(seed, round, i, 1));
        cur[i].critique = rr.critique;
        cur[i].revision = rr.revision;
        if (rr.error) cur[i].error = rr.error;
        text = rr.answer;
      }
      peers.push_back(text);
    }
  }

  std::vector<std::optional<std::string>> last;
  for (const auto& a : t.rounds.back()) last.push_back(a.final_answer);
  try {
    t.final_answer = majority_vote(last);
  } catch (const NoConsensusError& e) {
    t.error = e.what();
  }
  return t;
}

}  // namespace molace
