#include "molace/eval.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <ctime>
#include <fstream>
#include <map>
#include <sstream>

namespace molace {

using nlohmann::json;

std::string_view verdict_name(Verdict v) {
  switch (v) {
    case Verdict::correct: return "correct";
    case Verdict::incorrect: return "incorrect";
    case Verdict::undefined: return "undefined";
  }
  return "undefined";
}

Verdict parse_verdict(std::string_view s) {
  if (s == "correct") return Verdict::correct;
  if (s == "incorrect") return Verdict::incorrect;
  if (s == "undefined") return Verdict::undefined;
  throw InvalidArgument("unknown verdict: " + std::string(s));
}

json Prediction::to_json() const {
  return {{"item_id", item_id},
          {"mode", prompt_mode_name(mode)},
          {"type", question_type_name(type)},
          {"method", method},
          {"prompt", prompt},
          {"response", response},
          {"prediction", prediction ? json(*prediction) : json()},
          {"verdict", verdict_name(verdict)},
          {"error", error ? json(*error) : json()}};
}

Prediction Prediction::from_json(const json& j) {
  Prediction p;
  p.item_id = j.at("item_id").get<std::string>();
  p.mode = parse_prompt_mode(j.at("mode").get<std::string>());
  p.type = parse_question_type(j.at("type").get<std::string>());
  p.method = j.value("method", "");
  p.prompt = j.value("prompt", "");
  p.response = j.value("response", "");
  if (j.contains("prediction") && j.at("prediction").is_string()) p.prediction = j.at("prediction").get<std::string>();
  p.verdict = parse_verdict(j.at("verdict").get<std::string>());
  if (j.contains("error") && j.at("error").is_string()) p.error = j.at("error").get<std::string>();
  return p;
}

std::optional<char> extract_choice_letter(std::string_view text) {
  auto alnum = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; };
  auto space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
  for (std::size_t i = 0; i < text.size(); ++i) {
    std::size_t j = i;
    const bool paren = text[j] == '(';
    if (paren) ++j;
    if (j >= text.size()) break;
    const char c = text[j];
    const char up = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    if (up < 'A' || up > 'D') continue;
    if (i > 0 && (alnum(text[i - 1]) || text[i - 1] == '\'' || text[i - 1] == '-')) continue;
    ++j;
    const bool close = j < text.size() && text[j] == ')';
    if (close) ++j;
    if (j == text.size()) return up;
    const char d = text[j];
    const bool punct_delim = d == '.' || d == ':' || d == ')';
    if (!punct_delim && !space(d)) continue;
    if (paren || close || punct_delim || up == c) return up;
    // Lowercase bare letter followed by whitespace: accept only at the start of a line.
    std::size_t k = i;
    while (k > 0 && (text[k - 1] == ' ' || text[k - 1] == '\t')) --k;
    if (k == 0 || text[k - 1] == '\n') return up;
  }
  return std::nullopt;
}

Verdict score_choice(std::string_view response, const ChoiceQuestion& question) {
  const auto letter = extract_choice_letter(response);
  return letter && *letter == question.correct_label ? Verdict::correct : Verdict::incorrect;
}

std::vector<std::string> judge_tokens(std::string_view text) {
  std::string s;
  for (char c : text)
    s += std::ispunct(static_cast<unsigned char>(c)) ? ' ' : static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return split_whitespace(s);
}

double token_f1(std::string_view a, std::string_view b) {
  const auto ta = judge_tokens(a), tb = judge_tokens(b);
  if (ta.empty() || tb.empty()) return 0.0;
  std::map<std::string, int> count;
  for (const auto& t : tb) ++count[t];
  std::size_t common = 0;
  for (const auto& t : ta)
    if (count[t] > 0) {
      --count[t];
      ++common;
    }
  if (common == 0) return 0.0;
  const double p = static_cast<double>(common) / static_cast<double>(ta.size());
  const double r = static_cast<double>(common) / static_cast<double>(tb.size());
  return 2.0 * p * r / (p + r);
}

bool LexicalJudge::judge(const std::string& response, const std::string& best, const std::vector<std::string>& incorrect) {
  const double fb = token_f1(response, best);
  double fi = 0.0;
  for (const auto& s : incorrect) fi = std::max(fi, token_f1(response, s));
  return fb >= threshold_ && fb > fi;
}

Verdict score_open(Judge& judge, const std::string& response, const std::string& best,
                   const std::vector<std::string>& incorrect, std::string* error) {
  try {
    return judge.judge(response, best, incorrect) ? Verdict::correct : Verdict::incorrect;
  } catch (const std::exception& e) {
    if (error) *error = std::string("judge failure: ") + e.what();
    return Verdict::incorrect;
  }
}

json PairwiseTable::to_json() const {
  return {{"both_correct", both}, {"exactly_one", exactly_one}, {"both_incorrect", both_incorrect}, {"items", items}};
}

json TripletTable::to_json() const {
  return {{"all_correct", all}, {"exactly_two", exactly_two}, {"exactly_one", exactly_one}, {"all_incorrect", none},
          {"items", items}};
}

namespace {

std::vector<std::size_t> bucket_counts(const std::vector<std::vector<Verdict>>& cols, std::size_t& items) {
  const std::size_t n = cols.front().size();
  for (const auto& c : cols)
    if (c.size() != n) throw InvalidArgument("category tables need aligned verdict vectors");
  std::vector<std::size_t> buckets(cols.size() + 1, 0);
  items = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t correct = 0;
    bool defined = true;
    for (const auto& c : cols) {
      if (c[i] == Verdict::undefined) defined = false;
      correct += c[i] == Verdict::correct;
    }
    if (!defined) continue;
    ++items;
    ++buckets[correct];
  }
  return buckets;
}

double pct(std::size_t k, std::size_t n) { return n == 0 ? 0.0 : 100.0 * static_cast<double>(k) / static_cast<double>(n); }

}  // namespace

PairwiseTable pairwise_categories(const std::vector<Verdict>& a, const std::vector<Verdict>& b) {
  PairwiseTable t;
  const auto c = bucket_counts({a, b}, t.items);
  t.both = pct(c[2], t.items);
  t.exactly_one = pct(c[1], t.items);
  t.both_incorrect = pct(c[0], t.items);
  return t;
}

TripletTable triplet_categories(const std::vector<Verdict>& a, const std::vector<Verdict>& b,
                                const std::vector<Verdict>& c3) {
  TripletTable t;
  const auto c = bucket_counts({a, b, c3}, t.items);
  t.all = pct(c[3], t.items);
  t.exactly_two = pct(c[2], t.items);
  t.exactly_one = pct(c[1], t.items);
  t.none = pct(c[0], t.items);
  return t;
}

json AlphaCoverage::to_json(const std::vector<double>& alphas) const {
  json j = {{"per_alpha", per_alpha}, {"coverage", coverage}, {"counts", counts}};
  if (!alphas.empty()) j["alphas"] = alphas;
  return j;
}

AlphaCoverage alpha_coverage(const std::vector<std::vector<bool>>& m) {
  if (m.empty() || m.front().empty()) throw InvalidArgument("alpha_coverage: empty matrix");
  const std::size_t k = m.front().size();
  AlphaCoverage r;
  r.per_alpha.assign(k, 0.0);
  r.counts.assign(k + 1, 0);
  std::size_t covered = 0;
  for (const auto& row : m) {
    if (row.size() != k) throw InvalidArgument("alpha_coverage: ragged matrix");
    std::size_t c = 0;
    for (std::size_t j = 0; j < k; ++j)
      if (row[j]) {
        r.per_alpha[j] += 1.0;
        ++c;
      }
    ++r.counts[c];
    covered += c > 0;
  }
  for (auto& p : r.per_alpha) p /= static_cast<double>(m.size());
  r.coverage = static_cast<double>(covered) / static_cast<double>(m.size());
  const double best = *std::max_element(r.per_alpha.begin(), r.per_alpha.end());
  if (r.coverage + 1e-12 < best) throw ComputationError("alpha_coverage: coverage below a per-alpha accuracy");
  return r;
}

json RunSummary::to_json() const {
  return {{"accuracy", accuracy}, {"pairwise", pairwise}, {"triplet", triplet}, {"alpha", alpha},
          {"fingerprint", fingerprint}, {"seeds", seeds}};
}

RunSummary summarize(const std::vector<Prediction>& preds, const std::string& fingerprint, const json& seeds) {
  RunSummary s;
  s.fingerprint = fingerprint;
  s.seeds = seeds;
  s.accuracy = json::object();
  s.pairwise = json::object();
  s.triplet = json::object();
  s.alpha = json();

  std::vector<std::string> items;  // first-seen order
  std::map<std::tuple<std::string, PromptMode, QuestionType>, Verdict> v;
  std::map<std::pair<PromptMode, QuestionType>, std::array<std::size_t, 3>> tally;
  for (const auto& p : preds) {
    if (std::find(items.begin(), items.end(), p.item_id) == items.end()) items.push_back(p.item_id);
    v[{p.item_id, p.mode, p.type}] = p.verdict;
    ++tally[{p.mode, p.type}][static_cast<std::size_t>(p.verdict)];
  }
  for (const auto& [key, t] : tally) {
    const std::size_t defined = t[0] + t[1];
    s.accuracy[std::string(prompt_mode_name(key.first))][std::string(question_type_name(key.second))] = {
        {"accuracy", defined ? static_cast<double>(t[0]) / static_cast<double>(defined) : 0.0},
        {"correct", t[0]},
        {"defined", defined},
        {"undefined", t[2]}};
  }
  for (BiasFamily f : {BiasFamily::confirmation, BiasFamily::stance, BiasFamily::negation}) {
    const auto [lo, hi] = family_modes(f);
    for (QuestionType qt : {QuestionType::open, QuestionType::binary, QuestionType::mc}) {
      std::vector<Verdict> n, a, b;
      for (const auto& id : items) {
        auto ia = v.find({id, lo, qt}), ib = v.find({id, hi, qt});
        if (ia == v.end() || ib == v.end()) continue;
        a.push_back(ia->second);
        b.push_back(ib->second);
        auto in = v.find({id, PromptMode::neutral, qt});
        n.push_back(in == v.end() ? Verdict::undefined : in->second);
      }
      if (a.empty()) continue;
      const std::string fam(bias_family_name(f)), type(question_type_name(qt));
      s.pairwise[fam][type] = pairwise_categories(a, b).to_json();
      s.triplet[fam][type] = triplet_categories(n, a, b).to_json();
    }
  }
  return s;
}

namespace {

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError("cannot write " + p.string());
  out << text;
  if (!out) throw IoError("write failed: " + p.string());
}

}  // namespace

ResultPaths write_results(const std::vector<Prediction>& preds, const RunSummary& summary,
                          const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  const std::string now = utc_now();

  json items = json::object();
  json order = json::array();
  for (const auto& p : preds) {
    if (!items.contains(p.item_id)) order.push_back(p.item_id);
    json entry = p.to_json();
    entry.erase("item_id");
    entry.erase("mode");
    entry.erase("type");
    items[p.item_id][std::string(prompt_mode_name(p.mode))][std::string(question_type_name(p.type))] = entry;
  }
  const json results = {{"fingerprint", summary.fingerprint}, {"seeds", summary.seeds}, {"created_at", now},
                        {"item_order", order},               {"items", items}};
  json sum = summary.to_json();
  sum["created_at"] = now;

  ResultPaths paths{dir / "results.json", dir / "summary.json"};
  write_text(paths.results, results.dump(2) + "\n");
  write_text(paths.summary, sum.dump(2) + "\n");

  std::ostringstream pw, tr;
  pw << "family,type,both_correct,exactly_one,both_incorrect,items\n";
  for (const auto& [fam, types] : summary.pairwise.items())
    for (const auto& [type, t] : types.items())
      pw << fam << "," << type << "," << t["both_correct"].get<double>() << "," << t["exactly_one"].get<double>()
         << "," << t["both_incorrect"].get<double>() << "," << t["items"].get<std::size_t>() << "\n";
  tr << "family,type,all_correct,exactly_two,exactly_one,all_incorrect,items\n";
  for (const auto& [fam, types] : summary.triplet.items())
    for (const auto& [type, t] : types.items())
      tr << fam << "," << type << "," << t["all_correct"].get<double>() << "," << t["exactly_two"].get<double>() << ","
         << t["exactly_one"].get<double>() << "," << t["all_incorrect"].get<double>() << ","
         << t["items"].get<std::size_t>() << "\n";
  write_text(dir / "pairwise.csv", pw.str());
  write_text(dir / "triplet.csv", tr.str());
  return paths;
}

std::vector<Prediction> read_results(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  const json j = json::parse(in);
  std::vector<Prediction> out;
  for (const auto& id : j.at("item_order")) {
    const std::string item = id.get<std::string>();
    for (const auto& [mode, types] : j.at("items").at(item).items())
      for (const auto& [type, e] : types.items()) {
        json full = e;
        full["item_id"] = item;
        full["mode"] = mode;
        full["type"] = type;
        out.push_back(Prediction::from_json(full));
      }
  }
  return out;
}

}  // namespace molace
