#include "molace/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "bundled_corpus.inc"

namespace molace {

namespace {

using nlohmann::json;

struct ModeInfo {
  PromptMode mode;
  std::string_view name, key;
  int lean;
  std::vector<std::string_view> aliases;
};

const std::vector<ModeInfo>& mode_table() {
  static const std::vector<ModeInfo> t = {
      {PromptMode::neutral, "neutral", "neutral_prompt", 0, {"question", "prompt"}},
      {PromptMode::cb_correct, "cb_correct", "confirmation_bias_correct_prompt", -1, {"cb_correct_prompt"}},
      {PromptMode::cb_incorrect, "cb_incorrect", "confirmation_bias_incorrect_prompt", +1, {"cb_incorrect_prompt"}},
      {PromptMode::support, "support", "support_prompt", +1, {}},
      {PromptMode::challenge, "challenge", "challenge_prompt", -1, {}},
      {PromptMode::affirm, "affirm", "affirm_prompt", +1, {"affirmed_prompt"}},
      {PromptMode::negate, "negate", "negate_prompt", -1, {"negated_prompt"}},
  };
  return t;
}

const ModeInfo& info(PromptMode m) {
  for (const auto& i : mode_table())
    if (i.mode == m) return i;
  throw InvalidArgument("unknown prompt mode");
}

std::optional<json> lookup(const json& j, std::string_view key, const std::vector<std::string_view>& aliases) {
  if (j.contains(key) && !j.at(key).is_null()) return j.at(key);
  for (auto a : aliases)
    if (j.contains(a) && !j.at(a).is_null()) return j.at(a);
  return std::nullopt;
}

std::string strip_tags(std::string_view s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '<') {
      const auto close = s.find('>', i);
      const bool tag = close != std::string_view::npos && close > i + 1 &&
                       (std::isalpha(static_cast<unsigned char>(s[i + 1])) || s[i + 1] == '/');
      if (tag) {
        i = close;
        continue;
      }
    }
    out += s[i];
  }
  return out;
}

std::string collapse_ws(std::string_view s) {
  std::string out;
  for (const auto& w : split_whitespace(s)) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

/// Claim text suitable for "the view that <claim>".
std::string as_clause(std::string_view sentence) {
  std::string s = trim(sentence);
  while (!s.empty() && (s.back() == '.' || s.back() == '!' || s.back() == '?')) s.pop_back();
  if (s.size() >= 2 && std::isupper(static_cast<unsigned char>(s[0])) && !std::isupper(static_cast<unsigned char>(s[1])))
    s[0] = static_cast<char>(std::tolower(static_cast<unsigned char>(s[0])));
  return s;
}

}  // namespace

std::string_view prompt_mode_name(PromptMode m) { return info(m).name; }
std::string_view prompt_mode_key(PromptMode m) { return info(m).key; }
int prompt_mode_lean(PromptMode m) { return info(m).lean; }

PromptMode parse_prompt_mode(std::string_view name) {
  for (const auto& i : mode_table())
    if (i.name == name) return i.mode;
  throw InvalidArgument("unknown prompt mode: " + std::string(name));
}

std::string_view question_type_name(QuestionType t) {
  switch (t) {
    case QuestionType::open: return "open";
    case QuestionType::binary: return "binary";
    case QuestionType::mc: return "mc";
  }
  return "open";
}

QuestionType parse_question_type(std::string_view name) {
  if (name == "open") return QuestionType::open;
  if (name == "binary") return QuestionType::binary;
  if (name == "mc") return QuestionType::mc;
  throw InvalidArgument("unknown question type: " + std::string(name));
}

void ChoiceQuestion::validate() const {
  if (options.size() < 2 || options.size() > 4) throw InvalidArgument("choice question needs 2 to 4 options");
  if (correct_label < 'A' || correct_index() >= options.size())
    throw InvalidArgument("choice question label outside its options");
}

std::string ChoiceQuestion::render(const std::optional<std::string>& stem_override) const {
  std::string out = stem_override ? *stem_override : stem;
  for (std::size_t i = 0; i < options.size(); ++i)
    out += "\n(" + std::string(1, static_cast<char>('A' + i)) + ") " + options[i];
  return out;
}

json ChoiceQuestion::to_json() const {
  return {{"stem", stem}, {"options", options}, {"correct_label", std::string(1, correct_label)}};
}

ChoiceQuestion ChoiceQuestion::from_json(const json& j) {
  ChoiceQuestion q;
  q.stem = j.at("stem").get<std::string>();
  q.options = j.at("options").get<std::vector<std::string>>();
  const auto label = j.at("correct_label").get<std::string>();
  if (label.size() != 1) throw InvalidArgument("correct_label must be one letter");
  q.correct_label = static_cast<char>(std::toupper(static_cast<unsigned char>(label[0])));
  q.validate();
  return q;
}

std::optional<std::string> Item::prompt(PromptMode m) const {
  auto it = prompts.find(m);
  if (it == prompts.end()) return std::nullopt;
  return it->second;
}

void Item::validate() const {
  if (id.empty()) throw InvalidArgument("missing field id");
  if (!prompts.contains(PromptMode::neutral) || prompts.at(PromptMode::neutral).empty())
    throw InvalidArgument("missing field neutral_prompt");
  if (best_answer.empty()) throw InvalidArgument("missing field best_answer");
  for (const auto& [m, p] : prompts)
    if (p.empty() || p.back() != '?')
      throw InvalidArgument(std::string(prompt_mode_key(m)) + " must end with '?'");
  if (binary) binary->validate();
  if (mc) mc->validate();
}

json Item::to_json() const {
  json j = {{"id", id}};
  for (const auto& [m, p] : prompts) j[std::string(prompt_mode_key(m))] = p;
  j["best_answer"] = best_answer;
  j["incorrect_answers"] = incorrect_answers;
  if (binary) j["binary"] = binary->to_json();
  if (mc) j["mc"] = mc->to_json();
  return j;
}

Item Item::from_json(const json& j) {
  if (!j.is_object()) throw InvalidArgument("record is not an object");
  Item it;
  if (auto id = lookup(j, "id", {"item_id"})) it.id = id->is_string() ? id->get<std::string>() : id->dump();
  for (const auto& mi : mode_table())
    if (auto p = lookup(j, mi.key, mi.aliases)) it.prompts[mi.mode] = sanitize_prompt(p->get<std::string>());
  if (auto b = lookup(j, "best_answer", {"answer", "Best Answer", "best"})) it.best_answer = trim(b->get<std::string>());
  if (auto inc = lookup(j, "incorrect_answers", {"Incorrect Answers", "incorrect"})) {
    if (inc->is_string()) {
      std::stringstream ss(inc->get<std::string>());
      std::string part;
      while (std::getline(ss, part, ';'))
        if (!trim(part).empty()) it.incorrect_answers.push_back(trim(part));
    } else {
      for (const auto& a : *inc) it.incorrect_answers.push_back(trim(a.get<std::string>()));
    }
  }
  if (j.contains("binary")) it.binary = ChoiceQuestion::from_json(j.at("binary"));
  if (j.contains("mc")) it.mc = ChoiceQuestion::from_json(j.at("mc"));
  return it;
}

json CorpusError::to_json() const {
  return {{"item_id", item_id}, {"stage", stage}, {"message", message}, {"line", line}};
}

CorpusLoad parse_corpus(std::string_view text) {
  CorpusLoad out;
  auto take = [&](const json& rec, std::size_t line, std::size_t index) {
    std::string id;
    try {
      Item it = Item::from_json(rec);
      if (it.id.empty()) it.id = "item-" + std::to_string(index);
      id = it.id;
      it.validate();
      out.items.push_back(std::move(it));
    } catch (const std::exception& e) {
      if (id.empty() && rec.is_object() && rec.contains("id")) id = rec.at("id").dump();
      out.errors.push_back({id, "validate", e.what(), line});
    }
  };
  const std::string t = trim(text);
  if (t.empty()) return out;
  if (t.front() == '[') {
    json arr;
    try {
      arr = json::parse(t);
    } catch (const std::exception& e) {
      out.errors.push_back({"", "parse", e.what(), 1});
      return out;
    }
    for (std::size_t i = 0; i < arr.size(); ++i) take(arr[i], 0, i);
    return out;
  }
  const auto lines = split_lines(text);
  std::size_t index = 0;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    json rec;
    try {
      rec = json::parse(lines[i]);
    } catch (const std::exception& e) {
      out.errors.push_back({"", "parse", e.what(), i + 1});
      ++index;
      continue;
    }
    take(rec, i + 1, index++);
  }
  return out;
}

CorpusLoad load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read corpus: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_corpus(ss.str());
}

void save_corpus(const std::vector<Item>& items, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write corpus: " + path.string());
  for (const auto& it : items) out << it.to_json().dump() << "\n";
  if (!out) throw IoError("write failed: " + path.string());
}

std::string_view bundled_corpus_text() { return kBundledCorpus; }

std::vector<Item> bundled_corpus() {
  auto load = parse_corpus(kBundledCorpus);
  if (!load.errors.empty()) throw ComputationError("bundled corpus is invalid: " + load.errors.front().message);
  return load.items;
}

std::string sanitize_prompt(std::string_view text) {
  std::string s = collapse_ws(strip_tags(text));
  static const std::vector<std::string> prefixes = {"task:", "prompt:", "question:", "output:", "rewrite:",
                                                    "rewritten prompt:", "answer:"};
  for (bool again = true; again;) {
    again = false;
    s = trim(s);
    while (!s.empty() && (s.front() == '"' || s.front() == '\'' || s.front() == '`')) s.erase(0, 1);
    while (!s.empty() && (s.back() == '"' || s.back() == '\'' || s.back() == '`')) s.pop_back();
    const std::string low = to_lower(s);
    for (const auto& p : prefixes)
      if (low.rfind(p, 0) == 0) {
        s = s.substr(p.size());
        again = true;
        break;
      }
  }
  s = trim(s);
  while (!s.empty() && (s.back() == '.' || s.back() == '!' || s.back() == ':' || s.back() == ';')) s.pop_back();
  s = trim(s);
  if (s.empty()) return s;
  if (s.back() != '?') s += '?';
  if (s.size() > 300) {
    s.resize(299);
    s = trim(s);
    s += '?';
  }
  return s;
}

Item build_choice_questions(Item item, std::uint64_t seed) {
  if (item.incorrect_answers.empty()) throw InvalidArgument("build_choice_questions: no incorrect answers");
  const std::uint64_t base = derive_seed(seed, fnv1a(item.id));
  auto make = [&](std::size_t n_incorrect, std::uint64_t s) {
    Rng rng(s);
    std::vector<std::size_t> idx(item.incorrect_answers.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    // Partial Fisher-Yates: the first n_incorrect entries are a uniform sample.
    for (std::size_t i = 0; i < n_incorrect; ++i) std::swap(idx[i], idx[i + uniform_index(rng, idx.size() - i)]);
    std::vector<std::pair<std::string, bool>> opts{{item.best_answer, true}};
    for (std::size_t i = 0; i < n_incorrect; ++i) opts.emplace_back(item.incorrect_answers[idx[i]], false);
    shuffle_in_place(opts, rng);
    ChoiceQuestion q;
    q.stem = item.neutral();
    for (std::size_t i = 0; i < opts.size(); ++i) {
      q.options.push_back(opts[i].first);
      if (opts[i].second) q.correct_label = static_cast<char>('A' + i);
    }
    return q;
  };
  item.binary = make(1, derive_seed(base, 1));
  item.mc = item.incorrect_answers.size() == 1 ? *item.binary
                                               : make(std::min<std::size_t>(3, item.incorrect_answers.size()),
                                                      derive_seed(base, 2));
  return item;
}

json parse_robust_json(std::string_view text) {
  auto try_parse = [](std::string_view s) -> std::optional<json> {
    try {
      return json::parse(s);
    } catch (const json::exception&) {
      return std::nullopt;
    }
  };
  if (auto j = try_parse(text)) return *j;
  const auto fence = text.find("```");
  if (fence != std::string_view::npos) {
    auto body = text.find('\n', fence);
    const auto end = body == std::string_view::npos ? body : text.find("```", body);
    if (end != std::string_view::npos)
      if (auto j = try_parse(text.substr(body + 1, end - body - 1))) return *j;
  }
  const auto open = text.find('{');
  const auto close = text.rfind('}');
  if (open != std::string_view::npos && close != std::string_view::npos && close > open)
    if (auto j = try_parse(text.substr(open, close - open + 1))) return *j;
  throw ParseError("no recoverable JSON in reply");
}

std::string_view bias_family_name(BiasFamily f) {
  switch (f) {
    case BiasFamily::confirmation: return "confirmation";
    case BiasFamily::stance: return "stance";
    case BiasFamily::negation: return "negation";
  }
  return "confirmation";
}

BiasFamily parse_bias_family(std::string_view name) {
  if (name == "confirmation") return BiasFamily::confirmation;
  if (name == "stance") return BiasFamily::stance;
  if (name == "negation") return BiasFamily::negation;
  throw InvalidArgument("unknown bias family: " + std::string(name));
}

std::pair<PromptMode, PromptMode> family_modes(BiasFamily f) {
  switch (f) {
    case BiasFamily::confirmation: return {PromptMode::cb_correct, PromptMode::cb_incorrect};
    case BiasFamily::stance: return {PromptMode::challenge, PromptMode::support};
    case BiasFamily::negation: return {PromptMode::negate, PromptMode::affirm};
  }
  return {PromptMode::cb_correct, PromptMode::cb_incorrect};
}

std::string rewrite_instruction(BiasFamily family, const std::string& neutral_prompt) {
  const auto [lo, hi] = family_modes(family);
  const std::string klo(prompt_mode_key(lo)), khi(prompt_mode_key(hi));
  std::string text = "Reply with a JSON object only, with exactly two string keys:\n  " + khi + "\n  " + klo + "\n\n";
  switch (family) {
    case BiasFamily::confirmation:
      text += "- " + klo + ": the question rewritten so that it takes the correct claim for granted and asks why it holds.\n"
              "- " + khi + ": the question rewritten so that it takes the incorrect claim for granted and asks why it holds.\n";
      break;
    case BiasFamily::stance:
      text += "- " + khi + ": a question asking for evidence in favour of the incorrect claim.\n"
              "- " + klo + ": a question asking for evidence against the incorrect claim.\n";
      break;
    case BiasFamily::negation:
      text += "- " + khi + ": a question asking why the incorrect claim is true.\n"
              "- " + klo + ": the same question with the claim negated.\n";
      break;
  }
  text += "Keep both rewrites short and end each with a question mark.\n\nExample input: Do bulls get angry at the "
          "colour red?\nExample claim: bulls are enraged by the colour red\n\nInput: " + neutral_prompt + "\nOutput:";
  return text;
}

json rewrite_request(const Item& item, BiasFamily family) {
  const auto [lo, hi] = family_modes(family);
  return {{"family", bias_family_name(family)},
          {"neutral_prompt", item.neutral()},
          {"best_answer", item.best_answer},
          {"incorrect_answer", item.incorrect_answers.empty() ? "" : item.incorrect_answers.front()},
          {"keys", {prompt_mode_key(hi), prompt_mode_key(lo)}},
          {"prompt", rewrite_instruction(family, item.neutral())}};
}

std::string TemplateRewriter::complete(const std::string& request) {
  const json req = json::parse(request);
  const BiasFamily family = parse_bias_family(req.at("family").get<std::string>());
  const std::string neutral = req.at("neutral_prompt").get<std::string>();
  std::string myth = as_clause(req.value("incorrect_answer", ""));
  if (myth.empty()) myth = as_clause(neutral);
  const std::string truth = as_clause(req.value("best_answer", neutral));
  const auto [lo, hi] = family_modes(family);
  json out;
  switch (family) {
    case BiasFamily::confirmation:
      out[std::string(prompt_mode_key(lo))] = "Given that " + truth + ", why is that the case?";
      out[std::string(prompt_mode_key(hi))] = "Given that " + myth + ", why is that the case?";
      break;
    case BiasFamily::stance:
      out[std::string(prompt_mode_key(hi))] = "What evidence supports the view that " + myth + "?";
      out[std::string(prompt_mode_key(lo))] = "What evidence challenges the view that " + myth + "?";
      break;
    case BiasFamily::negation:
      out[std::string(prompt_mode_key(hi))] = "Why is it true that " + myth + "?";
      out[std::string(prompt_mode_key(lo))] = "Why is it not true that " + myth + "?";
      break;
  }
  return out.dump();
}

RewriteOutcome rewrite_item(RewriterClient& client, const Item& item, BiasFamily family) {
  RewriteOutcome r{item, std::nullopt};
  const auto [lo, hi] = family_modes(family);
  std::string reply;
  try {
    reply = client.complete(rewrite_request(item, family).dump());
  } catch (const std::exception& e) {
    r.error = CorpusError{item.id, "rewrite", std::string("client failure: ") + e.what(), 0};
    return r;
  }
  try {
    const json j = parse_robust_json(reply);
    if (!j.is_object()) throw ParseError("reply is not an object");
    std::map<PromptMode, std::string> got;
    for (PromptMode m : {lo, hi}) {
      const std::string key(prompt_mode_key(m));
      if (!j.contains(key) || !j.at(key).is_string()) throw ParseError("reply lacks key " + key);
      const std::string p = sanitize_prompt(j.at(key).get<std::string>());
      if (p.empty()) throw ParseError("empty rewrite for " + key);
      got[m] = p;
    }
    for (auto& [m, p] : got) r.item.prompts[m] = p;
  } catch (const std::exception& e) {
    r.item = item;
    r.error = CorpusError{item.id, "rewrite", std::string("parse failure: ") + e.what(), 0};
  }
  return r;
}

}  // namespace molace
