#pragma once

// Scoring of predictions and aggregation into summary tables.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "molace/corpus.hpp"

namespace molace {

enum class Verdict { correct, incorrect, undefined };
std::string_view verdict_name(Verdict v);
Verdict parse_verdict(std::string_view s);

struct Prediction {
  std::string item_id;
  PromptMode mode = PromptMode::neutral;
  QuestionType type = QuestionType::open;
  std::string method;
  std::string prompt;
  std::string response;
  std::optional<std::string> prediction;  // extracted letter or final answer
  Verdict verdict = Verdict::undefined;
  std::optional<std::string> error;

  nlohmann::json to_json() const;
  static Prediction from_json(const nlohmann::json& j);
};

/// First committed option letter: optional "(", a letter A-D, optional ")", then a
/// delimiter (. : ) or whitespace) or end of text. The letter must start a word. A
/// lowercase letter followed only by whitespace counts only at the start of a line.
std::optional<char> extract_choice_letter(std::string_view text);

Verdict score_choice(std::string_view response, const ChoiceQuestion& question);

class Judge {
 public:
  virtual ~Judge() = default;
  virtual std::string name() const = 0;
  /// Throws on failure.
  virtual bool judge(const std::string& response, const std::string& best,
                     const std::vector<std::string>& incorrect) = 0;
};

/// Lowercase, punctuation to spaces, split on whitespace.
std::vector<std::string> judge_tokens(std::string_view text);
/// Multiset token F1; 0 when either side is empty.
double token_f1(std::string_view a, std::string_view b);

class LexicalJudge final : public Judge {
 public:
  explicit LexicalJudge(double threshold = 0.6) : threshold_(threshold) {}
  std::string name() const override { return "lexical-f1"; }
  bool judge(const std::string& response, const std::string& best, const std::vector<std::string>& incorrect) override;

 private:
  double threshold_;
};

/// Judge failures count as incorrect; the message goes to `error` when given.
Verdict score_open(Judge& judge, const std::string& response, const std::string& best,
                   const std::vector<std::string>& incorrect, std::string* error = nullptr);

struct PairwiseTable {
  double both = 0.0, exactly_one = 0.0, both_incorrect = 0.0;  // percentages
  std::size_t items = 0;
  nlohmann::json to_json() const;
};

struct TripletTable {
  double all = 0.0, exactly_two = 0.0, exactly_one = 0.0, none = 0.0;  // percentages
  std::size_t items = 0;
  nlohmann::json to_json() const;
};

/// Over items whose verdicts are defined in every vector.
PairwiseTable pairwise_categories(const std::vector<Verdict>& a, const std::vector<Verdict>& b);
TripletTable triplet_categories(const std::vector<Verdict>& a, const std::vector<Verdict>& b,
                                const std::vector<Verdict>& c);

struct AlphaCoverage {
  std::vector<double> per_alpha;
  double coverage = 0.0;
  std::vector<std::size_t> counts;  // counts[k] = rows with exactly k correct alphas
  nlohmann::json to_json(const std::vector<double>& alphas = {}) const;
};

AlphaCoverage alpha_coverage(const std::vector<std::vector<bool>>& correctness);

struct RunSummary {
  nlohmann::json accuracy;   // mode -> type -> {accuracy, correct, defined, undefined}
  nlohmann::json pairwise;   // family -> type -> PairwiseTable
  nlohmann::json triplet;    // family -> type -> TripletTable (neutral, leaning correct, leaning incorrect)
  nlohmann::json alpha;      // optional alpha statistics
  std::string fingerprint;
  nlohmann::json seeds;

  nlohmann::json to_json() const;
};

RunSummary summarize(const std::vector<Prediction>& predictions, const std::string& fingerprint,
                     const nlohmann::json& seeds);

struct ResultPaths {
  std::filesystem::path results, summary;
};

/// results.json (per item, per mode, per type) and summary.json, plus one CSV per table.
/// Both JSON files carry the fingerprint, seeds and a "created_at" timestamp.
ResultPaths write_results(const std::vector<Prediction>& predictions, const RunSummary& summary,
                          const std::filesystem::path& dir);
std::vector<Prediction> read_results(const std::filesystem::path& results_json);

}  // namespace molace
