#pragma once

// Biased-prompt corpora: items, choice questions, ingestion, and prompt rewriting.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "molace/common.hpp"

namespace molace {

enum class PromptMode { neutral, cb_correct, cb_incorrect, support, challenge, affirm, negate };

inline constexpr PromptMode kAllPromptModes[] = {PromptMode::neutral, PromptMode::cb_correct, PromptMode::cb_incorrect,
                                                 PromptMode::support, PromptMode::challenge,  PromptMode::affirm,
                                                 PromptMode::negate};

std::string_view prompt_mode_name(PromptMode m);
PromptMode parse_prompt_mode(std::string_view name);
/// Field name in corpus records ("neutral_prompt", "confirmation_bias_correct_prompt", ...).
std::string_view prompt_mode_key(PromptMode m);
/// +1 when the framing leans toward the incorrect claim, -1 toward the correct one, 0 for neutral.
int prompt_mode_lean(PromptMode m);

enum class QuestionType { open, binary, mc };
std::string_view question_type_name(QuestionType t);
QuestionType parse_question_type(std::string_view name);

struct ChoiceQuestion {
  std::string stem;
  std::vector<std::string> options;  // labeled A, B, ... in order
  char correct_label = 'A';

  void validate() const;
  std::size_t correct_index() const { return static_cast<std::size_t>(correct_label - 'A'); }
  /// Stem (or `stem_override`), then one "(X) option" line per option.
  std::string render(const std::optional<std::string>& stem_override = std::nullopt) const;
  nlohmann::json to_json() const;
  static ChoiceQuestion from_json(const nlohmann::json& j);
  bool operator==(const ChoiceQuestion&) const = default;
};

struct Item {
  std::string id;
  std::map<PromptMode, std::string> prompts;  // neutral always present
  std::string best_answer;
  std::vector<std::string> incorrect_answers;
  std::optional<ChoiceQuestion> binary, mc;

  const std::string& neutral() const { return prompts.at(PromptMode::neutral); }
  std::optional<std::string> prompt(PromptMode m) const;
  bool eligible() const { return !incorrect_answers.empty(); }
  void validate() const;

  nlohmann::json to_json() const;
  static Item from_json(const nlohmann::json& j);
  bool operator==(const Item&) const = default;
};

struct CorpusError {
  std::string item_id;
  std::string stage;
  std::string message;
  std::size_t line = 0;  // 1-based record line, 0 when unknown

  nlohmann::json to_json() const;
};

struct CorpusLoad {
  std::vector<Item> items;
  std::vector<CorpusError> errors;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// JSON array or JSONL. Invalid records go to the error report.
CorpusLoad parse_corpus(std::string_view text);
CorpusLoad load_corpus(const std::filesystem::path& path);
/// JSONL, one item per line.
void save_corpus(const std::vector<Item>& items, const std::filesystem::path& path);

/// The bundled 15-item sample corpus.
std::string_view bundled_corpus_text();
std::vector<Item> bundled_corpus();

/// Trim, strip HTML tags, quotes and meta prefixes ("Task:", "Prompt:", ...), collapse
/// whitespace, cap at 300 characters and end with "?".
std::string sanitize_prompt(std::string_view text);

/// Binary: best + one sampled incorrect. Multiple choice: best + up to three sampled
/// incorrects. Options shuffled; both draws come from seed and item id.
Item build_choice_questions(Item item, std::uint64_t seed);

class ParseError : public ComputationError {
 public:
  using ComputationError::ComputationError;
};

/// Whole text, then the first fenced code block, then the first "{" to last "}" slice.
nlohmann::json parse_robust_json(std::string_view text);

enum class BiasFamily { confirmation, stance, negation };
std::string_view bias_family_name(BiasFamily f);
BiasFamily parse_bias_family(std::string_view name);
/// The two prompt modes a family fills: (leaning correct, leaning incorrect).
std::pair<PromptMode, PromptMode> family_modes(BiasFamily f);

class RewriterClient {
 public:
  virtual ~RewriterClient() = default;
  /// Request and reply are JSON text.
  virtual std::string complete(const std::string& request) = 0;
};

/// Instruction text sent to the rewriter for a family.
std::string rewrite_instruction(BiasFamily family, const std::string& neutral_prompt);
/// {"family", "neutral_prompt", "best_answer", "incorrect_answer", "keys", "prompt"}.
nlohmann::json rewrite_request(const Item& item, BiasFamily family);

/// Offline rewriter that wraps the hypothesis in fixed support/challenge/affirm/negate patterns.
class TemplateRewriter final : public RewriterClient {
 public:
  std::string complete(const std::string& request) override;
};

struct RewriteOutcome {
  Item item;
  std::optional<CorpusError> error;
};

RewriteOutcome rewrite_item(RewriterClient& client, const Item& item, BiasFamily family);

}  // namespace molace
