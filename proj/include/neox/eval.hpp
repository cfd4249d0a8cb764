#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "neox/model.hpp"
#include "neox/tokenizer.hpp"

// Few-shot evaluation: log-likelihood multiple choice, greedy exact match,
// accuracy with standard errors, and zero- vs five-shot deltas.
namespace neox::eval {

using model::Matrix;
using tok::TokenId;

// Anything that maps a token sequence to per-position next-token logits.
class LogitModel {
 public:
  virtual ~LogitModel() = default;
  virtual std::size_t vocab_size() const = 0;
  virtual std::size_t max_context() const = 0;
  // T x vocab_size.
  virtual Matrix logits(std::span<const TokenId> ids) const = 0;
};

class TransformerLogits final : public LogitModel {
 public:
  explicit TransformerLogits(const model::LMModel& m) : model_(m) {}
  std::size_t vocab_size() const override { return model_.config().vocab_size; }
  std::size_t max_context() const override { return model_.config().max_positions; }
  Matrix logits(std::span<const TokenId> ids) const override;

 private:
  const model::LMModel& model_;
};

// All-zero logits: every token equally likely.
class UniformLogits final : public LogitModel {
 public:
  UniformLogits(std::size_t vocab, std::size_t max_context = 4096) : vocab_(vocab), max_context_(max_context) {}
  std::size_t vocab_size() const override { return vocab_; }
  std::size_t max_context() const override { return max_context_; }
  Matrix logits(std::span<const TokenId> ids) const override { return Matrix(ids.size(), vocab_); }

 private:
  std::size_t vocab_;
  std::size_t max_context_;
};

enum class TaskKind { multiple_choice, exact_match };

struct EvalItem {
  std::string context;
  std::vector<std::string> choices;  // multiple choice
  std::size_t gold = 0;
  std::string answer;  // exact match
};

struct EvalTask {
  std::string name;
  TaskKind kind = TaskKind::multiple_choice;
  std::vector<EvalItem> items;
  std::vector<EvalItem> fewshot_pool;
  int version = 0;

  // gold < #choices, non-empty items, pool disjoint from items.
  void validate() const;
};

struct PromptTemplate {
  std::string answer_prefix = " ";  // between a context and its answer
  std::string separator = "\n";  // between rendered exemplars and the query
  std::string stop = "\n";  // ends exact-match generations
};

// Gold continuation text of an item, without the answer prefix.
const std::string& gold_text(const EvalItem& item, TaskKind kind);

// The first k exemplars rendered as context + prefix + gold, each followed
// by the separator, then the query context. k = 0 gives the bare context.
std::string build_prompt(const EvalItem& item, std::span<const EvalItem> exemplars, std::size_t k,
                         const PromptTemplate& tmpl = {}, TaskKind kind = TaskKind::multiple_choice);

// Sum of log p(cont[i] | prompt, cont[<i]). Prompt must be non-empty; the
// sequence is left-truncated to the model's context if needed.
double score_tokens(const LogitModel& m, std::span<const TokenId> prompt, std::span<const TokenId> continuation);

// Text form: the prompt is encoded at string start, the continuation as a
// mid-document fragment.
double score_choice(const LogitModel& m, const tok::TokenizerModel& tk, const std::string& prompt,
                    const std::string& continuation);

struct Generation {
  std::vector<TokenId> ids;
  std::string text;
};

// Argmax decoding (ties to the lowest id) until `stop` appears in the decoded
// text or max_tokens are produced. Text is cut before the stop sequence.
Generation generate_greedy(const LogitModel& m, const tok::TokenizerModel& tk, const std::string& prompt,
                           std::size_t max_tokens, const std::string& stop);
std::vector<TokenId> generate_greedy_ids(const LogitModel& m, std::span<const TokenId> prompt,
                                         std::size_t max_tokens);

struct EvalOptions {
  PromptTemplate tmpl;
  bool length_normalize = false;  // divide choice scores by token count
  std::size_t max_generation_tokens = 32;
};

struct EvalResult {
  std::string task;
  std::size_t k = 0;
  std::size_t n = 0;
  double accuracy = 0.0;
  double stderr_ = 0.0;
};

double standard_error(double accuracy, std::size_t n);

// Index of the largest score; ties go to the lowest index.
std::size_t argmax_choice(std::span<const double> scores);

EvalResult evaluate(const LogitModel& m, const tok::TokenizerModel& tk, const EvalTask& task, std::size_t k,
                    const EvalOptions& opts = {});

// "0.500 ± 0.049"
std::string format_acc(const EvalResult& r);
// Header plus one row per result: acc ± stderr and the acc ± 2·stderr interval.
std::string format_results_table(std::span<const EvalResult> results);
std::string format_result_record(const EvalResult& r);

struct DeltaReport {
  double mean = 0.0;
  std::vector<std::pair<std::string, double>> per_task;
};

// Mean over tasks of five.accuracy - zero.accuracy. Both lists must name the
// same tasks in the same order.
DeltaReport fewshot_delta(std::span<const EvalResult> zero, std::span<const EvalResult> five);

// JSONL task file. Records carry `context` plus either `choices` and `gold`
// or `answer`; `"split": "fewshot"` moves a record to the exemplar pool. An
// optional record without `context` sets `name` and `version`.
EvalTask load_task(const std::filesystem::path& path);
EvalTask parse_task(const std::string& text, const std::string& default_name);

// JSONL of {task, k, n?, accuracy, stderr}.
std::vector<EvalResult> load_results(const std::filesystem::path& path);

}  // namespace neox::eval
