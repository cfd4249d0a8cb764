#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "neox/corpus.hpp"
#include "neox/tokenizer.hpp"

// Side-by-side tokenizer statistics: per-component token counts and ratios,
// longest vocabulary entries, and the words two tokenizers disagree on most.
namespace neox::tokscope {

// A token counts as whitespace when every one of its bytes is whitespace.
bool is_whitespace_token(std::string_view bytes);

std::uint64_t count_tokens(const CorpusComponent& component, const tok::TokenizerModel& model,
                           bool exclude_whitespace);

struct CountRow {
  std::string component;
  std::uint64_t count_a = 0;
  std::uint64_t count_b = 0;
  // count_b / count_a
  double ratio() const;
};

struct CountReport {
  std::vector<CountRow> rows;
  CountRow totals;  // column sums; its ratio is recomputed from the sums
};

CountReport ratio_report(std::span<const CorpusComponent> corpus, const tok::TokenizerModel& model_a,
                         const tok::TokenizerModel& model_b, bool exclude_whitespace);

// Builds a report from already-known counts.
CountReport report_from_counts(std::vector<CountRow> rows);

// "383,111,734"
std::string with_thousands(std::uint64_t n);
// Ratio to five decimals, e.g. "0.89501".
std::string format_ratio(double r);

std::string format_table(const CountReport& report, std::string_view label_a, std::string_view label_b);
// One JSON object per line: {"component","count_a","count_b","ratio"}, totals last.
std::string format_records(const CountReport& report);

struct LongToken {
  tok::TokenId id;
  std::string bytes;
};

// True when at least half of the token's bytes are ASCII letters.
bool mostly_letters(std::string_view bytes);

// Top-k entries by byte length among tokens that are mostly letters; ties by
// ascending id.
std::vector<LongToken> longest_tokens(const tok::TokenizerModel& model, std::size_t k);

struct WordDiscrepancy {
  std::string word;
  std::uint64_t frequency = 0;
  std::vector<tok::TokenId> tokens_a;
  std::vector<tok::TokenId> tokens_b;
  long long difference() const {
    return static_cast<long long>(tokens_a.size()) - static_cast<long long>(tokens_b.size());
  }
};

struct WorstCaseReport {
  // Largest len(a) - len(b) first: words model_a splits worst.
  std::vector<WordDiscrepancy> worst_for_a;
  // Largest len(b) - len(a) first.
  std::vector<WordDiscrepancy> worst_for_b;
};

// Words are maximal runs of bytes that are neither whitespace nor one of the
// 32 ASCII punctuation characters.
std::vector<std::string> split_words(std::string_view text);

// Words with frequency >= min_count inside the component that one model splits
// into strictly more tokens than the other, each encoded in its
// space-prefixed form. Ties rank by word bytes so the result does not depend
// on document order.
WorstCaseReport worst_case_words(const CorpusComponent& component, const tok::TokenizerModel& model_a,
                                 const tok::TokenizerModel& model_b, std::size_t min_count, std::size_t top);

}  // namespace neox::tokscope
