#include "neox/tokscope.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>

#include "json.hpp"

#include "neox/error.hpp"

namespace neox::tokscope {

bool is_whitespace_token(std::string_view bytes) {
  return !bytes.empty() && std::all_of(bytes.begin(), bytes.end(), [](char c) {
    return tok::is_whitespace_byte(static_cast<unsigned char>(c));
  });
}

std::uint64_t count_tokens(const CorpusComponent& component, const tok::TokenizerModel& model,
                           bool exclude_whitespace) {
  std::vector<bool> whitespace;
  if (exclude_whitespace) {
    whitespace.resize(model.vocab_size());
    for (std::size_t id = 0; id < model.vocab_size(); ++id) whitespace[id] = is_whitespace_token(model.vocab()[id]);
  }
  std::uint64_t total = 0;
  for (const auto& doc : component.documents) {
    const auto ids = model.encode(doc);
    if (!exclude_whitespace) {
      total += ids.size();
      continue;
    }
    for (auto id : ids) total += whitespace[static_cast<std::size_t>(id)] ? 0 : 1;
  }
  return total;
}

double CountRow::ratio() const {
  if (count_a == 0) return count_b == 0 ? 1.0 : 0.0;
  return static_cast<double>(count_b) / static_cast<double>(count_a);
}

CountReport report_from_counts(std::vector<CountRow> rows) {
  CountReport r;
  r.totals.component = "Total";
  for (const auto& row : rows) {
    r.totals.count_a += row.count_a;
    r.totals.count_b += row.count_b;
  }
  r.rows = std::move(rows);
  return r;
}

CountReport ratio_report(std::span<const CorpusComponent> corpus, const tok::TokenizerModel& model_a,
                         const tok::TokenizerModel& model_b, bool exclude_whitespace) {
  std::vector<CountRow> rows;
  rows.reserve(corpus.size());
  for (const auto& c : corpus) {
    rows.push_back({c.name, count_tokens(c, model_a, exclude_whitespace), count_tokens(c, model_b, exclude_whitespace)});
  }
  return report_from_counts(std::move(rows));
}

std::string with_thousands(std::uint64_t n) {
  std::string digits = std::to_string(n);
  std::string out;
  for (std::size_t i = 0; i < digits.size(); ++i) {
    if (i != 0 && (digits.size() - i) % 3 == 0) out.push_back(',');
    out.push_back(digits[i]);
  }
  return out;
}

std::string format_ratio(double r) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.5f", r);
  return buf;
}

std::string format_table(const CountReport& report, std::string_view label_a, std::string_view label_b) {
  std::size_t name_w = 5;
  for (const auto& row : report.rows) name_w = std::max(name_w, row.component.size());
  std::ostringstream os;
  auto line = [&](std::string_view name, std::string_view a, std::string_view b, std::string_view ratio) {
    os << name << std::string(name_w - name.size() + 2, ' ');
    os << std::string(a.size() < 15 ? 15 - a.size() : 0, ' ') << a << "  ";
    os << std::string(b.size() < 15 ? 15 - b.size() : 0, ' ') << b << "  " << ratio << '\n';
  };
  line("", label_a, label_b, std::string(label_b) + "/" + std::string(label_a));
  for (const auto& row : report.rows) {
    line(row.component, with_thousands(row.count_a), with_thousands(row.count_b), format_ratio(row.ratio()));
  }
  line(report.totals.component, with_thousands(report.totals.count_a), with_thousands(report.totals.count_b),
       format_ratio(report.totals.ratio()));
  return os.str();
}

std::string format_records(const CountReport& report) {
  std::ostringstream os;
  auto rec = [&os](const CountRow& row, bool total) {
    nlohmann::json j{{"component", row.component},
                     {"count_a", row.count_a},
                     {"count_b", row.count_b},
                     {"ratio", row.ratio()},
                     {"total", total}};
    os << j.dump() << '\n';
  };
  for (const auto& row : report.rows) rec(row, false);
  rec(report.totals, true);
  return os.str();
}

bool mostly_letters(std::string_view bytes) {
  if (bytes.empty()) return false;
  std::size_t letters = 0;
  for (unsigned char c : bytes) letters += ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z')) ? 1 : 0;
  return 2 * letters >= bytes.size();
}

std::vector<LongToken> longest_tokens(const tok::TokenizerModel& model, std::size_t k) {
  if (k == 0) throw ValidationError("longest_tokens: k must be >= 1");
  std::vector<LongToken> pool;
  for (std::size_t id = 0; id < model.vocab_size(); ++id) {
    if (mostly_letters(model.vocab()[id])) pool.push_back({static_cast<tok::TokenId>(id), model.vocab()[id]});
  }
  const std::size_t n = std::min(k, pool.size());
  std::partial_sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n), pool.end(),
                    [](const LongToken& a, const LongToken& b) {
                      if (a.bytes.size() != b.bytes.size()) return a.bytes.size() > b.bytes.size();
                      return a.id < b.id;
                    });
  pool.resize(n);
  return pool;
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::size_t i = 0;
  auto is_delim = [](unsigned char c) { return tok::is_whitespace_byte(c) || tok::is_ascii_punctuation(c); };
  while (i < text.size()) {
    while (i < text.size() && is_delim(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !is_delim(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) words.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return words;
}

WorstCaseReport worst_case_words(const CorpusComponent& component, const tok::TokenizerModel& model_a,
                                 const tok::TokenizerModel& model_b, std::size_t min_count, std::size_t top) {
  std::map<std::string, std::uint64_t> freq;
  for (const auto& doc : component.documents) {
    for (auto& w : split_words(doc)) ++freq[std::move(w)];
  }
  const tok::EncodeOptions continuation{.at_string_start = false};
  std::vector<WordDiscrepancy> all;
  for (const auto& [word, f] : freq) {
    if (f < min_count) continue;
    const std::string prefixed = " " + word;
    all.push_back({word, f, model_a.encode(prefixed, continuation), model_b.encode(prefixed, continuation)});
  }

  WorstCaseReport report;
  auto ranked = [&](bool for_a) {
    std::vector<WordDiscrepancy> v;
    for (const auto& w : all) {
      if (for_a ? w.difference() > 0 : w.difference() < 0) v.push_back(w);
    }
    std::stable_sort(v.begin(), v.end(), [for_a](const WordDiscrepancy& x, const WordDiscrepancy& y) {
      const long long dx = for_a ? x.difference() : -x.difference();
      const long long dy = for_a ? y.difference() : -y.difference();
      if (dx != dy) return dx > dy;
      return x.word < y.word;
    });
    if (v.size() > top) v.resize(top);
    return v;
  };
  report.worst_for_a = ranked(true);
  report.worst_for_b = ranked(false);
  return report;
}

}  // namespace neox::tokscope
