#include "neox/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "json.hpp"

#include "neox/error.hpp"

namespace neox::eval {

Matrix TransformerLogits::logits(std::span<const TokenId> ids) const { return model::forward_logits(model_, ids); }

void EvalTask::validate() const {
  if (items.empty()) throw ValidationError("task " + name + " has no items");
  auto check = [&](const EvalItem& it, std::size_t i, const char* where) {
    if (kind == TaskKind::multiple_choice) {
      if (it.choices.empty()) throw ValidationError(std::string(where) + " " + std::to_string(i) + " has no choices");
      if (it.gold >= it.choices.size()) {
        throw ValidationError(std::string(where) + " " + std::to_string(i) + ": gold index " +
                              std::to_string(it.gold) + " out of range");
      }
    }
  };
  std::set<std::string> contexts;
  for (std::size_t i = 0; i < items.size(); ++i) {
    check(items[i], i, "item");
    contexts.insert(items[i].context);
  }
  for (std::size_t i = 0; i < fewshot_pool.size(); ++i) {
    check(fewshot_pool[i], i, "exemplar");
    if (contexts.count(fewshot_pool[i].context)) {
      throw ValidationError("exemplar " + std::to_string(i) + " duplicates an evaluation item");
    }
  }
}

const std::string& gold_text(const EvalItem& item, TaskKind kind) {
  return kind == TaskKind::multiple_choice ? item.choices.at(item.gold) : item.answer;
}

std::string build_prompt(const EvalItem& item, std::span<const EvalItem> exemplars, std::size_t k,
                         const PromptTemplate& tmpl, TaskKind kind) {
  if (k > exemplars.size()) {
    throw ValidationError("requested " + std::to_string(k) + " shots but the pool has " +
                          std::to_string(exemplars.size()));
  }
  std::string out;
  for (std::size_t i = 0; i < k; ++i) {
    out += exemplars[i].context + tmpl.answer_prefix + gold_text(exemplars[i], kind) + tmpl.separator;
  }
  out += item.context;
  return out;
}

namespace {

double log_softmax_at(std::span<const double> row, std::size_t idx) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : row) mx = std::max(mx, v);
  double sum = 0.0;
  for (double v : row) sum += std::exp(v - mx);
  return row[idx] - mx - std::log(sum);
}

std::size_t argmax_row(std::span<const double> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

}  // namespace

double score_tokens(const LogitModel& m, std::span<const TokenId> prompt, std::span<const TokenId> continuation) {
  if (continuation.empty()) throw ValidationError("continuation is empty");
  if (prompt.empty()) throw ValidationError("prompt is empty");
  if (continuation.size() >= m.max_context()) throw ValidationError("continuation exceeds the model context");
  std::vector<TokenId> seq(prompt.begin(), prompt.end());
  seq.insert(seq.end(), continuation.begin(), continuation.end());
  const std::size_t drop = seq.size() > m.max_context() ? seq.size() - m.max_context() : 0;
  const std::span<const TokenId> window(seq.data() + drop, seq.size() - drop);
  const Matrix logits = m.logits(window);
  const std::size_t first = window.size() - continuation.size();
  double total = 0.0;
  for (std::size_t i = 0; i < continuation.size(); ++i) {
    total += log_softmax_at(logits.row(first + i - 1), static_cast<std::size_t>(continuation[i]));
  }
  return total;
}

double score_choice(const LogitModel& m, const tok::TokenizerModel& tk, const std::string& prompt,
                    const std::string& continuation) {
  const auto p = tk.encode(prompt);
  const auto c = tk.encode(continuation, {.at_string_start = false});
  return score_tokens(m, p, c);
}

std::vector<TokenId> generate_greedy_ids(const LogitModel& m, std::span<const TokenId> prompt,
                                         std::size_t max_tokens) {
  if (max_tokens == 0) throw ValidationError("max_tokens must be >= 1");
  if (prompt.empty()) throw ValidationError("prompt is empty");
  std::vector<TokenId> seq(prompt.begin(), prompt.end()), out;
  for (std::size_t i = 0; i < max_tokens; ++i) {
    const std::size_t drop = seq.size() > m.max_context() ? seq.size() - m.max_context() : 0;
    const Matrix logits = m.logits(std::span<const TokenId>(seq).subspan(drop));
    const auto next = static_cast<TokenId>(argmax_row(logits.row(logits.rows - 1)));
    out.push_back(next);
    seq.push_back(next);
  }
  return out;
}

Generation generate_greedy(const LogitModel& m, const tok::TokenizerModel& tk, const std::string& prompt,
                           std::size_t max_tokens, const std::string& stop) {
  if (max_tokens == 0) throw ValidationError("max_tokens must be >= 1");
  std::vector<TokenId> seq = tk.encode(prompt);
  if (seq.empty()) throw ValidationError("prompt is empty");
  Generation g;
  const tok::EncodeOptions mid{.at_string_start = false};
  for (std::size_t i = 0; i < max_tokens; ++i) {
    const std::size_t drop = seq.size() > m.max_context() ? seq.size() - m.max_context() : 0;
    const Matrix logits = m.logits(std::span<const TokenId>(seq).subspan(drop));
    const auto next = static_cast<TokenId>(argmax_row(logits.row(logits.rows - 1)));
    g.ids.push_back(next);
    seq.push_back(next);
    g.text = tk.decode(g.ids, mid);
    if (!stop.empty()) {
      if (const auto pos = g.text.find(stop); pos != std::string::npos) {
        g.text.erase(pos);
        return g;
      }
    }
  }
  return g;
}

double standard_error(double accuracy, std::size_t n) {
  if (n == 0) throw ValidationError("standard error of an empty sample");
  return std::sqrt(accuracy * (1.0 - accuracy) / static_cast<double>(n));
}

std::size_t argmax_choice(std::span<const double> scores) {
  if (scores.empty()) throw ValidationError("no choices to rank");
  return argmax_row(scores);
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

EvalResult evaluate(const LogitModel& m, const tok::TokenizerModel& tk, const EvalTask& task, std::size_t k,
                    const EvalOptions& opts) {
  task.validate();
  std::size_t correct = 0;
  const tok::EncodeOptions mid{.at_string_start = false};
  for (const auto& item : task.items) {
    const std::string prompt = build_prompt(item, task.fewshot_pool, k, opts.tmpl, task.kind);
    if (task.kind == TaskKind::multiple_choice) {
      const auto p = tk.encode(prompt);
      std::vector<double> scores;
      for (const auto& choice : item.choices) {
        const auto c = tk.encode(opts.tmpl.answer_prefix + choice, mid);
        double s = score_tokens(m, p, c);
        if (opts.length_normalize) s /= static_cast<double>(c.size());
        scores.push_back(s);
      }
      correct += argmax_choice(scores) == item.gold ? 1 : 0;
    } else {
      const auto gen = generate_greedy(m, tk, prompt, opts.max_generation_tokens, opts.tmpl.stop);
      correct += trim(gen.text) == trim(item.answer) ? 1 : 0;
    }
  }
  EvalResult r;
  r.task = task.name;
  r.k = k;
  r.n = task.items.size();
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.n);
  r.stderr_ = standard_error(r.accuracy, r.n);
  return r;
}

std::string format_acc(const EvalResult& r) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f \xC2\xB1 %.3f", r.accuracy, r.stderr_);
  return buf;
}

std::string format_results_table(std::span<const EvalResult> results) {
  std::ostringstream os;
  os << "task\tshots\tn\tacc \xC2\xB1 stderr\t95% interval\n";
  for (const auto& r : results) {
    char iv[64];
    std::snprintf(iv, sizeof iv, "[%.3f, %.3f]", r.accuracy - 2 * r.stderr_, r.accuracy + 2 * r.stderr_);
    os << r.task << '\t' << r.k << '\t' << r.n << '\t' << format_acc(r) << '\t' << iv << '\n';
  }
  return os.str();
}

std::string format_result_record(const EvalResult& r) {
  return nlohmann::json{{"task", r.task},
                        {"k", r.k},
                        {"n", r.n},
                        {"accuracy", r.accuracy},
                        {"stderr", r.stderr_},
                        {"ci_low", r.accuracy - 2 * r.stderr_},
                        {"ci_high", r.accuracy + 2 * r.stderr_}}
      .dump();
}

DeltaReport fewshot_delta(std::span<const EvalResult> zero, std::span<const EvalResult> five) {
  bool same = zero.size() == five.size();
  for (std::size_t i = 0; same && i < zero.size(); ++i) same = zero[i].task == five[i].task;
  if (!same) {
    std::set<std::string> a, b;
    for (const auto& r : zero) a.insert(r.task);
    for (const auto& r : five) b.insert(r.task);
    std::string diff;
    for (const auto& t : a) {
      if (!b.count(t)) diff += " zero-only:" + t;
    }
    for (const auto& t : b) {
      if (!a.count(t)) diff += " five-only:" + t;
    }
    if (diff.empty()) diff = " same tasks in a different order";
    throw ValidationError("task lists differ:" + diff);
  }
  if (zero.empty()) throw ValidationError("no tasks to compare");
  DeltaReport d;
  double sum = 0.0;
  for (std::size_t i = 0; i < zero.size(); ++i) {
    const double delta = five[i].accuracy - zero[i].accuracy;
    d.per_task.emplace_back(zero[i].task, delta);
    sum += delta;
  }
  d.mean = sum / static_cast<double>(zero.size());
  return d;
}

namespace {

EvalItem parse_item(const nlohmann::json& j, std::size_t ln, TaskKind& kind, bool& kind_set) {
  EvalItem it;
  if (!j["context"].is_string()) throw ParseError("context must be a string", ln);
  it.context = j["context"].get<std::string>();
  TaskKind k;
  if (j.contains("choices")) {
    if (!j["choices"].is_array()) throw ParseError("choices must be an array of strings", ln);
    for (const auto& c : j["choices"]) {
      if (!c.is_string()) throw ParseError("choices must be an array of strings", ln);
      it.choices.push_back(c.get<std::string>());
    }
    if (!j.contains("gold") || !j["gold"].is_number_unsigned()) {
      throw ParseError("multiple-choice record needs a non-negative integer gold", ln);
    }
    it.gold = j["gold"].get<std::size_t>();
    k = TaskKind::multiple_choice;
  } else if (j.contains("answer")) {
    if (!j["answer"].is_string()) throw ParseError("answer must be a string", ln);
    it.answer = j["answer"].get<std::string>();
    k = TaskKind::exact_match;
  } else {
    throw ParseError("record needs either choices+gold or answer", ln);
  }
  if (kind_set && k != kind) throw ParseError("task mixes multiple-choice and exact-match records", ln);
  kind = k;
  kind_set = true;
  return it;
}

}  // namespace

EvalTask parse_task(const std::string& text, const std::string& default_name) {
  EvalTask task;
  task.name = default_name;
  bool kind_set = false;
  std::istringstream in(text);
  std::string line;
  std::size_t ln = 0;
  while (std::getline(in, line)) {
    ++ln;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(e.what(), ln);
    }
    if (!j.is_object()) throw ParseError("record is not an object", ln);
    if (!j.contains("context")) {
      if (j.contains("name")) task.name = j["name"].get<std::string>();
      if (j.contains("version")) task.version = j["version"].get<int>();
      continue;
    }
    EvalItem it = parse_item(j, ln, task.kind, kind_set);
    if (j.value("split", std::string()) == "fewshot") task.fewshot_pool.push_back(std::move(it));
    else task.items.push_back(std::move(it));
  }
  task.validate();
  return task;
}

EvalTask load_task(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw RuntimeError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_task(ss.str(), path.stem().string());
}

std::vector<EvalResult> load_results(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw RuntimeError("cannot open " + path.string());
  std::vector<EvalResult> out;
  std::string line;
  std::size_t ln = 0;
  while (std::getline(in, line)) {
    ++ln;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      EvalResult r;
      r.task = j.at("task").get<std::string>();
      r.k = j.value("k", std::size_t{0});
      r.n = j.value("n", std::size_t{0});
      r.accuracy = j.at("accuracy").get<double>();
      r.stderr_ = j.value("stderr", 0.0);
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(e.what(), ln);
    }
  }
  return out;
}

}  // namespace neox::eval
