// One PASS/FAIL line per acceptance criterion. Exit status is nonzero when
// any criterion fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "naive_model.hpp"
#include "neox/config.hpp"
#include "neox/corpus.hpp"
#include "neox/eval.hpp"
#include "neox/infra.hpp"
#include "neox/model.hpp"
#include "neox/tokenizer.hpp"
#include "neox/tokscope.hpp"
#include "neox/trainer.hpp"

using namespace neox;
using model::Matrix;
using tok::TokenId;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;
  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

using Clock = std::chrono::steady_clock;

int report(int id, const std::string& name, double limit_s, const std::function<void(Outcome&)>& body) {
  Outcome o;
  const auto t0 = Clock::now();
  try {
    body(o);
  } catch (const std::exception& e) {
    o.pass = false;
    o.detail << " [exception: " << e.what() << "]";
  }
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  if (limit_s > 0 && secs > limit_s) {
    o.pass = false;
    o.detail << " [over time limit " << limit_s << " s]";
  }
  std::printf("%s %2d %s:%s (%.2f s)\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), o.detail.str().c_str(), secs);
  std::fflush(stdout);
  return o.pass ? 0 : 1;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double max_abs_diff(const naive::Mat& a, const Matrix& b) {
  double m = 0;
  for (std::size_t r = 0; r < b.rows; ++r)
    for (std::size_t c = 0; c < b.cols; ++c) m = std::max(m, std::abs(a[r][c] - b.at(r, c)));
  return m;
}

void rotary(Outcome& o) {
  std::mt19937_64 rng(101);
  std::normal_distribution<double> n;
  const std::size_t head_dim = 32, max_pos = 8192;
  double worst_shift = 0, worst_norm = 0;
  bool identity = true;
  for (std::size_t d_rot : {4, 8, 24}) {
    const model::RotaryCache cache(head_dim, static_cast<double>(d_rot) / head_dim, max_pos, 10000.0);
    o.require(cache.rotary_dims() == d_rot, "rotary dims " + std::to_string(d_rot));
    for (int trial = 0; trial < 1000; ++trial) {
      std::vector<double> q(head_dim), k(head_dim);
      for (double& x : q) x = n(rng);
      for (double& x : k) x = n(rng);
      const std::size_t m = rng() % 2048, p = rng() % 2048, off = rng() % 4096;
      const auto a = dot(model::apply_rotary(q, m, cache), model::apply_rotary(k, p, cache));
      const auto b = dot(model::apply_rotary(q, m + off, cache), model::apply_rotary(k, p + off, cache));
      worst_shift = std::max(worst_shift, std::abs(a - b));

      identity = identity && model::apply_rotary(q, 0, cache) == q;
      const auto r = model::apply_rotary(q, m + off, cache);
      const double before = std::sqrt(dot(std::span(q).first(d_rot), std::span(q).first(d_rot)));
      const double after = std::sqrt(dot(std::span(r).first(d_rot), std::span(r).first(d_rot)));
      worst_norm = std::max(worst_norm, std::abs(before - after));
    }
  }
  o.detail << " max shift diff " << worst_shift << ", max norm diff " << worst_norm;
  o.require(worst_shift < 1e-8, "shifted scores");
  o.require(identity, "position 0 identity");
  o.require(worst_norm < 1e-10, "norm preservation");
}

model::ModelConfig small_config(std::size_t L, std::size_t d, std::size_t h, std::size_t vocab) {
  model::ModelConfig c;
  c.num_layers = L;
  c.hidden_size = d;
  c.num_heads = h;
  c.rotary_pct = 0.25;
  c.max_positions = 64;
  c.vocab_size = vocab;
  return c;
}

model::LMModel perturbed(const model::ModelConfig& c, std::uint64_t seed) {
  auto m = model::init_params(c, seed);
  std::mt19937_64 rng(seed + 1);
  std::normal_distribution<double> n(0.0, 0.1);
  model::for_each_param(m.params(), [&](const std::string&, std::span<double> v, model::ParamKind kind) {
    if (kind != model::ParamKind::weight)
      for (double& x : v) x += n(rng);
  });
  return m;
}

void gradcheck(Outcome& o) {
  const auto c = small_config(2, 32, 4, 20);
  auto m = perturbed(c, 202);
  std::vector<TokenId> ids{3, 17, 9, 0, 12, 5};
  const auto g = model::backward(m, ids);
  std::vector<std::span<const double>> grads;
  model::for_each_param(g.grads, [&](const std::string&, std::span<const double> v, model::ParamKind) {
    grads.push_back(v);
  });
  std::size_t idx = 0, checked = 0;
  double worst = 0;
  std::string worst_name;
  model::for_each_param(m.params(), [&](const std::string& name, std::span<double> p, model::ParamKind) {
    const auto ga = grads[idx++];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double orig = p[j];
      p[j] = orig + 1e-5;
      const double up = model::forward_loss(m, ids).loss;
      p[j] = orig - 1e-5;
      const double down = model::forward_loss(m, ids).loss;
      p[j] = orig;
      const double fd = (up - down) / 2e-5;
      const double rel = std::abs(fd - ga[j]) / std::max({std::abs(fd), std::abs(ga[j]), 1e-6});
      if (rel > worst) {
        worst = rel;
        worst_name = name;
      }
      ++checked;
    }
  });
  o.detail << " " << checked << " entries, worst relative error " << worst << " (" << worst_name << ")";
  o.require(worst < 1e-4, "relative error");
}

void parallel_block(Outcome& o) {
  const auto c = small_config(1, 32, 4, 20);
  const auto m = perturbed(c, 303);
  model::Block b = m.params().blocks[0];
  std::mt19937_64 rng(304);
  std::normal_distribution<double> n;
  Matrix x(9, 32);
  for (double& v : x.data) v = n(rng);
  const Matrix y = model::parallel_block_forward(x, b, m.rotary());

  const naive::Mat nx = naive::from(x);
  const naive::Mat att = naive::attention(b, naive::layer_norm(nx, b.ln1), 4, c.rotary_dims(), c.rotary_base);
  const naive::Mat ff = naive::feed_forward(b, naive::layer_norm(nx, b.ln2));
  naive::Mat sum = nx;
  for (std::size_t t = 0; t < x.rows; ++t)
    for (std::size_t i = 0; i < x.cols; ++i) sum[t][i] += att[t][i] + ff[t][i];
  const double diff = max_abs_diff(sum, y);
  o.detail << " max diff " << diff;
  o.require(diff < 1e-10, "decomposition");

  const Matrix att_before = model::attention_branch(b, model::layer_norm(x, b.ln1), m.rotary());
  for (double& g : b.ln2.gain) g *= 1.5;
  for (double& v : b.ln2.bias) v += 0.25;
  const Matrix att_after = model::attention_branch(b, model::layer_norm(x, b.ln1), m.rotary());
  const Matrix y2 = model::parallel_block_forward(x, b, m.rotary());
  o.require(att_before == att_after, "attention unchanged by ln2");
  o.require(!(y2 == y), "ln2 reaches the output");
}

void initialization(Outcome& o) {
  const auto c = small_config(4, 64, 4, 50);
  const double s_out = model::output_init_std(c), s_small = model::small_init_std(c);
  double sq_out = 0, sq_small = 0;
  std::size_t n_out = 0, n_small = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto m = model::init_params(c, seed);
    for (const auto& b : m.params().blocks) {
      for (const Matrix* w : {&b.wo, &b.w_down})
        for (double v : w->data) sq_out += v * v, ++n_out;
      for (const Matrix* w : {&b.wq, &b.wk, &b.wv, &b.w_up})
        for (double v : w->data) sq_small += v * v, ++n_small;
    }
    for (const Matrix* w : {&m.params().embed, &m.params().unembed})
      for (double v : w->data) sq_small += v * v, ++n_small;
  }
  // The zero-mean sample std has standard error sigma / sqrt(2N).
  const double e_out = std::sqrt(sq_out / n_out), e_small = std::sqrt(sq_small / n_small);
  const double se_out = s_out / std::sqrt(2.0 * n_out), se_small = s_small / std::sqrt(2.0 * n_small);
  o.detail << " output " << e_out << " vs " << s_out << ", small " << e_small << " vs " << s_small;
  o.require(std::abs(e_out - s_out) < 3 * se_out, "output std");
  o.require(std::abs(e_small - s_small) < 3 * se_small, "small std");

  const auto big = model::ModelConfig::neox_20b();
  const double big_out = model::output_init_std(big), big_small = model::small_init_std(big);
  o.detail << "; large config " << big_out << ", " << big_small;
  o.require(std::abs(big_out / 5.801e-4 - 1) < 1e-3, "large output std");
  o.require(std::abs(big_small / 8.068e-3 - 1) < 1e-3, "large small std");
}

void param_count(Outcome& o) {
  const auto big = model::param_count(model::ModelConfig::neox_20b());
  o.detail << " non-embedding " << big.non_embedding << ", total " << big.total;
  o.require(std::abs(static_cast<double>(big.non_embedding) / 1.99e10 - 1) < 0.01, "large non-embedding");
  const auto cfg = config::parse_config(NEOX_CONFIGS "/toy.cfg");
  const auto toy = config::model_config(cfg);
  const auto m = model::init_params(toy, 1);
  std::uint64_t walked = 0, walked_non_emb = 0;
  model::for_each_param(m.params(), [&](const std::string& name, std::span<const double> v, model::ParamKind) {
    walked += v.size();
    if (name != "embed" && name != "unembed") walked_non_emb += v.size();
  });
  const auto closed = model::param_count(toy);
  o.detail << "; toy walk " << walked;
  o.require(walked == closed.total && walked_non_emb == closed.non_embedding, "toy tensor walk");
}

void schedule(Outcome& o) {
  const train::TrainConfig t;
  o.require(train::lr_at(t.warmup_steps(), t) == 9.7e-5, "peak at warmup");
  o.require(train::lr_at(150000, t) == 9.7e-6, "minimum at end");
  double prev = train::lr_at(t.warmup_steps(), t);
  bool monotone = true;
  for (std::size_t s = t.warmup_steps(); s <= 150000; s += 100) {
    const double lr = train::lr_at(s, t);
    monotone = monotone && lr <= prev;
    prev = lr;
  }
  o.require(monotone, "monotone after warmup");
  o.detail << " warmup " << t.warmup_steps() << " steps";
}

void tokenizer(Outcome& o) {
  const auto docs = synthetic_documents(400, 7);
  const auto tk = tok::train_bpe(docs, {700, {"<|endoftext|>"}}).model;
  std::mt19937_64 rng(8);
  std::size_t bad = 0;
  for (int i = 0; i < 10000; ++i) {
    std::string s(rng() % 96, '\0');
    for (char& ch : s) ch = static_cast<char>(rng() % 256);
    if (tk.decode(tk.encode(s)) != s) ++bad;
  }
  const std::vector<std::string> utf8{"na\xC3\xAFve caf\xC3\xA9 r\xC3\xA9sum\xC3\xA9",
                                      "\xE6\x97\xA5\xE6\x9C\xAC\xE8\xAA\x9E \xED\x95\x9C\xEA\xB5\xAD\xEC\x96\xB4",
                                      "\xCE\xB1\xCE\xB2\xCE\xB3 \xD0\xB4\xD0\xB0 \xF0\x9F\x98\x80\xF0\x9F\x9A\x80"};
  for (const auto& s : utf8) bad += tk.decode(tk.encode(s)) != s;
  for (const auto& d : docs) bad += tk.decode(tk.encode(d)) != d;
  o.require(bad == 0, std::to_string(bad) + " round-trip failures");

  bool runs = true;
  for (int k = 1; k <= 48; ++k)
    runs = runs && tk.encode(std::string(static_cast<std::size_t>(k), ' ')).size() == (k <= 24 ? 1u : 2u);
  o.require(runs, "space runs");

  std::set<std::string> words;
  for (const auto& d : docs)
    for (const auto& w : tokscope::split_words(d)) words.insert(w);
  while (words.size() < 1000) {
    std::string w(1 + rng() % 10, 'a');
    for (char& ch : w) ch = static_cast<char>('a' + rng() % 26);
    words.insert(w);
  }
  std::size_t n = 0, mismatch = 0;
  for (const auto& w : words) {
    if (n++ == 1000) break;
    mismatch += tk.encode(w) != tk.encode(" " + w, {.at_string_start = false});
  }
  o.require(mismatch == 0, std::to_string(mismatch) + " start-of-string mismatches");
  o.detail << " vocab " << tk.vocab_size() << ", 1000 words checked";
}

void tokscope_checks(Outcome& o) {
  const auto published = tokscope::report_from_counts({{"Pile", 383111734, 342887807}});
  const auto printed = tokscope::format_ratio(published.totals.ratio());
  o.detail << " published totals ratio " << printed;
  o.require(printed == "0.89501", "published ratio");

  const auto a = tok::train_bpe(synthetic_documents(200, 5), {500, {}}).model;
  const auto b = tok::train_bpe(synthetic_documents(200, 6), {360, {}}).model;
  const std::vector<CorpusComponent> corpus{{"one", synthetic_documents(25, 11)}, {"two", synthetic_documents(15, 12)}};
  const auto same = tokscope::ratio_report(corpus, a, a, true);
  o.require(tokscope::format_ratio(same.totals.ratio()) == "1.00000", "identical-model ratio");

  const auto rep = tokscope::ratio_report(corpus, a, b, true);
  bool exact = true;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    std::uint64_t ca = 0, cb = 0;
    for (const auto& d : corpus[i].documents) {
      for (auto id : a.encode(d)) ca += !tokscope::is_whitespace_token(a.vocab()[id]);
      for (auto id : b.encode(d)) cb += !tokscope::is_whitespace_token(b.vocab()[id]);
    }
    exact = exact && rep.rows[i].count_a == ca && rep.rows[i].count_b == cb;
  }
  o.require(exact, "synthetic counts");
}

void toy_training(Outcome& o) {
  auto cfg = config::parse_config(NEOX_CONFIGS "/toy.cfg");
  const auto docs = synthetic_documents(2000, 21);
  const auto tk = tok::train_bpe(std::span(docs).first(400), {512, {"<|endoftext|>"}}).model;
  cfg.set("vocab-size", std::to_string(tk.vocab_size()), config::Provenance::flag);
  std::vector<TokenId> ids;
  for (const auto& d : docs) {
    const auto e = tk.encode(d);
    ids.insert(ids.end(), e.begin(), e.end());
    ids.push_back(tk.reserved_ids()[0]);
    if (ids.size() >= 50000) break;
  }
  ids.resize(50000);
  const auto mcfg = config::model_config(cfg);
  auto tcfg = config::train_config(cfg);
  tcfg.eval_interval = 0;
  o.require(tcfg.total_steps == 200 && tcfg.contexts == 4 && tcfg.seq_len == 128, "toy schedule");
  const auto r1 = train::train(model::init_params(mcfg, mcfg.seed), ids, tcfg);
  const auto r2 = train::train(model::init_params(mcfg, mcfg.seed), ids, tcfg);
  const double first = r1.log.front().train_loss, last = r1.log.back().train_loss;
  o.detail << " loss " << first << " -> " << last << ", ratio " << last / first;
  o.require(r1.log.front().step == 1 && r1.log.back().step == 200, "log covers steps 1..200");
  o.require(last < 0.8 * first, "loss reduction");
  o.require(r1.model.params() == r2.model.params(), "bitwise reproducibility");
}

void infra_checks(Outcome& o) {
  const auto mix = infra::load_mix(NEOX_FIXTURES "/grid_mix.txt");
  const double i = infra::mix_intensity(mix);
  const double e = infra::emissions(66.24, i);
  o.detail << " intensity " << i << ", emissions " << e;
  o.require(std::abs(i - 0.47905) <= 5e-5, "intensity");
  o.require(std::abs(e - 31.73) <= 0.01, "emissions");
  const auto l = infra::derive_layout({12, 8}, 2, 4);
  o.require(l.dp == 12 && l.intra_node, "layout");
  bool half = true;
  for (std::size_t L = 1; L <= 64; ++L) {
    const auto s = infra::allreduce_count(L, infra::ResidualMode::serial);
    const auto p = infra::allreduce_count(L, infra::ResidualMode::parallel);
    half = half && 2 * p.forward == s.forward && 2 * p.backward == s.backward;
  }
  o.require(half, "all-reduce halving");
}

void eval_checks(Outcome& o) {
  const eval::EvalResult wsc{"WSC", 0, 104, 0.5, eval::standard_error(0.5, 104)};
  o.require(eval::format_acc(wsc) == "0.500 \xC2\xB1 0.049", "WSC stderr");

  const std::size_t vocab = 50257;
  const eval::UniformLogits u(vocab);
  const std::vector<TokenId> prompt{11, 12}, cont{1, 2, 3};
  const double ll = eval::score_tokens(u, prompt, cont);
  o.require(ll == -3.0 * std::log(static_cast<double>(vocab)), "uniform log-likelihood");

  auto zero = eval::load_results(NEOX_FIXTURES "/fairseq13b_zero.jsonl");
  const auto five = eval::load_results(NEOX_FIXTURES "/fairseq13b_five.jsonl");
  std::set<std::string> shared;
  for (const auto& r : five) shared.insert(r.task);
  std::erase_if(zero, [&](const eval::EvalResult& r) { return !shared.count(r.task); });
  const auto d = eval::fewshot_delta(zero, five);
  o.detail << " WSC " << eval::format_acc(wsc) << ", uniform " << ll << ", FairSeq 13B mean delta over "
           << d.per_task.size() << " tasks " << d.mean;
  o.require(std::abs(d.mean - 0.018) <= 0.002, "few-shot delta");
}

void batch(Outcome& o) {
  const train::TrainConfig t;
  o.detail << " " << t.contexts << " x " << t.seq_len << " = " << t.batch_tokens();
  o.require(t.batch_tokens() == 3149824, "token count");
  o.require(std::abs(static_cast<double>(t.batch_tokens()) / 3.15e6 - 1) < 0.001, "about 3.15M");
}

}  // namespace

int main() {
  int failed = 0;
  failed += report(1, "rotary invariants", 5, rotary);
  failed += report(2, "gradient check", 60, gradcheck);
  failed += report(3, "untied parallel block", 0, parallel_block);
  failed += report(4, "initialization", 0, initialization);
  failed += report(5, "parameter count", 0, param_count);
  failed += report(6, "learning-rate schedule", 0, schedule);
  failed += report(7, "tokenizer", 0, tokenizer);
  failed += report(8, "tokscope", 0, tokscope_checks);
  failed += report(9, "toy training", 300, toy_training);
  failed += report(10, "infra arithmetic", 0, infra_checks);
  failed += report(11, "eval statistics", 0, eval_checks);
  failed += report(12, "batch bookkeeping", 0, batch);
  std::printf("%d of 12 criteria passed\n", 12 - failed);
  return failed == 0 ? 0 : 1;
}
