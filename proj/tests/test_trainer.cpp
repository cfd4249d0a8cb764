#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "neox/error.hpp"
#include "neox/trainer.hpp"

using namespace neox;
using namespace neox::train;

namespace {

model::ModelConfig tiny() {
  model::ModelConfig c;
  c.num_layers = 1;
  c.hidden_size = 16;
  c.num_heads = 2;
  c.rotary_pct = 0.5;
  c.max_positions = 32;
  c.vocab_size = 20;
  return c;
}

std::vector<tok::TokenId> pattern_tokens(std::size_t n) {
  std::vector<tok::TokenId> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = static_cast<tok::TokenId>((i * 7 + i / 5) % 20);
  return ids;
}

}  // namespace

TEST_CASE("schedule at the full-size settings") {
  TrainConfig cfg;
  CHECK(cfg.warmup_steps() == 1500);
  CHECK(lr_at(0, cfg) == 0.0);
  CHECK(lr_at(1500, cfg) == 9.7e-5);
  CHECK(lr_at(150000, cfg) == 9.7e-6);
  CHECK(lr_at(150000, cfg) == cfg.peak_lr / 10);
  CHECK(lr_at(200000, cfg) == 9.7e-6);
  CHECK(lr_at(750, cfg) == doctest::Approx(9.7e-5 / 2));
  const std::size_t mid = 1500 + (150000 - 1500) / 2;
  CHECK(lr_at(mid, cfg) == doctest::Approx(9.7e-6 + 0.5 * (9.7e-5 - 9.7e-6)).epsilon(1e-12));
  CHECK(std::abs(lr_at(1499, cfg) - lr_at(1500, cfg)) < 1e-7);
  CHECK(std::abs(lr_at(1501, cfg) - lr_at(1500, cfg)) < 1e-12);
  double prev = lr_at(1500, cfg);
  for (std::size_t s = 1501; s <= 150000; s += 37) {
    const double lr = lr_at(s, cfg);
    CHECK(lr <= prev);
    prev = lr;
  }
}

TEST_CASE("batch bookkeeping") {
  TrainConfig cfg;
  CHECK(cfg.batch_tokens() == 3149824);
  CHECK(std::abs(static_cast<double>(cfg.batch_tokens()) / 3.15e6 - 1.0) < 0.001);
}

TEST_CASE("adamw closed forms") {
  const auto c = tiny();
  TrainConfig cfg;
  cfg.grad_clip = 0.0;

  SUBCASE("zero gradient, zero decay leaves parameters unchanged") {
    auto m = model::init_params(c, 1);
    const auto before = m.params();
    auto st = make_opt_state(c);
    cfg.weight_decay = 0.0;
    adamw_step(m.params(), model::zeros_like(c), st, 1e-3, cfg);
    CHECK(m.params() == before);
    CHECK(st.step == 1);
  }
  SUBCASE("unit gradient on the first step") {
    auto m = model::init_params(c, 1);
    const double p0 = m.params().unembed.data[3];
    auto g = model::zeros_like(c);
    g.unembed.data[3] = 1.0;
    auto st = make_opt_state(c);
    cfg.weight_decay = 0.0;
    adamw_step(m.params(), g, st, 1e-3, cfg);
    CHECK(std::abs(m.params().unembed.data[3] - (p0 - 1e-3 / (1.0 + 1e-8))) < 1e-12);
  }
  SUBCASE("decoupled decay touches weights only") {
    auto m = model::init_params(c, 1);
    m.params().blocks[0].bq[0] = 0.5;
    const auto before = m.params();
    auto st = make_opt_state(c);
    cfg.weight_decay = 0.01;
    adamw_step(m.params(), model::zeros_like(c), st, 1e-3, cfg);
    for (std::size_t i = 0; i < before.embed.data.size(); ++i)
      CHECK(m.params().embed.data[i] == before.embed.data[i] * (1.0 - 1e-5));
    CHECK(m.params().blocks[0].bq[0] == 0.5);
    CHECK(m.params().blocks[0].ln1.gain == before.blocks[0].ln1.gain);
  }
  SUBCASE("non-finite gradient names the parameter") {
    auto m = model::init_params(c, 1);
    auto g = model::zeros_like(c);
    g.blocks[0].w_up.data[2] = NAN;
    auto st = make_opt_state(c);
    try {
      adamw_step(m.params(), g, st, 1e-3, cfg);
      FAIL("expected an error");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find("blocks.0.mlp.w_up") != std::string::npos);
    }
  }
}

TEST_CASE("gradient clipping by global norm") {
  const auto c = tiny();
  TrainConfig cfg;
  cfg.weight_decay = 0.0;
  auto g = model::zeros_like(c);
  g.embed.data[0] = 3.0;
  g.unembed.data[0] = 4.0;
  auto m = model::init_params(c, 1);
  auto st = make_opt_state(c);
  const auto stats = adamw_step(m.params(), g, st, 1e-3, cfg);
  CHECK(stats.grad_norm == doctest::Approx(5.0));
  CHECK(stats.clipped);
  // First moment holds the clipped gradient times (1 - beta1).
  CHECK(st.m.embed.data[0] == doctest::Approx(0.1 * 3.0 / 5.0));
  CHECK(st.m.unembed.data[0] == doctest::Approx(0.1 * 4.0 / 5.0));
}

TEST_CASE("adamw without decay equals textbook adam over a trajectory") {
  const auto c = tiny();
  TrainConfig cfg;
  cfg.weight_decay = 0.0;
  cfg.grad_clip = 0.0;
  auto m = model::init_params(c, 5);
  std::vector<double> p(m.params().embed.data), mom(p.size(), 0.0), var(p.size(), 0.0);
  auto st = make_opt_state(c);
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n;
  for (int t = 1; t <= 25; ++t) {
    auto g = model::zeros_like(c);
    for (double& x : g.embed.data) x = n(rng);
    const double lr = 1e-3 * t;
    adamw_step(m.params(), g, st, lr, cfg);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g.embed.data[i];
      mom[i] = 0.9 * mom[i] + 0.1 * gi;
      var[i] = 0.95 * var[i] + 0.05 * gi * gi;
      const double mh = mom[i] / (1 - std::pow(0.9, t)), vh = var[i] / (1 - std::pow(0.95, t));
      p[i] -= lr * mh / (std::sqrt(vh) + 1e-8);
    }
  }
  for (std::size_t i = 0; i < p.size(); ++i) CHECK(std::abs(p[i] - m.params().embed.data[i]) < 1e-12);
}

TEST_CASE("token stream wraps at the end") {
  const auto ids = pattern_tokens(10);
  TokenStream s(ids, 4);
  CHECK(s.next()[0] == ids[0]);
  CHECK(s.next()[0] == ids[4]);
  CHECK(s.epoch() == 0);
  CHECK(s.next()[0] == ids[0]);
  CHECK(s.epoch() == 1);
  CHECK(s.cursor() == 4);
  CHECK_THROWS_AS(TokenStream(ids, 11), ValidationError);
}

TEST_CASE("training is deterministic and checkpoints on schedule") {
  const auto c = tiny();
  TrainConfig cfg;
  cfg.peak_lr = 3e-3;
  cfg.total_steps = 12;
  cfg.warmup_frac = 0.1;
  cfg.contexts = 2;
  cfg.seq_len = 16;
  cfg.checkpoint_interval = 4;
  cfg.eval_interval = 6;
  cfg.eval_contexts = 1;
  cfg.log_interval = 1;
  const auto dir = std::filesystem::temp_directory_path() / "neox_train_test";
  std::filesystem::remove_all(dir);
  cfg.checkpoint_dir = dir;
  cfg.log_path = dir / "loss.jsonl";
  std::filesystem::create_directories(dir);
  const auto ids = pattern_tokens(200);
  const auto val = pattern_tokens(40);

  const auto a = train::train(model::init_params(c, 9), ids, cfg, val);
  const auto b = train::train(model::init_params(c, 9), ids, cfg, val);
  CHECK(a.model.params() == b.model.params());
  CHECK(a.checkpoints.size() == 4);
  CHECK(a.checkpoints.back().filename() == "final.ckpt");
  CHECK(a.log.size() == 12);
  CHECK(a.log[5].val_loss.has_value());
  CHECK(!a.log[4].val_loss.has_value());
  CHECK(a.log.back().train_loss < a.log.front().train_loss);
  // 200 tokens hold six 32-token batches, so step 7 starts a second pass.
  CHECK(a.epoch_boundaries == std::vector<std::size_t>{7});
  std::ifstream log(cfg.log_path);
  std::size_t lines = 0;
  for (std::string l; std::getline(log, l);) ++lines;
  CHECK(lines == 13);
  std::filesystem::remove_all(dir);

  cfg.checkpoint_dir.clear();
  cfg.log_path.clear();
  CHECK_THROWS_AS(train::train(model::init_params(c, 9), pattern_tokens(20), cfg), ValidationError);
}
