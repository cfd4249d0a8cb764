#include "neox/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "json.hpp"

#include "neox/checkpoint.hpp"
#include "neox/error.hpp"

namespace neox::train {

std::size_t TrainConfig::warmup_steps() const {
  return static_cast<std::size_t>(std::llround(warmup_frac * static_cast<double>(total_steps)));
}

void TrainConfig::validate() const {
  if (!(peak_lr > 0.0) || !std::isfinite(peak_lr)) throw ValidationError("lr must be positive");
  if (total_steps == 0) throw ValidationError("train-iters must be >= 1");
  if (!(warmup_frac >= 0.0 && warmup_frac <= 1.0)) throw ValidationError("warmup must be in [0, 1]");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ValidationError("adam betas must be in [0, 1)");
  }
  if (!(eps > 0.0)) throw ValidationError("adam eps must be positive");
  if (weight_decay < 0.0) throw ValidationError("weight-decay must be >= 0");
  if (grad_clip < 0.0) throw ValidationError("gradient-clipping must be >= 0");
  if (contexts == 0) throw ValidationError("batch contexts must be >= 1");
  if (seq_len < 2) throw ValidationError("seq-length must be >= 2");
}

double lr_at(std::size_t step, const TrainConfig& cfg) {
  const std::size_t warmup = cfg.warmup_steps();
  const double peak = cfg.peak_lr, floor = cfg.min_lr();
  if (step >= cfg.total_steps) return step == warmup ? peak : floor;
  if (step == warmup) return peak;
  if (step < warmup) return peak * static_cast<double>(step) / static_cast<double>(warmup);
  const double progress =
      static_cast<double>(step - warmup) / static_cast<double>(cfg.total_steps - warmup);
  return floor + 0.5 * (peak - floor) * (1.0 + std::cos(std::numbers::pi * progress));
}

OptState make_opt_state(const model::ModelConfig& config) {
  return {model::zeros_like(config), model::zeros_like(config), 0};
}

StepStats adamw_step(Params& params, const Params& grads, OptState& state, double lr, const TrainConfig& cfg) {
  std::vector<std::span<const double>> g;
  model::for_each_param(grads, [&](const std::string& name, std::span<const double> v, model::ParamKind) {
    for (double x : v) {
      if (!std::isfinite(x)) throw ValidationError("non-finite gradient in parameter " + name);
    }
    g.push_back(v);
  });
  double sq = 0.0;
  for (auto v : g) {
    for (double x : v) sq += x * x;
  }
  StepStats stats;
  stats.grad_norm = std::sqrt(sq);
  double scale = 1.0;
  if (cfg.grad_clip > 0.0 && stats.grad_norm > cfg.grad_clip) {
    scale = cfg.grad_clip / stats.grad_norm;
    stats.clipped = true;
  }

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);

  std::vector<std::span<double>> ms, vs;
  model::for_each_param(state.m, [&](const std::string&, std::span<double> v, model::ParamKind) { ms.push_back(v); });
  model::for_each_param(state.v, [&](const std::string&, std::span<double> v, model::ParamKind) { vs.push_back(v); });
  std::size_t i = 0;
  model::for_each_param(params, [&](const std::string& name, std::span<double> p, model::ParamKind kind) {
    if (i >= g.size() || g[i].size() != p.size() || ms[i].size() != p.size()) {
      throw ValidationError("gradient shape does not match parameter " + name);
    }
    const bool decay = kind == model::ParamKind::weight && cfg.weight_decay != 0.0;
    auto gi = g[i];
    auto mi = ms[i];
    auto vi = vs[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = gi[j] * scale;
      mi[j] = cfg.beta1 * mi[j] + (1.0 - cfg.beta1) * gj;
      vi[j] = cfg.beta2 * vi[j] + (1.0 - cfg.beta2) * gj * gj;
      if (decay) p[j] *= 1.0 - lr * cfg.weight_decay;
      p[j] -= lr * (mi[j] / c1) / (std::sqrt(vi[j] / c2) + cfg.eps);
    }
    ++i;
  });
  return stats;
}

TokenStream::TokenStream(std::span<const TokenId> tokens, std::size_t window) : tokens_(tokens), window_(window) {
  if (window == 0 || tokens.size() < window) {
    throw ValidationError("token stream of " + std::to_string(tokens.size()) + " tokens is shorter than one " +
                          std::to_string(window) + "-token window");
  }
}

std::span<const TokenId> TokenStream::next() {
  if (cursor_ + window_ > tokens_.size()) {
    cursor_ = 0;
    ++epoch_;
  }
  auto w = tokens_.subspan(cursor_, window_);
  cursor_ += window_;
  return w;
}

double evaluate_loss(const LMModel& model, std::span<const TokenId> tokens, std::size_t seq_len, std::size_t n) {
  const std::size_t windows = std::min(n, tokens.size() / seq_len);
  if (windows == 0) throw ValidationError("validation stream shorter than one window");
  double total = 0.0;
  for (std::size_t w = 0; w < windows; ++w) {
    total += model::forward_loss(model, tokens.subspan(w * seq_len, seq_len)).loss;
  }
  return total / static_cast<double>(windows);
}

std::string format_record(const LossRecord& r) {
  nlohmann::json j{{"step", r.step}, {"lr", r.lr}, {"train_loss", r.train_loss}, {"epoch", r.epoch}};
  if (r.val_loss) j["val_loss"] = *r.val_loss;
  return j.dump();
}

namespace {

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::size_t step) {
  char name[32];
  std::snprintf(name, sizeof name, "step-%07zu.ckpt", step);
  return dir / name;
}

}  // namespace

TrainResult train(LMModel model, std::span<const TokenId> train_tokens, const TrainConfig& cfg,
                  std::span<const TokenId> val_tokens, const Diagnostics& diag) {
  cfg.validate();
  if (cfg.seq_len > model.config().max_positions) {
    throw ValidationError("seq-length exceeds max-position-embeddings");
  }
  if (train_tokens.size() < cfg.batch_tokens()) {
    throw ValidationError("training corpus has " + std::to_string(train_tokens.size()) +
                          " tokens, fewer than one batch of " + std::to_string(cfg.batch_tokens()));
  }
  auto say = [&](const std::string& s) {
    if (diag) diag(s);
  };
  std::ofstream log_file;
  if (!cfg.log_path.empty()) {
    log_file.open(cfg.log_path, std::ios::trunc);
    if (!log_file) throw RuntimeError("cannot write " + cfg.log_path.string());
  }
  if (!cfg.checkpoint_dir.empty()) std::filesystem::create_directories(cfg.checkpoint_dir);

  TrainResult result;
  TokenStream stream(train_tokens, cfg.seq_len);
  OptState opt = make_opt_state(model.config());
  const double weight = 1.0 / static_cast<double>(cfg.contexts);

  for (std::size_t step = 1; step <= cfg.total_steps; ++step) {
    Params grads = model::zeros_like(model.config());
    double loss = 0.0;
    const std::size_t epoch_before = stream.epoch();
    for (std::size_t c = 0; c < cfg.contexts; ++c) {
      loss += weight * model::accumulate_gradients(model, stream.next(), weight, grads);
    }
    if (stream.epoch() != epoch_before) {
      result.epoch_boundaries.push_back(step);
      say("epoch boundary at step " + std::to_string(step) + ", starting epoch " + std::to_string(stream.epoch()));
      if (log_file) {
        log_file << nlohmann::json{{"event", "epoch_boundary"}, {"step", step}, {"epoch", stream.epoch()}}.dump()
                 << '\n';
      }
    }
    const double lr = lr_at(step, cfg);
    adamw_step(model.params(), grads, opt, lr, cfg);

    LossRecord rec{step, lr, loss, std::nullopt, stream.epoch()};
    const bool last = step == cfg.total_steps;
    if (!val_tokens.empty() && cfg.eval_interval > 0 && (step % cfg.eval_interval == 0 || last)) {
      rec.val_loss = evaluate_loss(model, val_tokens, cfg.seq_len, cfg.eval_contexts);
    }
    if (step == 1 || step % std::max<std::size_t>(cfg.log_interval, 1) == 0 || last || rec.val_loss) {
      result.log.push_back(rec);
      if (log_file) log_file << format_record(rec) << '\n';
    }
    if (!cfg.checkpoint_dir.empty()) {
      const std::map<std::string, std::string> meta{{"step", std::to_string(step)}};
      if (cfg.checkpoint_interval > 0 && step % cfg.checkpoint_interval == 0) {
        result.checkpoints.push_back(checkpoint_path(cfg.checkpoint_dir, step));
        model::save_checkpoint(result.checkpoints.back(), model, meta);
      }
      if (last) {
        result.checkpoints.push_back(cfg.checkpoint_dir / "final.ckpt");
        model::save_checkpoint(result.checkpoints.back(), model, meta);
      }
    }
  }
  result.model = std::move(model);
  return result;
}

}  // namespace neox::train
