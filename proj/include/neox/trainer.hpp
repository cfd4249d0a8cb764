#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "neox/model.hpp"

namespace neox::train {

using model::LMModel;
using model::Params;
using tok::TokenId;

struct TrainConfig {
  double peak_lr = 9.7e-5;
  std::size_t total_steps = 150000;
  double warmup_frac = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double grad_clip = 1.0;  // global L2 norm; 0 disables
  std::size_t contexts = 1538;  // sequences per step
  std::size_t seq_len = 2048;
  std::size_t checkpoint_interval = 1000;  // 0 disables periodic checkpoints
  std::size_t eval_interval = 1000;  // 0 disables validation
  std::size_t eval_contexts = 8;
  std::size_t log_interval = 1;
  std::uint64_t seed = 1234;
  std::filesystem::path checkpoint_dir;  // empty: no checkpoints written
  std::filesystem::path log_path;  // empty: records only returned

  // Always exactly peak_lr / 10.
  double min_lr() const { return peak_lr / 10.0; }
  std::size_t warmup_steps() const;
  std::size_t batch_tokens() const { return contexts * seq_len; }

  void validate() const;
};

// Linear warmup from 0 to peak, cosine decay to min_lr at total_steps, and
// min_lr for any step beyond.
double lr_at(std::size_t step, const TrainConfig& cfg);

struct OptState {
  Params m;
  Params v;
  std::uint64_t step = 0;
};

OptState make_opt_state(const model::ModelConfig& config);

struct StepStats {
  double grad_norm = 0.0;  // before clipping
  bool clipped = false;
};

// One AdamW update. Gradients are clipped to cfg.grad_clip by global norm,
// weight decay is decoupled and only touches weight matrices. Throws
// ValidationError naming the first parameter holding a non-finite gradient.
StepStats adamw_step(Params& params, const Params& grads, OptState& state, double lr, const TrainConfig& cfg);

// Sequential fixed-length windows over a token stream, wrapping to the start
// when the next window would run past the end.
class TokenStream {
 public:
  TokenStream(std::span<const TokenId> tokens, std::size_t window);

  std::span<const TokenId> next();
  std::size_t cursor() const { return cursor_; }
  std::size_t epoch() const { return epoch_; }

 private:
  std::span<const TokenId> tokens_;
  std::size_t window_;
  std::size_t cursor_ = 0;
  std::size_t epoch_ = 0;
};

struct LossRecord {
  std::size_t step = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  std::optional<double> val_loss;
  std::size_t epoch = 0;
};

struct TrainResult {
  LMModel model;
  std::vector<LossRecord> log;
  std::vector<std::filesystem::path> checkpoints;
  std::vector<std::size_t> epoch_boundaries;  // steps during which the stream wrapped
};

// Mean next-token loss over the first n windows of a stream.
double evaluate_loss(const LMModel& model, std::span<const TokenId> tokens, std::size_t seq_len, std::size_t n);

using Diagnostics = std::function<void(const std::string&)>;

TrainResult train(LMModel model, std::span<const TokenId> train_tokens, const TrainConfig& cfg,
                  std::span<const TokenId> val_tokens = {}, const Diagnostics& diag = {});

std::string format_record(const LossRecord& r);

}  // namespace neox::train
