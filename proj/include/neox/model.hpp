#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "neox/tokenizer.hpp"

// Decoder-only transformer with partial rotary embeddings, parallel
// attention + feed-forward residual blocks with separate layer norms for the
// two branches, dense attention only, and an untied output projection.
// All arithmetic is double precision.
namespace neox::model {

using tok::TokenId;

struct ModelConfig {
  std::size_t num_layers = 2;
  std::size_t hidden_size = 64;
  std::size_t num_heads = 4;
  double rotary_pct = 0.25;
  std::size_t max_positions = 2048;
  std::size_t vocab_size = 50257;
  bool weight_tying = false;
  double rotary_base = 10000.0;
  std::uint64_t seed = 1234;

  std::size_t head_dim() const { return hidden_size / num_heads; }
  // floor(rotary_pct * head_dim), rounded down to even.
  std::size_t rotary_dims() const;
  std::size_t ff_dim() const { return 4 * hidden_size; }

  // Throws ValidationError naming the violated constraint.
  void validate() const;

  // 44 layers, width 6144, 64 heads, 25% rotary, 2048 context, 50257 tokens.
  static ModelConfig neox_20b();

  bool operator==(const ModelConfig&) const = default;
};

inline constexpr double kLayerNormEps = 1e-5;

// Row-major dense matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  bool operator==(const Matrix&) const = default;
};

using Vector = std::vector<double>;

struct LayerNorm {
  Vector gain;
  Vector bias;
  bool operator==(const LayerNorm&) const = default;
};

struct Block {
  LayerNorm ln1;  // feeds attention
  LayerNorm ln2;  // feeds the feed-forward branch
  Matrix wq, wk, wv, wo;  // d x d, stored out x in
  Vector bq, bk, bv, bo;
  Matrix w_up;  // 4d x d
  Vector b_up;
  Matrix w_down;  // d x 4d
  Vector b_down;
  bool operator==(const Block&) const = default;
};

// The full parameter set. Gradients use the same type.
struct Params {
  Matrix embed;    // vocab x d
  std::vector<Block> blocks;
  LayerNorm final_ln;
  Matrix unembed;  // output projection, one row per vocabulary entry (vocab x d)
  bool operator==(const Params&) const = default;
};

enum class ParamKind { weight, bias, norm_gain, norm_bias };

// Shape-matched zero parameters.
Params zeros_like(const ModelConfig& config);

// Visits every tensor in a fixed order with a stable dotted name.
void for_each_param(Params& p, const std::function<void(const std::string&, std::span<double>, ParamKind)>& f);
void for_each_param(const Params& p,
                    const std::function<void(const std::string&, std::span<const double>, ParamKind)>& f);

struct ParamCount {
  std::uint64_t total = 0;
  std::uint64_t non_embedding = 0;
};

// Closed form. Non-embedding excludes the input embedding and the untied
// output projection.
ParamCount param_count(const ModelConfig& config);

// theta_i = base^(-2i/d_rot), i = 0 .. d_rot/2 - 1.
std::vector<double> rotary_thetas(std::size_t rotary_dims, double base);

class RotaryCache {
 public:
  RotaryCache() = default;
  RotaryCache(std::size_t head_dim, double rotary_pct, std::size_t max_positions, double base);

  std::size_t head_dim() const { return head_dim_; }
  std::size_t rotary_dims() const { return rotary_dims_; }
  std::size_t max_positions() const { return max_positions_; }
  const std::vector<double>& thetas() const { return thetas_; }

  // Rotates pairs (2i, 2i+1) of the first rotary_dims entries by
  // position * theta_i, in place. sign = -1 applies the inverse rotation.
  void rotate(std::span<double> head_vec, std::size_t position, int sign = 1) const;

 private:
  std::size_t head_dim_ = 0;
  std::size_t rotary_dims_ = 0;
  std::size_t max_positions_ = 0;
  std::vector<double> thetas_;
  std::vector<double> cos_;  // max_positions x rotary_dims/2
  std::vector<double> sin_;
};

// Rotated copy of one head vector. Throws if position >= max_positions or
// the vector length differs from the cache's head_dim.
Vector apply_rotary(std::span<const double> x, std::size_t position, const RotaryCache& cache);

// Causal scaled dot-product scores for one head: score[m][n] =
// rot(q_m, p_m) . rot(k_n, p_n) / sqrt(head_dim) for n <= m, -inf above the
// diagonal.
Matrix attention_scores(const Matrix& q_states, const Matrix& k_states, std::span<const std::size_t> positions,
                        const RotaryCache& cache);

// Row-wise softmax in place; -inf entries become 0.
void softmax_rows(Matrix& m);

double gelu(double x);
double gelu_grad(double x);

Matrix layer_norm(const Matrix& x, const LayerNorm& ln);

// Multi-head causal self-attention on already-normalized input, including
// the output projection. Positions are first_position, first_position+1, ...
Matrix attention_branch(const Block& block, const Matrix& normed, const RotaryCache& cache,
                        std::size_t first_position = 0);

// GELU MLP on already-normalized input.
Matrix feed_forward_branch(const Block& block, const Matrix& normed);

// x + Attn(LN1(x)) + FF(LN2(x)). Throws ValidationError on non-finite input.
Matrix parallel_block_forward(const Matrix& x, const Block& block, const RotaryCache& cache,
                              std::size_t first_position = 0);

class LMModel {
 public:
  LMModel() = default;
  LMModel(ModelConfig config, Params params);

  const ModelConfig& config() const { return config_; }
  const Params& params() const { return params_; }
  Params& params() { return params_; }
  const RotaryCache& rotary() const { return rotary_; }

 private:
  ModelConfig config_;
  Params params_;
  RotaryCache rotary_;
};

// Output-layer std: 2 / (L * sqrt(d)). Applied to attention W_o and the
// feed-forward down projection.
double output_init_std(const ModelConfig& config);
// Small-init std: sqrt(2 / (d + 4d)). Applied to every other weight matrix.
double small_init_std(const ModelConfig& config);

// Deterministic in (config, seed). Biases zero, layer-norm gains one.
LMModel init_params(const ModelConfig& config, std::uint64_t seed);

// T x vocab next-token logits for positions 0..T-1. T <= max_positions.
Matrix forward_logits(const LMModel& model, std::span<const TokenId> ids);

struct LossResult {
  double loss = 0.0;
  Matrix logits;
};

// Mean next-token cross-entropy over the T-1 predictions.
LossResult forward_loss(const LMModel& model, std::span<const TokenId> ids);

// Adds weight * d(loss)/d(params) into grads and returns the loss.
double accumulate_gradients(const LMModel& model, std::span<const TokenId> ids, double weight, Params& grads);

struct LossAndGrad {
  double loss = 0.0;
  Params grads;
};

LossAndGrad backward(const LMModel& model, std::span<const TokenId> ids);

}  // namespace neox::model
