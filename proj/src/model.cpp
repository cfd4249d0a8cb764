#include "neox/model.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "neox/error.hpp"
#include "neox/kernels.hpp"

namespace neox::model {

namespace k = neox::kernels;

std::size_t ModelConfig::rotary_dims() const {
  if (num_heads == 0) return 0;
  const auto raw = static_cast<std::size_t>(std::floor(rotary_pct * static_cast<double>(head_dim())));
  return raw & ~std::size_t{1};
}

void ModelConfig::validate() const {
  if (hidden_size == 0) throw ValidationError("hidden-size must be >= 1");
  if (num_heads == 0) throw ValidationError("num-attention-heads must be >= 1");
  if (hidden_size % num_heads != 0) {
    throw ValidationError("hidden-size " + std::to_string(hidden_size) + " is not divisible by num-attention-heads " +
                          std::to_string(num_heads));
  }
  if (!(rotary_pct > 0.0 && rotary_pct <= 1.0)) throw ValidationError("rotary-pct must be in (0, 1]");
  if (rotary_dims() < 2) {
    throw ValidationError("rotary-pct * head_dim must cover at least one dimension pair (got " +
                          std::to_string(rotary_dims()) + " rotary dims)");
  }
  if (max_positions == 0) throw ValidationError("max-position-embeddings must be >= 1");
  if (vocab_size == 0) throw ValidationError("vocab-size must be >= 1");
  if (weight_tying) throw ValidationError("tied input/output embeddings are not supported");
  if (!(rotary_base > 1.0) || !std::isfinite(rotary_base)) throw ValidationError("rotary-emb-base must be > 1");
}

ModelConfig ModelConfig::neox_20b() {
  ModelConfig c;
  c.num_layers = 44;
  c.hidden_size = 6144;
  c.num_heads = 64;
  c.rotary_pct = 0.25;
  c.max_positions = 2048;
  c.vocab_size = 50257;
  return c;
}

namespace {

Matrix shaped(std::size_t r, std::size_t c) { return Matrix(r, c); }

Block zero_block(const ModelConfig& c) {
  const std::size_t d = c.hidden_size, f = c.ff_dim();
  Block b;
  b.ln1 = {Vector(d, 0.0), Vector(d, 0.0)};
  b.ln2 = {Vector(d, 0.0), Vector(d, 0.0)};
  b.wq = shaped(d, d);
  b.wk = shaped(d, d);
  b.wv = shaped(d, d);
  b.wo = shaped(d, d);
  b.bq = b.bk = b.bv = b.bo = Vector(d, 0.0);
  b.w_up = shaped(f, d);
  b.b_up = Vector(f, 0.0);
  b.w_down = shaped(d, f);
  b.b_down = Vector(d, 0.0);
  return b;
}

template <class P, class F>
void walk(P& p, F&& f) {
  f(std::string("embed"), p.embed.data, ParamKind::weight);
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    auto& b = p.blocks[i];
    const std::string pre = "blocks." + std::to_string(i) + ".";
    f(pre + "ln1.gain", b.ln1.gain, ParamKind::norm_gain);
    f(pre + "ln1.bias", b.ln1.bias, ParamKind::norm_bias);
    f(pre + "ln2.gain", b.ln2.gain, ParamKind::norm_gain);
    f(pre + "ln2.bias", b.ln2.bias, ParamKind::norm_bias);
    f(pre + "attn.wq", b.wq.data, ParamKind::weight);
    f(pre + "attn.bq", b.bq, ParamKind::bias);
    f(pre + "attn.wk", b.wk.data, ParamKind::weight);
    f(pre + "attn.bk", b.bk, ParamKind::bias);
    f(pre + "attn.wv", b.wv.data, ParamKind::weight);
    f(pre + "attn.bv", b.bv, ParamKind::bias);
    f(pre + "attn.wo", b.wo.data, ParamKind::weight);
    f(pre + "attn.bo", b.bo, ParamKind::bias);
    f(pre + "mlp.w_up", b.w_up.data, ParamKind::weight);
    f(pre + "mlp.b_up", b.b_up, ParamKind::bias);
    f(pre + "mlp.w_down", b.w_down.data, ParamKind::weight);
    f(pre + "mlp.b_down", b.b_down, ParamKind::bias);
  }
  f(std::string("final_ln.gain"), p.final_ln.gain, ParamKind::norm_gain);
  f(std::string("final_ln.bias"), p.final_ln.bias, ParamKind::norm_bias);
  f(std::string("unembed"), p.unembed.data, ParamKind::weight);
}

}  // namespace

Params zeros_like(const ModelConfig& c) {
  Params p;
  p.embed = shaped(c.vocab_size, c.hidden_size);
  p.blocks.assign(c.num_layers, zero_block(c));
  p.final_ln = {Vector(c.hidden_size, 0.0), Vector(c.hidden_size, 0.0)};
  p.unembed = shaped(c.vocab_size, c.hidden_size);
  return p;
}

void for_each_param(Params& p, const std::function<void(const std::string&, std::span<double>, ParamKind)>& f) {
  walk(p, [&](const std::string& name, std::vector<double>& v, ParamKind kind) { f(name, std::span<double>(v), kind); });
}

void for_each_param(const Params& p,
                    const std::function<void(const std::string&, std::span<const double>, ParamKind)>& f) {
  walk(p, [&](const std::string& name, const std::vector<double>& v, ParamKind kind) {
    f(name, std::span<const double>(v), kind);
  });
}

ParamCount param_count(const ModelConfig& c) {
  const std::uint64_t d = c.hidden_size, L = c.num_layers, V = c.vocab_size;
  ParamCount out;
  // Per block: 4 d*d attention weights + 4d biases, 8 d*d MLP weights + 5d
  // biases, two layer norms of 2d each.
  out.non_embedding = L * (12 * d * d + 13 * d) + 2 * d;
  out.total = out.non_embedding + 2 * V * d;
  return out;
}

std::vector<double> rotary_thetas(std::size_t rotary_dims, double base) {
  if (rotary_dims == 0 || rotary_dims % 2 != 0) {
    throw ValidationError("rotary dimension count must be even and positive, got " + std::to_string(rotary_dims));
  }
  std::vector<double> t(rotary_dims / 2);
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(rotary_dims));
  }
  return t;
}

RotaryCache::RotaryCache(std::size_t head_dim, double rotary_pct, std::size_t max_positions, double base)
    : head_dim_(head_dim), max_positions_(max_positions) {
  rotary_dims_ = static_cast<std::size_t>(std::floor(rotary_pct * static_cast<double>(head_dim))) & ~std::size_t{1};
  thetas_ = rotary_thetas(rotary_dims_, base);
  const std::size_t half = rotary_dims_ / 2;
  cos_.resize(max_positions * half);
  sin_.resize(max_positions * half);
  for (std::size_t m = 0; m < max_positions; ++m) {
    for (std::size_t i = 0; i < half; ++i) {
      const double angle = static_cast<double>(m) * thetas_[i];
      cos_[m * half + i] = std::cos(angle);
      sin_[m * half + i] = std::sin(angle);
    }
  }
}

void RotaryCache::rotate(std::span<double> v, std::size_t position, int sign) const {
  if (position >= max_positions_) {
    throw ValidationError("position " + std::to_string(position) + " out of range (max-position-embeddings " +
                          std::to_string(max_positions_) + ")");
  }
  if (v.size() != head_dim_) throw ValidationError("rotary input length does not match head_dim");
  if (position == 0) return;
  const std::size_t half = rotary_dims_ / 2;
  const double* c = cos_.data() + position * half;
  const double* s = sin_.data() + position * half;
  for (std::size_t i = 0; i < half; ++i) {
    const double x0 = v[2 * i], x1 = v[2 * i + 1];
    const double si = sign * s[i];
    v[2 * i] = x0 * c[i] - x1 * si;
    v[2 * i + 1] = x0 * si + x1 * c[i];
  }
}

Vector apply_rotary(std::span<const double> x, std::size_t position, const RotaryCache& cache) {
  Vector out(x.begin(), x.end());
  cache.rotate(out, position);
  return out;
}

Matrix attention_scores(const Matrix& q_states, const Matrix& k_states, std::span<const std::size_t> positions,
                        const RotaryCache& cache) {
  const std::size_t T = q_states.rows;
  if (k_states.rows != T || positions.size() != T || q_states.cols != cache.head_dim() ||
      k_states.cols != cache.head_dim()) {
    throw ValidationError("attention_scores: shape mismatch");
  }
  Matrix q = q_states, kk = k_states;
  for (std::size_t t = 0; t < T; ++t) {
    cache.rotate(q.row(t), positions[t]);
    cache.rotate(kk.row(t), positions[t]);
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(cache.head_dim()));
  Matrix s(T, T);
  for (std::size_t m = 0; m < T; ++m) {
    for (std::size_t n = 0; n < T; ++n) {
      s.at(m, n) = n <= m ? k::dot(q.row(m), kk.row(n)) * scale : -std::numeric_limits<double>::infinity();
    }
  }
  return s;
}

void softmax_rows(Matrix& m) {
  for (std::size_t r = 0; r < m.rows; ++r) {
    auto row = m.row(r);
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : row) mx = std::max(mx, v);
    double sum = 0.0;
    for (double& v : row) {
      v = std::isinf(v) && v < 0 ? 0.0 : std::exp(v - mx);
      sum += v;
    }
    for (double& v : row) v /= sum;
  }
}

namespace {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x))); }

double gelu_grad(double x) {
  const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

namespace {

// y = W x + b per row of x.
Matrix linear(const Matrix& x, const Matrix& w, const Vector& b) {
  Matrix y(x.rows, w.rows);
  for (std::size_t t = 0; t < x.rows; ++t) k::matvec(w.data, w.rows, w.cols, x.row(t), b, y.row(t));
  return y;
}

// Accumulates dx += dy W, dW += dy^T x, db += sum dy.
void linear_backward(const Matrix& dy, const Matrix& x, const Matrix& w, Matrix* dx, Matrix& dw, Vector& db) {
  for (std::size_t t = 0; t < dy.rows; ++t) {
    auto g = dy.row(t);
    for (std::size_t o = 0; o < w.rows; ++o) {
      if (g[o] == 0.0) continue;
      if (dx) k::axpy(g[o], w.row(o), dx->row(t));
      k::axpy(g[o], x.row(t), dw.row(o));
      db[o] += g[o];
    }
  }
}

struct NormCache {
  Matrix xhat;
  Vector rstd;
};

Matrix layer_norm_fwd(const Matrix& x, const LayerNorm& ln, NormCache* cache) {
  const std::size_t d = x.cols;
  Matrix y(x.rows, d);
  if (cache) {
    cache->xhat = Matrix(x.rows, d);
    cache->rstd.assign(x.rows, 0.0);
  }
  for (std::size_t t = 0; t < x.rows; ++t) {
    auto xr = x.row(t);
    double mean = 0.0;
    for (double v : xr) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : xr) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t i = 0; i < d; ++i) {
      const double xh = (xr[i] - mean) * rstd;
      y.at(t, i) = xh * ln.gain[i] + ln.bias[i];
      if (cache) cache->xhat.at(t, i) = xh;
    }
    if (cache) cache->rstd[t] = rstd;
  }
  return y;
}

void layer_norm_bwd(const Matrix& dy, const NormCache& c, const LayerNorm& ln, LayerNorm& dln, Matrix& dx) {
  const std::size_t d = dy.cols;
  Vector dxhat(d);
  for (std::size_t t = 0; t < dy.rows; ++t) {
    double m1 = 0.0, m2 = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double g = dy.at(t, i);
      const double xh = c.xhat.at(t, i);
      dln.gain[i] += g * xh;
      dln.bias[i] += g;
      dxhat[i] = g * ln.gain[i];
      m1 += dxhat[i];
      m2 += dxhat[i] * xh;
    }
    m1 /= static_cast<double>(d);
    m2 /= static_cast<double>(d);
    for (std::size_t i = 0; i < d; ++i) dx.at(t, i) += c.rstd[t] * (dxhat[i] - m1 - c.xhat.at(t, i) * m2);
  }
}

struct AttnCache {
  Matrix q, k, v;  // q and k already rotated
  std::vector<Matrix> probs;  // per head, T x T
  Matrix heads;  // concatenated per-head outputs, before W_o
};

// Attention core after the q/k/v projections. Rotates q and k in place.
Matrix attend(Matrix q, Matrix kk, Matrix v, std::size_t num_heads, const RotaryCache& cache,
              std::size_t first_position, AttnCache* out) {
  const std::size_t T = q.rows, d = q.cols, hd = d / num_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t h = 0; h < num_heads; ++h) {
      cache.rotate(q.row(t).subspan(h * hd, hd), first_position + t);
      cache.rotate(kk.row(t).subspan(h * hd, hd), first_position + t);
    }
  }
  Matrix heads(T, d);
  std::vector<Matrix> probs;
  for (std::size_t h = 0; h < num_heads; ++h) {
    Matrix p(T, T);
    for (std::size_t m = 0; m < T; ++m) {
      auto qm = q.row(m).subspan(h * hd, hd);
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t n = 0; n <= m; ++n) {
        p.at(m, n) = k::dot(qm, kk.row(n).subspan(h * hd, hd)) * scale;
        mx = std::max(mx, p.at(m, n));
      }
      double sum = 0.0;
      for (std::size_t n = 0; n <= m; ++n) {
        p.at(m, n) = std::exp(p.at(m, n) - mx);
        sum += p.at(m, n);
      }
      auto om = heads.row(m).subspan(h * hd, hd);
      for (std::size_t n = 0; n <= m; ++n) {
        p.at(m, n) /= sum;
        k::axpy(p.at(m, n), v.row(n).subspan(h * hd, hd), om);
      }
    }
    if (out) probs.push_back(std::move(p));
  }
  if (out) {
    out->q = std::move(q);
    out->k = std::move(kk);
    out->v = std::move(v);
    out->probs = std::move(probs);
    out->heads = heads;
  }
  return heads;
}

struct BlockCache {
  NormCache n1, n2;
  Matrix a, f;  // LN1(x), LN2(x)
  AttnCache attn;
  Matrix u, g;  // MLP pre- and post-activation
};

Matrix block_forward(const Matrix& x, const Block& b, std::size_t num_heads, const RotaryCache& rc,
                     std::size_t first_position, BlockCache* c) {
  NormCache n1, n2;
  Matrix a = layer_norm_fwd(x, b.ln1, c ? &n1 : nullptr);
  Matrix f = layer_norm_fwd(x, b.ln2, c ? &n2 : nullptr);
  Matrix heads = attend(linear(a, b.wq, b.bq), linear(a, b.wk, b.bk), linear(a, b.wv, b.bv), num_heads, rc,
                        first_position, c ? &c->attn : nullptr);
  Matrix attn_out = linear(heads, b.wo, b.bo);
  Matrix u = linear(f, b.w_up, b.b_up);
  Matrix g = u;
  for (double& v : g.data) v = gelu(v);
  Matrix ff_out = linear(g, b.w_down, b.b_down);
  Matrix y = x;
  for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += attn_out.data[i] + ff_out.data[i];
  if (c) {
    c->n1 = std::move(n1);
    c->n2 = std::move(n2);
    c->a = std::move(a);
    c->f = std::move(f);
    c->u = std::move(u);
    c->g = std::move(g);
  }
  return y;
}

// Given dL/dy for the block output, accumulates parameter gradients into gb
// and returns dL/dx.
Matrix block_backward(const Matrix& dy, const Block& b, const BlockCache& c, std::size_t num_heads,
                      const RotaryCache& rc, std::size_t first_position, Block& gb) {
  const std::size_t T = dy.rows, d = dy.cols, hd = d / num_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  Matrix dx = dy;  // residual path

  // Feed-forward branch.
  Matrix dg(T, c.g.cols);
  linear_backward(dy, c.g, b.w_down, &dg, gb.w_down, gb.b_down);
  for (std::size_t i = 0; i < dg.data.size(); ++i) dg.data[i] *= gelu_grad(c.u.data[i]);
  Matrix df(T, d);
  linear_backward(dg, c.f, b.w_up, &df, gb.w_up, gb.b_up);
  layer_norm_bwd(df, c.n2, b.ln2, gb.ln2, dx);

  // Attention branch.
  Matrix dheads(T, d);
  linear_backward(dy, c.attn.heads, b.wo, &dheads, gb.wo, gb.bo);
  Matrix dq(T, d), dk(T, d), dv(T, d);
  Vector dp(T);
  for (std::size_t h = 0; h < num_heads; ++h) {
    const Matrix& p = c.attn.probs[h];
    for (std::size_t m = 0; m < T; ++m) {
      auto dom = dheads.row(m).subspan(h * hd, hd);
      double rowsum = 0.0;
      for (std::size_t n = 0; n <= m; ++n) {
        dp[n] = k::dot(dom, c.attn.v.row(n).subspan(h * hd, hd));
        rowsum += p.at(m, n) * dp[n];
        k::axpy(p.at(m, n), dom, dv.row(n).subspan(h * hd, hd));
      }
      auto qm = c.attn.q.row(m).subspan(h * hd, hd);
      auto dqm = dq.row(m).subspan(h * hd, hd);
      for (std::size_t n = 0; n <= m; ++n) {
        const double ds = p.at(m, n) * (dp[n] - rowsum) * scale;
        if (ds == 0.0) continue;
        k::axpy(ds, c.attn.k.row(n).subspan(h * hd, hd), dqm);
        k::axpy(ds, qm, dk.row(n).subspan(h * hd, hd));
      }
    }
  }
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t h = 0; h < num_heads; ++h) {
      rc.rotate(dq.row(t).subspan(h * hd, hd), first_position + t, -1);
      rc.rotate(dk.row(t).subspan(h * hd, hd), first_position + t, -1);
    }
  }
  Matrix da(T, d);
  linear_backward(dq, c.a, b.wq, &da, gb.wq, gb.bq);
  linear_backward(dk, c.a, b.wk, &da, gb.wk, gb.bk);
  linear_backward(dv, c.a, b.wv, &da, gb.wv, gb.bv);
  layer_norm_bwd(da, c.n1, b.ln1, gb.ln1, dx);
  return dx;
}

void check_finite(const Matrix& x) {
  for (double v : x.data) {
    if (!std::isfinite(v)) throw ValidationError("parallel_block_forward: input contains a non-finite value");
  }
}

}  // namespace

Matrix layer_norm(const Matrix& x, const LayerNorm& ln) {
  if (ln.gain.size() != x.cols || ln.bias.size() != x.cols) throw ValidationError("layer_norm: shape mismatch");
  return layer_norm_fwd(x, ln, nullptr);
}

Matrix attention_branch(const Block& block, const Matrix& normed, const RotaryCache& cache,
                        std::size_t first_position) {
  const std::size_t heads = normed.cols / cache.head_dim();
  if (heads * cache.head_dim() != normed.cols || block.wq.cols != normed.cols) {
    throw ValidationError("attention_branch: shape mismatch");
  }
  Matrix h = attend(linear(normed, block.wq, block.bq), linear(normed, block.wk, block.bk),
                    linear(normed, block.wv, block.bv), heads, cache, first_position, nullptr);
  return linear(h, block.wo, block.bo);
}

Matrix feed_forward_branch(const Block& block, const Matrix& normed) {
  if (block.w_up.cols != normed.cols) throw ValidationError("feed_forward_branch: shape mismatch");
  Matrix u = linear(normed, block.w_up, block.b_up);
  for (double& v : u.data) v = gelu(v);
  return linear(u, block.w_down, block.b_down);
}

Matrix parallel_block_forward(const Matrix& x, const Block& block, const RotaryCache& cache,
                              std::size_t first_position) {
  check_finite(x);
  if (block.wq.cols != x.cols || x.cols % cache.head_dim() != 0) {
    throw ValidationError("parallel_block_forward: shape mismatch");
  }
  return block_forward(x, block, x.cols / cache.head_dim(), cache, first_position, nullptr);
}

LMModel::LMModel(ModelConfig config, Params params) : config_(config), params_(std::move(params)) {
  config_.validate();
  const Params shape = zeros_like(config_);
  if (params_.blocks.size() != shape.blocks.size()) throw ValidationError("parameter layer count mismatch");
  std::vector<std::size_t> want;
  for_each_param(shape, [&](const std::string&, std::span<const double> v, ParamKind) { want.push_back(v.size()); });
  std::size_t i = 0;
  for_each_param(static_cast<const Params&>(params_), [&](const std::string& name, std::span<const double> v,
                                                          ParamKind) {
    if (v.size() != want[i++]) throw ValidationError("parameter " + name + " has the wrong size");
  });
  rotary_ = RotaryCache(config_.head_dim(), config_.rotary_pct, config_.max_positions, config_.rotary_base);
}

double output_init_std(const ModelConfig& c) {
  return 2.0 / (static_cast<double>(c.num_layers) * std::sqrt(static_cast<double>(c.hidden_size)));
}

double small_init_std(const ModelConfig& c) {
  return std::sqrt(2.0 / (5.0 * static_cast<double>(c.hidden_size)));
}

LMModel init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Params p = zeros_like(config);
  std::mt19937_64 rng(seed);
  auto fill = [&rng](Matrix& m, double std) {
    std::normal_distribution<double> dist(0.0, std);
    for (double& v : m.data) v = dist(rng);
  };
  const double small = small_init_std(config);
  const double out = output_init_std(config);
  fill(p.embed, small);
  for (auto& b : p.blocks) {
    std::fill(b.ln1.gain.begin(), b.ln1.gain.end(), 1.0);
    std::fill(b.ln2.gain.begin(), b.ln2.gain.end(), 1.0);
    fill(b.wq, small);
    fill(b.wk, small);
    fill(b.wv, small);
    fill(b.wo, out);
    fill(b.w_up, small);
    fill(b.w_down, out);
  }
  std::fill(p.final_ln.gain.begin(), p.final_ln.gain.end(), 1.0);
  fill(p.unembed, small);
  return LMModel(config, std::move(p));
}

namespace {

void check_ids(const ModelConfig& c, std::span<const TokenId> ids, std::size_t min_len) {
  if (ids.size() < min_len) {
    throw ValidationError("need at least " + std::to_string(min_len) + " tokens, got " + std::to_string(ids.size()));
  }
  if (ids.size() > c.max_positions) {
    throw ValidationError("sequence of " + std::to_string(ids.size()) + " tokens exceeds max-position-embeddings " +
                          std::to_string(c.max_positions));
  }
  for (std::size_t t = 0; t < ids.size(); ++t) {
    if (ids[t] < 0 || static_cast<std::size_t>(ids[t]) >= c.vocab_size) {
      throw ValidationError("token id " + std::to_string(ids[t]) + " at position " + std::to_string(t) +
                            " is outside the vocabulary of " + std::to_string(c.vocab_size));
    }
  }
}

struct ForwardCache {
  std::vector<Matrix> inputs;  // per block input
  std::vector<BlockCache> blocks;
  NormCache final_norm;
  Matrix z;  // final normalized hidden states
};

Matrix run_forward(const LMModel& model, std::span<const TokenId> ids, ForwardCache* fc) {
  const auto& c = model.config();
  const auto& p = model.params();
  Matrix x(ids.size(), c.hidden_size);
  for (std::size_t t = 0; t < ids.size(); ++t) {
    auto e = p.embed.row(static_cast<std::size_t>(ids[t]));
    std::copy(e.begin(), e.end(), x.row(t).begin());
  }
  if (fc) fc->blocks.resize(p.blocks.size());
  for (std::size_t l = 0; l < p.blocks.size(); ++l) {
    Matrix y = block_forward(x, p.blocks[l], c.num_heads, model.rotary(), 0, fc ? &fc->blocks[l] : nullptr);
    if (fc) fc->inputs.push_back(std::move(x));
    x = std::move(y);
  }
  Matrix z = layer_norm_fwd(x, p.final_ln, fc ? &fc->final_norm : nullptr);
  Matrix logits(ids.size(), c.vocab_size);
  for (std::size_t t = 0; t < ids.size(); ++t) {
    k::matvec(p.unembed.data, c.vocab_size, c.hidden_size, z.row(t), {}, logits.row(t));
  }
  if (fc) fc->z = std::move(z);
  return logits;
}

// Mean cross-entropy; when dlogits is non-null it receives d(loss)/d(logits).
double cross_entropy(const Matrix& logits, std::span<const TokenId> ids, Matrix* dlogits) {
  const std::size_t n = ids.size() - 1;
  double total = 0.0;
  if (dlogits) *dlogits = Matrix(logits.rows, logits.cols);
  for (std::size_t t = 0; t < n; ++t) {
    auto row = logits.row(t);
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : row) mx = std::max(mx, v);
    double sum = 0.0;
    for (double v : row) sum += std::exp(v - mx);
    const double lse = mx + std::log(sum);
    const auto target = static_cast<std::size_t>(ids[t + 1]);
    total += lse - row[target];
    if (dlogits) {
      auto g = dlogits->row(t);
      for (std::size_t v = 0; v < row.size(); ++v) g[v] = std::exp(row[v] - lse) / static_cast<double>(n);
      g[target] -= 1.0 / static_cast<double>(n);
    }
  }
  return total / static_cast<double>(n);
}

}  // namespace

Matrix forward_logits(const LMModel& model, std::span<const TokenId> ids) {
  check_ids(model.config(), ids, 1);
  return run_forward(model, ids, nullptr);
}

LossResult forward_loss(const LMModel& model, std::span<const TokenId> ids) {
  check_ids(model.config(), ids, 2);
  LossResult r;
  r.logits = run_forward(model, ids, nullptr);
  r.loss = cross_entropy(r.logits, ids, nullptr);
  return r;
}

double accumulate_gradients(const LMModel& model, std::span<const TokenId> ids, double weight, Params& grads) {
  const auto& c = model.config();
  const auto& p = model.params();
  check_ids(c, ids, 2);
  ForwardCache fc;
  const Matrix logits = run_forward(model, ids, &fc);
  Matrix dlogits;
  const double loss = cross_entropy(logits, ids, &dlogits);
  if (weight != 1.0) {
    for (double& v : dlogits.data) v *= weight;
  }

  const std::size_t T = ids.size();
  Matrix dz(T, c.hidden_size);
  for (std::size_t t = 0; t < T; ++t) {
    auto g = dlogits.row(t);
    for (std::size_t v = 0; v < c.vocab_size; ++v) {
      if (g[v] == 0.0) continue;
      k::axpy(g[v], p.unembed.row(v), dz.row(t));
      k::axpy(g[v], fc.z.row(t), grads.unembed.row(v));
    }
  }
  Matrix dx(T, c.hidden_size);
  layer_norm_bwd(dz, fc.final_norm, p.final_ln, grads.final_ln, dx);
  for (std::size_t l = p.blocks.size(); l-- > 0;) {
    dx = block_backward(dx, p.blocks[l], fc.blocks[l], c.num_heads, model.rotary(), 0, grads.blocks[l]);
  }
  for (std::size_t t = 0; t < T; ++t) k::axpy(1.0, dx.row(t), grads.embed.row(static_cast<std::size_t>(ids[t])));
  return loss;
}

LossAndGrad backward(const LMModel& model, std::span<const TokenId> ids) {
  LossAndGrad r;
  r.grads = zeros_like(model.config());
  r.loss = accumulate_gradients(model, ids, 1.0, r.grads);
  return r;
}

}  // namespace neox::model
