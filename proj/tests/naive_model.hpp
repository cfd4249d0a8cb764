#pragma once

// Straightforward reference implementation of the transformer, written with
// plain nested vectors and no shared code with the library's forward pass.

#include <cmath>
#include <vector>

#include "neox/model.hpp"

namespace naive {

using Mat = std::vector<std::vector<double>>;
using Vec = std::vector<double>;

inline Mat from(const neox::model::Matrix& m) {
  Mat out(m.rows, Vec(m.cols));
  for (std::size_t r = 0; r < m.rows; ++r)
    for (std::size_t c = 0; c < m.cols; ++c) out[r][c] = m.at(r, c);
  return out;
}

inline Vec matvec(const neox::model::Matrix& w, const Vec& x, const Vec& b) {
  Vec y(w.rows);
  for (std::size_t o = 0; o < w.rows; ++o) {
    double s = b.empty() ? 0.0 : b[o];
    for (std::size_t i = 0; i < w.cols; ++i) s += w.data[o * w.cols + i] * x[i];
    y[o] = s;
  }
  return y;
}

inline Mat layer_norm(const Mat& x, const neox::model::LayerNorm& ln) {
  Mat y = x;
  for (std::size_t t = 0; t < x.size(); ++t) {
    const double n = static_cast<double>(x[t].size());
    double mean = 0;
    for (double v : x[t]) mean += v;
    mean /= n;
    double var = 0;
    for (double v : x[t]) var += (v - mean) * (v - mean);
    var /= n;
    for (std::size_t i = 0; i < x[t].size(); ++i)
      y[t][i] = (x[t][i] - mean) / std::sqrt(var + 1e-5) * ln.gain[i] + ln.bias[i];
  }
  return y;
}

// Rotation computed from the angle directly, in long double.
inline Vec rotate(Vec v, std::size_t pos, std::size_t d_rot, double base) {
  for (std::size_t i = 0; i < d_rot / 2; ++i) {
    const long double theta = std::pow(static_cast<long double>(base), -2.0L * i / static_cast<long double>(d_rot));
    const long double a = theta * static_cast<long double>(pos);
    const long double c = std::cos(a), s = std::sin(a);
    const long double x0 = v[2 * i], x1 = v[2 * i + 1];
    v[2 * i] = static_cast<double>(x0 * c - x1 * s);
    v[2 * i + 1] = static_cast<double>(x0 * s + x1 * c);
  }
  return v;
}

inline double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (x + 0.044715 * x * x * x)));
}

inline Mat attention(const neox::model::Block& b, const Mat& a, std::size_t heads, std::size_t d_rot, double base,
                     std::size_t first_pos = 0) {
  const std::size_t T = a.size(), d = a[0].size(), hd = d / heads;
  Mat q(T), k(T), v(T);
  for (std::size_t t = 0; t < T; ++t) {
    q[t] = matvec(b.wq, a[t], b.bq);
    k[t] = matvec(b.wk, a[t], b.bk);
    v[t] = matvec(b.wv, a[t], b.bv);
  }
  Mat concat(T, Vec(d, 0.0));
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t m = 0; m < T; ++m) {
      Vec qm(q[m].begin() + h * hd, q[m].begin() + (h + 1) * hd);
      qm = rotate(qm, first_pos + m, d_rot, base);
      Vec s(m + 1);
      double mx = -1e300;
      for (std::size_t n = 0; n <= m; ++n) {
        Vec kn(k[n].begin() + h * hd, k[n].begin() + (h + 1) * hd);
        kn = rotate(kn, first_pos + n, d_rot, base);
        double dot = 0;
        for (std::size_t i = 0; i < hd; ++i) dot += qm[i] * kn[i];
        s[n] = dot / std::sqrt(static_cast<double>(hd));
        mx = std::max(mx, s[n]);
      }
      double z = 0;
      for (double& x : s) z += (x = std::exp(x - mx));
      for (std::size_t n = 0; n <= m; ++n)
        for (std::size_t i = 0; i < hd; ++i) concat[m][h * hd + i] += s[n] / z * v[n][h * hd + i];
    }
  }
  Mat out(T);
  for (std::size_t t = 0; t < T; ++t) out[t] = matvec(b.wo, concat[t], b.bo);
  return out;
}

inline Mat feed_forward(const neox::model::Block& b, const Mat& f) {
  Mat out(f.size());
  for (std::size_t t = 0; t < f.size(); ++t) {
    Vec u = matvec(b.w_up, f[t], b.b_up);
    for (double& x : u) x = gelu(x);
    out[t] = matvec(b.w_down, u, b.b_down);
  }
  return out;
}

inline Mat block(const Mat& x, const neox::model::Block& b, std::size_t heads, std::size_t d_rot, double base) {
  const Mat att = attention(b, layer_norm(x, b.ln1), heads, d_rot, base);
  const Mat ff = feed_forward(b, layer_norm(x, b.ln2));
  Mat y = x;
  for (std::size_t t = 0; t < x.size(); ++t)
    for (std::size_t i = 0; i < x[t].size(); ++i) y[t][i] += att[t][i] + ff[t][i];
  return y;
}

inline double loss(const neox::model::LMModel& m, const std::vector<neox::tok::TokenId>& ids) {
  const auto& c = m.config();
  const auto& p = m.params();
  Mat x(ids.size());
  for (std::size_t t = 0; t < ids.size(); ++t) {
    x[t].assign(p.embed.data.begin() + ids[t] * c.hidden_size, p.embed.data.begin() + (ids[t] + 1) * c.hidden_size);
  }
  for (const auto& b : p.blocks) x = block(x, b, c.num_heads, c.rotary_dims(), c.rotary_base);
  x = layer_norm(x, p.final_ln);
  double total = 0;
  for (std::size_t t = 0; t + 1 < ids.size(); ++t) {
    const Vec logits = matvec(p.unembed, x[t], {});
    double mx = -1e300;
    for (double l : logits) mx = std::max(mx, l);
    double z = 0;
    for (double l : logits) z += std::exp(l - mx);
    total += mx + std::log(z) - logits[ids[t + 1]];
  }
  return total / static_cast<double>(ids.size() - 1);
}

}  // namespace naive
