// Naive attention oracles over explicit token lists, shared by the unit and
// acceptance tests.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "csifb/model.hpp"

namespace testutil {

using csifb::ad::Tensor;
using csifb::model::ModelParams;

using Mat = std::vector<std::vector<double>>;

// Tokens of a [d x L x L] map in row-major scan order.
inline Mat tokens_of(const Tensor& x) {
  const std::size_t d = x.dim(0), l = x.dim(1);
  Mat t(l * l, std::vector<double>(d));
  for (std::size_t ch = 0; ch < d; ++ch)
    for (std::size_t i = 0; i < l * l; ++i) t[i][ch] = x.values()[ch * l * l + i];
  return t;
}

inline Mat naive_norm(const Mat& x, const ModelParams& p, const std::string& name) {
  Mat out = x;
  const auto gain = p.at(name + ".gain").values();
  const auto bias = p.at(name + ".bias").values();
  for (auto& row : out) {
    double mean = 0.0, var = 0.0;
    for (double v : row) mean += v / static_cast<double>(row.size());
    for (double v : row) var += (v - mean) * (v - mean) / static_cast<double>(row.size());
    for (std::size_t j = 0; j < row.size(); ++j) row[j] = (row[j] - mean) / std::sqrt(var + 1e-5) * gain[j] + bias[j];
  }
  return out;
}

inline Mat naive_linear(const Mat& x, const ModelParams& p, const std::string& name) {
  const Tensor& w = p.at(name + ".weight");
  const auto b = p.at(name + ".bias").values();
  const std::size_t in = w.dim(0), out_f = w.dim(1);
  Mat y(x.size(), std::vector<double>(out_f));
  for (std::size_t r = 0; r < x.size(); ++r)
    for (std::size_t o = 0; o < out_f; ++o) {
      double s = b[o];
      for (std::size_t i = 0; i < in; ++i) s += x[r][i] * w.values()[i * out_f + o];
      y[r][o] = s;
    }
  return y;
}

// Full multi-head attention of every query over every key, restricted by `allowed`.
inline Mat naive_attention(const Mat& queries, const Mat& keys, const ModelParams& p, const std::string& name,
                    std::size_t heads, const std::function<bool(std::size_t, std::size_t)>& allowed) {
  Mat q = naive_linear(queries, p, name + ".q");
  Mat k = naive_linear(keys, p, name + ".k");
  Mat v = naive_linear(keys, p, name + ".v");
  const std::size_t d = q[0].size(), dh = d / heads;
  Mat mixed(q.size(), std::vector<double>(d, 0.0));
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t t = 0; t < q.size(); ++t) {
      std::vector<double> score(k.size(), -INFINITY);
      double top = -INFINITY;
      for (std::size_t u = 0; u < k.size(); ++u) {
        if (!allowed(t, u)) continue;
        double s = 0.0;
        for (std::size_t j = h * dh; j < (h + 1) * dh; ++j) s += q[t][j] * k[u][j];
        score[u] = s / std::sqrt(static_cast<double>(dh));
        top = std::max(top, score[u]);
      }
      double z = 0.0;
      for (double& s : score) z += (s = std::exp(s - top));
      for (std::size_t u = 0; u < k.size(); ++u)
        for (std::size_t j = h * dh; j < (h + 1) * dh; ++j) mixed[t][j] += score[u] / z * v[u][j];
    }
  }
  return naive_linear(mixed, p, name + ".out");
}

inline Mat naive_lsa(const Tensor& x, const ModelParams& p, const std::string& prefix) {
  const auto& c = p.config();
  const std::size_t l = c.side(), w = c.window;
  Mat tok = tokens_of(x);
  Mat h = naive_norm(tok, p, prefix + ".lsa.norm");
  auto window_of = [&](std::size_t t) { return (t / l / w) * (l / w) + (t % l) / w; };
  Mat att = naive_attention(h, h, p, prefix + ".lsa", c.heads,
                            [&](std::size_t a, std::size_t b) { return window_of(a) == window_of(b); });
  for (std::size_t t = 0; t < tok.size(); ++t)
    for (std::size_t j = 0; j < tok[t].size(); ++j) att[t][j] += tok[t][j];
  return att;
}

inline Mat naive_gsa(const Tensor& x, const ModelParams& p, const std::string& prefix) {
  const auto& c = p.config();
  const std::size_t l = c.side(), w = c.window, m = c.partitions(), d = c.embed_dim;
  Mat tok = tokens_of(x);
  Mat h = naive_norm(tok, p, prefix + ".gsa.norm");
  // One explicit summary token per window: W x W convolution at stride W.
  const Tensor& kw = p.at(prefix + ".gsa.summary.weight");
  const auto kb = p.at(prefix + ".gsa.summary.bias").values();
  Mat summary(m * m, std::vector<double>(d));
  for (std::size_t wr = 0; wr < m; ++wr)
    for (std::size_t wc = 0; wc < m; ++wc)
      for (std::size_t o = 0; o < d; ++o) {
        double s = kb[o];
        for (std::size_t ch = 0; ch < d; ++ch)
          for (std::size_t i = 0; i < w; ++i)
            for (std::size_t j = 0; j < w; ++j)
              s += kw.values()[((o * d + ch) * w + i) * w + j] * h[(wr * w + i) * l + wc * w + j][ch];
        summary[wr * m + wc][o] = s;
      }
  Mat att = naive_attention(h, summary, p, prefix + ".gsa", c.heads, [](std::size_t, std::size_t) { return true; });
  for (std::size_t t = 0; t < tok.size(); ++t)
    for (std::size_t j = 0; j < tok[t].size(); ++j) att[t][j] += tok[t][j];
  return att;
}

inline double max_token_diff(const Tensor& y, const Mat& expect) {
  const Mat got = tokens_of(y);
  if (got.size() != expect.size()) return INFINITY;
  double worst = 0.0;
  for (std::size_t t = 0; t < got.size(); ++t)
    for (std::size_t j = 0; j < got[t].size(); ++j) worst = std::max(worst, std::abs(got[t][j] - expect[t][j]));
  return worst;
}

}  // namespace testutil
