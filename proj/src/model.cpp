/**
 * @file model.cpp
 * @brief STQENet forward pass built from the autodiff ops.
 */
#include "csifb/model.hpp"

#include <cmath>
#include <random>

#include "csifb/errors.hpp"
#include "csifb/ops.hpp"

namespace csifb::model {

using ad::Tensor;

void ModelConfig::validate() const {
  auto fail = [](const std::string& why) { throw UsageError("model config: " + why); };
  if (nc == 0 || nt == 0) fail("nc and nt must be positive");
  if (nc != nt) fail("the 2 x Nc x Nt input is treated as two L x L maps, so nc must equal nt");
  if (window == 0 || side() % window != 0) fail("window " + std::to_string(window) + " must divide L = " + std::to_string(side()));
  if (embed_dim == 0 || heads == 0 || embed_dim % heads != 0) {
    fail("embed_dim " + std::to_string(embed_dim) + " must be divisible by heads " + std::to_string(heads));
  }
  if (latent == 0 || latent > input_size()) fail("latent must be in [1, 2*nc*nt]");
  if (cr_width == 0 || mlp_ratio == 0) fail("cr_width and mlp_ratio must be positive");
}

namespace {

void add_linear(std::vector<ParamSpec>& out, const std::string& name, std::size_t in, std::size_t features,
                ParamKind kind = ParamKind::kWeight) {
  out.push_back({name + ".weight", {in, features}, kind, in});
  out.push_back({name + ".bias", {features}, ParamKind::kBias, in});
}

void add_conv(std::vector<ParamSpec>& out, const std::string& name, std::size_t out_c, std::size_t in_c,
              std::size_t kh, std::size_t kw) {
  out.push_back({name + ".weight", {out_c, in_c, kh, kw}, ParamKind::kWeight, in_c * kh * kw});
  out.push_back({name + ".bias", {out_c}, ParamKind::kBias, in_c * kh * kw});
}

void add_norm(std::vector<ParamSpec>& out, const std::string& name, std::size_t d) {
  out.push_back({name + ".gain", {d}, ParamKind::kGain, 0});
  out.push_back({name + ".bias", {d}, ParamKind::kBias, 0});
}

void add_attention(std::vector<ParamSpec>& out, const std::string& name, std::size_t d) {
  add_norm(out, name + ".norm", d);
  for (const char* proj : {".q", ".k", ".v"}) add_linear(out, name + proj, d, d);
  add_linear(out, name + ".out", d, d, ParamKind::kResidualOut);
}

void add_stb(std::vector<ParamSpec>& out, const std::string& name, const ModelConfig& c) {
  const std::size_t d = c.embed_dim;
  add_attention(out, name + ".lsa", d);
  add_attention(out, name + ".gsa", d);
  add_conv(out, name + ".gsa.summary", d, d, c.window, c.window);
  add_norm(out, name + ".mlp.norm", d);
  add_linear(out, name + ".mlp.fc1", d, c.mlp_ratio * d);
  add_linear(out, name + ".mlp.fc2", c.mlp_ratio * d, d, ParamKind::kResidualOut);
}

void add_cr(std::vector<ParamSpec>& out, const std::string& name, const ModelConfig& c) {
  const std::size_t w = c.cr_width;
  add_conv(out, name + ".path3x3", w, 2, 3, 3);
  add_conv(out, name + ".path1x9", w, 2, 1, 9);
  add_conv(out, name + ".path9x1", w, w, 9, 1);
  add_conv(out, name + ".merge", 2, 2 * w, 1, 1);
}

float uniform_float(std::mt19937_64& rng, double bound) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  return static_cast<float>(dist(rng));
}

}  // namespace

std::vector<ParamSpec> param_specs(const ModelConfig& c) {
  c.validate();
  const std::size_t d = c.embed_dim;
  const std::size_t n = c.input_size();
  std::vector<ParamSpec> out;
  add_conv(out, "enc.conv_in", d, 2, 3, 3);
  for (std::size_t i = 0; i < c.stb_count; ++i) add_stb(out, "enc.stb" + std::to_string(i), c);
  add_conv(out, "enc.conv_out", 2, d, 3, 3);
  add_linear(out, "enc.fc", n, c.latent);

  add_linear(out, "dec.fc", c.latent, n);
  // Transposed conv kernels are stored [in x out x kh x kw].
  out.push_back({"dec.a.convt.weight", {2, d, 3, 3}, ParamKind::kWeight, 2 * 9});
  out.push_back({"dec.a.convt.bias", {d}, ParamKind::kBias, 2 * 9});
  for (std::size_t i = 0; i < c.stb_count; ++i) add_stb(out, "dec.a.stb" + std::to_string(i), c);
  add_conv(out, "dec.a.conv_out", 2, d, 3, 3);
  for (std::size_t i = 0; i < c.cr_count; ++i) add_cr(out, "dec.b.cr" + std::to_string(i), c);
  add_conv(out, "dec.conv_out", 2, 2, 3, 3);
  return out;
}

std::size_t param_count(const ModelConfig& config) {
  std::size_t total = 0;
  for (const auto& spec : param_specs(config)) total += ad::numel(spec.shape);
  return total;
}

ModelParams ModelParams::initialize(const ModelConfig& config, std::uint64_t seed) {
  ModelParams p;
  p.config_ = config;
  std::mt19937_64 rng(seed);
  for (const auto& spec : param_specs(config)) {
    std::vector<double> values(ad::numel(spec.shape));
    switch (spec.kind) {
      case ParamKind::kWeight: {
        const double bound = 1.0 / std::sqrt(static_cast<double>(spec.fan_in));
        for (double& v : values) v = uniform_float(rng, bound);
        break;
      }
      case ParamKind::kResidualOut:
      case ParamKind::kBias:
        break;
      case ParamKind::kGain:
        std::fill(values.begin(), values.end(), 1.0);
        break;
    }
    p.table_.emplace(spec.name, Tensor(spec.shape, std::move(values), true));
  }
  return p;
}

ModelParams ModelParams::from_table(const ModelConfig& config, std::map<std::string, Tensor> table) {
  const auto specs = param_specs(config);
  ModelParams p;
  p.config_ = config;
  for (const auto& spec : specs) {
    auto it = table.find(spec.name);
    if (it == table.end()) throw DataError(DataError::Kind::kCorrupt, "missing parameter " + spec.name);
    if (it->second.shape() != spec.shape) {
      throw DataError(DataError::Kind::kExtentMismatch, "parameter " + spec.name + " has shape " +
                                                            ad::to_string(it->second.shape()) + ", expected " +
                                                            ad::to_string(spec.shape));
    }
    p.table_.emplace(spec.name, it->second.detach(true));
  }
  if (p.table_.size() != table.size()) {
    throw DataError(DataError::Kind::kCorrupt, "unexpected extra parameters in table");
  }
  return p;
}

const Tensor& ModelParams::at(const std::string& name) const {
  auto it = table_.find(name);
  if (it == table_.end()) throw std::out_of_range("no parameter named " + name);
  return it->second;
}

Tensor& ModelParams::at(const std::string& name) {
  auto it = table_.find(name);
  if (it == table_.end()) throw std::out_of_range("no parameter named " + name);
  return it->second;
}

std::size_t ModelParams::count() const {
  std::size_t total = 0;
  for (const auto& [name, t] : table_) total += t.numel();
  return total;
}

void ModelParams::set_requires_grad(bool on) {
  for (auto& [name, t] : table_) t = t.detach(on);
}

void ModelParams::zero_grad() {
  for (auto& [name, t] : table_) t.zero_grad();
}

ModelParams ModelParams::clone() const {
  ModelParams p;
  p.config_ = config_;
  for (const auto& [name, t] : table_) p.table_.emplace(name, t.detach(t.requires_grad()));
  return p;
}

namespace {

// x [... x d_in] -> [... x d_out]
Tensor linear(const Tensor& x, const ModelParams& p, const std::string& name) {
  const Tensor& w = p.at(name + ".weight");
  const std::size_t in = w.dim(0), out = w.dim(1);
  ad::Shape shape = x.shape();
  const std::size_t rows = x.numel() / in;
  Tensor y = ad::affine(ad::reshape(x, {rows, in}), w, p.at(name + ".bias"));
  shape.back() = out;
  return ad::reshape(y, std::move(shape));
}

Tensor conv(const Tensor& x, const ModelParams& p, const std::string& name, std::size_t stride, ad::Padding pad) {
  return ad::add_bias(ad::conv2d(x, p.at(name + ".weight"), stride, pad), p.at(name + ".bias"), 0);
}

Tensor norm(const Tensor& x, const ModelParams& p, const std::string& name) {
  return ad::layer_norm(x, p.at(name + ".gain"), p.at(name + ".bias"), x.rank() - 1);
}

// Multi-head attention of queries [g x n x d] over keys/values [g x nk x d],
// projections included.
Tensor attend(const Tensor& queries, const Tensor& keys_values, const ModelParams& p, const std::string& name,
              AttentionProbe* probe) {
  Tensor q = linear(queries, p, name + ".q");
  Tensor k = linear(keys_values, p, name + ".k");
  Tensor v = linear(keys_values, p, name + ".v");
  std::uint64_t score_macs = 0;
  Tensor mixed = ad::scaled_dot_product_attention(q, k, v, p.config().heads, &score_macs);
  if (probe != nullptr) {
    probe->score_macs += score_macs;
    probe->groups += queries.dim(0);
  }
  return linear(mixed, p, name + ".out");
}

// Token-level sub-blocks on window-grouped tokens [m^2 x W^2 x d].
Tensor lsa_tokens(const Tensor& tokens, const ModelParams& p, const std::string& prefix, AttentionProbe* probe) {
  const std::string name = prefix + ".lsa";
  Tensor h = norm(tokens, p, name + ".norm");
  return ad::add(tokens, attend(h, h, p, name, probe));
}

Tensor gsa_tokens(const Tensor& tokens, const ModelParams& p, const std::string& prefix, AttentionProbe* probe) {
  const ModelConfig& c = p.config();
  const std::string name = prefix + ".gsa";
  const std::size_t d = c.embed_dim, side = c.side(), m = c.partitions();
  Tensor h = norm(tokens, p, name + ".norm");
  // One summary token per window via a stride-W convolution on the map.
  Tensor summary = conv(ad::window_merge(h, side), p, name + ".summary", c.window, 0);
  Tensor kv = ad::reshape(ad::permute(ad::reshape(summary, {d, m * m}), {1, 0}), {1, m * m, d});
  Tensor queries = ad::reshape(h, {1, side * side, d});
  Tensor out = ad::reshape(attend(queries, kv, p, name, probe), tokens.shape());
  return ad::add(tokens, out);
}

Tensor mlp_tokens(const Tensor& tokens, const ModelParams& p, const std::string& prefix) {
  const std::string name = prefix + ".mlp";
  Tensor h = norm(tokens, p, name + ".norm");
  h = linear(ad::gelu(linear(h, p, name + ".fc1")), p, name + ".fc2");
  return ad::add(tokens, h);
}

void check_map(const Tensor& x, const ModelConfig& c, const char* op) {
  if (x.rank() != 3 || x.dim(0) != c.embed_dim || x.dim(1) != c.side() || x.dim(2) != c.side()) {
    throw ShapeError(std::string(op) + ": expected [" + std::to_string(c.embed_dim) + "x" +
                     std::to_string(c.side()) + "x" + std::to_string(c.side()) + "], got " + ad::to_string(x.shape()));
  }
}

}  // namespace

Tensor lsa_forward(const Tensor& x, const ModelParams& params, const std::string& prefix, AttentionProbe* probe) {
  const ModelConfig& c = params.config();
  check_map(x, c, "lsa_forward");
  return ad::window_merge(lsa_tokens(ad::window_partition(x, c.window), params, prefix, probe), c.side());
}

Tensor gsa_forward(const Tensor& x, const ModelParams& params, const std::string& prefix, AttentionProbe* probe) {
  const ModelConfig& c = params.config();
  check_map(x, c, "gsa_forward");
  return ad::window_merge(gsa_tokens(ad::window_partition(x, c.window), params, prefix, probe), c.side());
}

Tensor stb_forward(const Tensor& x, const ModelParams& params, const std::string& prefix) {
  const ModelConfig& c = params.config();
  check_map(x, c, "stb_forward");
  Tensor t = ad::window_partition(x, c.window);
  t = lsa_tokens(t, params, prefix, nullptr);
  t = gsa_tokens(t, params, prefix, nullptr);
  t = mlp_tokens(t, params, prefix);
  return ad::window_merge(t, c.side());
}

Tensor cr_block_forward(const Tensor& x, const ModelParams& params, const std::string& prefix) {
  Tensor fine = ad::gelu(conv(x, params, prefix + ".path3x3", 1, 1));
  Tensor wide = ad::gelu(conv(x, params, prefix + ".path1x9", 1, {0, 4}));
  wide = ad::gelu(conv(wide, params, prefix + ".path9x1", 1, {4, 0}));
  Tensor merged = ad::gelu(conv(ad::concat({fine, wide}), params, prefix + ".merge", 1, 0));
  return ad::add(x, merged);
}

Tensor encode(const Tensor& channel, const ModelParams& params) {
  const ModelConfig& c = params.config();
  if (channel.rank() != 2 || channel.dim(0) != 2 * c.nc || channel.dim(1) != c.nt) {
    throw ShapeError("encode: expected channel [" + std::to_string(2 * c.nc) + "x" + std::to_string(c.nt) +
                     "], got " + ad::to_string(channel.shape()));
  }
  // Inputs live in [0, 1]; centering keeps the shared background level out
  // of the wide dense layer.
  Tensor x = ad::add(ad::reshape(channel, {2, c.nc, c.nt}), Tensor::full({2, c.nc, c.nt}, -kInputCenter));
  x = conv(x, params, "enc.conv_in", 1, 1);
  for (std::size_t i = 0; i < c.stb_count; ++i) x = stb_forward(x, params, "enc.stb" + std::to_string(i));
  x = conv(x, params, "enc.conv_out", 1, 1);
  Tensor flat = ad::reshape(x, {1, c.input_size()});
  Tensor s = ad::affine(flat, params.at("enc.fc.weight"), params.at("enc.fc.bias"));
  return ad::reshape(ad::tanh(s), {c.latent});
}

Tensor decode(const Tensor& latent, const ModelParams& params) {
  const ModelConfig& c = params.config();
  if (latent.rank() != 1 || latent.dim(0) != c.latent) {
    throw ShapeError("decode: expected latent of length " + std::to_string(c.latent) + ", got " +
                     ad::to_string(latent.shape()));
  }
  Tensor y = ad::affine(ad::reshape(latent, {1, c.latent}), params.at("dec.fc.weight"), params.at("dec.fc.bias"));
  Tensor map = ad::reshape(y, {2, c.nc, c.nt});

  Tensor a = ad::add_bias(ad::conv_transpose2d(map, params.at("dec.a.convt.weight"), 1, 1),
                          params.at("dec.a.convt.bias"), 0);
  for (std::size_t i = 0; i < c.stb_count; ++i) a = stb_forward(a, params, "dec.a.stb" + std::to_string(i));
  a = conv(a, params, "dec.a.conv_out", 1, 1);

  Tensor b = map;
  for (std::size_t i = 0; i < c.cr_count; ++i) b = cr_block_forward(b, params, "dec.b.cr" + std::to_string(i));

  Tensor out = ad::sigmoid(conv(ad::add(a, b), params, "dec.conv_out", 1, 1));
  return ad::reshape(out, {2 * c.nc, c.nt});
}

std::pair<std::uint64_t, std::uint64_t> attention_cost(const ModelConfig& config) {
  const std::uint64_t side = config.side();
  const std::uint64_t m = config.partitions();
  const std::uint64_t d = config.embed_dim;
  const std::uint64_t l4 = side * side * side * side;
  const std::uint64_t m4 = m * m * m * m;
  return {l4 / m4 * d, m * m * side * side * d};
}

}  // namespace csifb::model
