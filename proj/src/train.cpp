/**
 * @file train.cpp
 * @brief Loss, metrics, Adam, training loop and evaluation.
 */
#include "csifb/train.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "csifb/errors.hpp"
#include "csifb/ops.hpp"

namespace csifb::train {

namespace {

using ad::Tensor;

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Tensor channel_tensor(std::span<const double> channel, const model::ModelConfig& c) {
  if (channel.size() != c.input_size()) {
    throw ShapeError("channel has " + std::to_string(channel.size()) + " values, model expects " +
                     std::to_string(c.input_size()));
  }
  return Tensor({2 * c.nc, c.nt}, std::vector<double>(channel.begin(), channel.end()));
}

std::vector<double> denormalized(std::span<const double> v, const data::Normalization& norm) {
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = norm.denormalize(v[i]);
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw UsageError("train: learning rate must be positive");
  if (batch == 0) throw UsageError("train: batch size must be at least 1");
  if (!(lambda >= 0.0)) throw UsageError("train: lambda must be non-negative");
  if (eval_interval == 0) throw UsageError("train: eval interval must be at least 1");
  quant.validate();
}

SampleLoss sample_loss(std::span<const double> channel, const model::ModelParams& params,
                       const entropy::SymbolHistogram& hist, const quant::QuantizerConfig& quant, double lambda) {
  const Tensor h = channel_tensor(channel, params.config());
  const Tensor s = model::encode(h, params);
  const Tensor s_hat = quant::ste_quantize(s, quant);
  const Tensor h_hat = model::decode(s_hat, params);
  Tensor total = ad::sum_squares(ad::sub(h, h_hat));

  SampleLoss out;
  out.squared_error = total.item();
  if (lambda > 0.0) {
    const Tensor rate = entropy::soft_rate(s, hist, quant);
    out.soft_rate_bits = rate.item();
    total = ad::add(total, ad::scale(rate, lambda));
  } else {
    ad::NoGradGuard no_grad;
    out.soft_rate_bits = entropy::soft_rate(s, hist, quant).item();
  }
  out.total = total;
  out.symbols = quant::quantize(s, quant);
  out.reconstruction.assign(h_hat.values().begin(), h_hat.values().end());
  return out;
}

BatchLoss batch_loss(const std::vector<std::vector<double>>& batch, const model::ModelParams& params,
                     const entropy::SymbolHistogram& hist, const quant::QuantizerConfig& quant, double lambda) {
  if (batch.empty()) throw UsageError("batch_loss: empty batch");
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  BatchLoss out;
  for (const auto& h : batch) {
    SampleLoss sl = sample_loss(h, params, hist, quant, lambda);
    Tensor term = ad::scale(sl.total, inv_b);
    out.total = out.total.defined() ? ad::add(out.total, term) : term;
    out.mse += sl.squared_error * inv_b;
    out.rate_bits += sl.soft_rate_bits * inv_b;
  }
  return out;
}

std::optional<double> sample_nmse(std::span<const double> h, std::span<const double> h_hat) {
  if (h.size() != h_hat.size()) throw ShapeError("nmse: extents differ");
  double err = 0.0, energy = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    err += (h[i] - h_hat[i]) * (h[i] - h_hat[i]);
    energy += h[i] * h[i];
  }
  if (energy == 0.0) return std::nullopt;
  return err / energy;
}

double to_db(double value) { return value == 0.0 ? -std::numeric_limits<double>::infinity() : 10.0 * std::log10(value); }

double NmseResult::db() const { return to_db(nmse); }

NmseResult nmse(const std::vector<std::vector<double>>& h, const std::vector<std::vector<double>>& h_hat) {
  if (h.size() != h_hat.size()) throw ShapeError("nmse: batch sizes differ");
  NmseResult r;
  double sum = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    if (auto v = sample_nmse(h[i], h_hat[i])) {
      sum += *v;
      ++r.used;
    } else {
      ++r.excluded;
    }
  }
  r.nmse = r.used == 0 ? std::numeric_limits<double>::quiet_NaN() : sum / static_cast<double>(r.used);
  return r;
}

void adam_update(std::span<double> w, std::span<const double> g, std::span<double> m, std::span<double> v,
                 std::uint64_t step, double lr, const AdamConfig& c) {
  const double correction1 = 1.0 - std::pow(c.beta1, static_cast<double>(step));
  const double correction2 = 1.0 - std::pow(c.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < w.size(); ++i) {
    m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
    v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
    const double m_hat = m[i] / correction1;
    const double v_hat = v[i] / correction2;
    w[i] -= lr * m_hat / (std::sqrt(v_hat) + c.eps);
  }
}

void adam_step(model::ModelParams& params, AdamState& state, double lr, const AdamConfig& config) {
  ++state.step;
  for (auto& [name, t] : params.table()) {
    auto& m = state.m[name];
    auto& v = state.v[name];
    m.resize(t.numel(), 0.0);
    v.resize(t.numel(), 0.0);
    const auto g = t.grad();
    auto w = t.mutable_values();
    adam_update(w, g, m, v, state.step, lr, config);
    for (auto* buf : {&m, &v}) {
      for (double& x : *buf) x = static_cast<float>(x);
    }
    for (double& x : w) x = static_cast<float>(x);
  }
}

std::string log_header() { return "epoch,mse,soft_rate_bpp,val_nmse_db,entropy_bpp,wall_seconds"; }

std::string log_row(const EpochLog& row) {
  std::ostringstream os;
  os << std::setprecision(9) << row.epoch << ',' << row.mse << ',' << row.soft_rate_bpp << ',' << row.val_nmse_db
     << ',' << row.entropy_bpp << ',' << std::setprecision(4) << row.wall_seconds;
  return os.str();
}

namespace {

entropy::SymbolHistogram initial_histogram(const model::ModelParams& params, const data::Dataset& ds,
                                           const quant::QuantizerConfig& quant) {
  ad::NoGradGuard no_grad;
  std::vector<quant::Symbol> symbols;
  for (std::size_t i = 0; i < ds.count(); ++i) {
    auto q = quant::quantize(model::encode(channel_tensor(ds.sample_double(i), params.config()), params), quant);
    symbols.insert(symbols.end(), q.symbols.begin(), q.symbols.end());
  }
  return entropy::fit_histogram(symbols, quant.bits);
}

void check_grads_finite(const model::ModelParams& params) {
  for (const auto& [name, t] : params.table()) {
    for (double g : t.grad()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient for " + name);
    }
  }
}

}  // namespace

TrainResult train(const TrainConfig& config, const model::ModelConfig& model_config, const data::Dataset& train_set,
                  const data::Dataset& val_set, const TrainOptions& options) {
  config.validate();
  model_config.validate();
  for (const auto* ds : {&train_set, &val_set}) {
    if (ds->nc != model_config.nc || ds->nt != model_config.nt) {
      throw DataError(DataError::Kind::kExtentMismatch, "dataset extents do not match the model configuration");
    }
  }
  if (train_set.count() == 0) throw DataError(DataError::Kind::kCorrupt, "training set is empty");

  const bool write = !options.out_dir.empty();
  if (write) std::filesystem::create_directories(options.out_dir);
  const auto last_path = options.out_dir / "last.csiw";
  const auto best_path = options.out_dir / "best.csiw";
  const auto log_path = options.out_dir / "log.csv";

  TrainResult result;
  entropy::SymbolHistogram hist;
  const bool resuming = write && options.resume && std::filesystem::exists(last_path);
  if (resuming) {
    Checkpoint ck = load_checkpoint(last_path);
    if (ck.params.config() != model_config) {
      throw DataError(DataError::Kind::kExtentMismatch, "checkpoint model configuration differs from the run's");
    }
    if (ck.state.bits != config.quant.bits) throw DataError(DataError::Kind::kCorrupt, "checkpoint bit depth differs");
    result.params = std::move(ck.params);
    result.adam = std::move(ck.adam);
    result.state = std::move(ck.state);
    hist = entropy::SymbolHistogram(config.quant.bits, result.state.histogram);
    result.best = std::filesystem::exists(best_path) ? load_checkpoint(best_path).params : result.params.clone();
  } else {
    result.params = model::ModelParams::initialize(model_config, config.seed);
    result.state.bits = config.quant.bits;
    result.state.mu = config.quant.mu;
    result.state.best_score = std::numeric_limits<double>::infinity();
    hist = initial_histogram(result.params, train_set, config.quant);
    result.state.histogram = hist.counts();
    result.best = result.params.clone();
    if (write) {
      std::ofstream log(log_path, std::ios::trunc);
      log << log_header() << '\n';
    }
  }
  result.params.set_requires_grad(true);

  const std::size_t n = train_set.count();
  const double pixels = static_cast<double>(model_config.input_size());
  const auto t0 = std::chrono::steady_clock::now();
  bool stop = false;
  for (std::size_t epoch = result.state.epoch; epoch < config.epochs && !stop; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::seed_seq seq{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32),
                      static_cast<std::uint32_t>(epoch)};
    std::mt19937_64 shuffle_rng(seq);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    std::vector<quant::Symbol> symbols;
    double se_sum = 0.0, rate_sum = 0.0, nmse_sum = 0.0;
    std::size_t seen = 0, nmse_used = 0;
    for (std::size_t start = 0; start < n; start += config.batch) {
      if (config.max_steps != 0 && result.state.global_step >= config.max_steps) {
        stop = true;
        break;
      }
      const std::size_t end = std::min(n, start + config.batch);
      const double inv_b = 1.0 / static_cast<double>(end - start);
      result.params.zero_grad();
      for (std::size_t j = start; j < end; ++j) {
        const auto h = train_set.sample_double(order[j]);
        SampleLoss sl = sample_loss(h, result.params, hist, config.quant, config.lambda);
        ad::scale(sl.total, inv_b).backward();
        se_sum += sl.squared_error;
        rate_sum += sl.soft_rate_bits;
        ++seen;
        symbols.insert(symbols.end(), sl.symbols.symbols.begin(), sl.symbols.symbols.end());
        if (auto v = sample_nmse(denormalized(h, train_set.norm), denormalized(sl.reconstruction, train_set.norm))) {
          nmse_sum += *v;
          ++nmse_used;
        }
      }
      try {
        check_grads_finite(result.params);
      } catch (const NumericError&) {
        if (write) save_checkpoint(options.out_dir / "last_good.csiw", result.params, result.adam, result.state);
        throw;
      }
      adam_step(result.params, result.adam, config.lr, config.adam);
      ++result.state.global_step;
      if (config.max_steps != 0 && result.state.global_step >= config.max_steps) stop = true;
    }
    if (seen == 0) break;

    hist = entropy::fit_histogram(symbols, config.quant.bits);
    result.state.histogram = hist.counts();
    result.state.epoch = epoch + 1;

    EpochLog row;
    row.epoch = epoch + 1;
    row.mse = se_sum / static_cast<double>(seen);
    row.soft_rate_bpp = rate_sum / static_cast<double>(seen) / pixels;
    row.train_nmse_db = nmse_used == 0 ? std::numeric_limits<double>::quiet_NaN()
                                       : to_db(nmse_sum / static_cast<double>(nmse_used));
    row.steps = result.state.global_step;
    row.val_nmse_db = row.entropy_bpp = std::numeric_limits<double>::quiet_NaN();
    if (options.stop_after && options.stop_after(row)) stop = true;
    const bool last_epoch = stop || epoch + 1 == config.epochs;
    if (val_set.count() != 0 && ((epoch + 1) % config.eval_interval == 0 || last_epoch)) {
      const auto points = evaluate(result.params, val_set, {config.quant.bits}, {data::kCleanSnr}, config.seed,
                                   config.quant.mu);
      row.val_nmse_db = points.front().nmse_db;
      row.entropy_bpp = points.front().entropy_bpp;
      if (row.val_nmse_db < result.state.best_score) {
        result.state.best_score = row.val_nmse_db;
        result.best = result.params.clone();
        if (write) save_checkpoint(best_path, result.best, result.adam, result.state);
      }
    }
    row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (write) {
      save_checkpoint(last_path, result.params, result.adam, result.state);
      std::ofstream log(log_path, std::ios::app);
      log << log_row(row) << '\n';
    }
    if (options.on_epoch) options.on_epoch(row);
    result.log.push_back(row);
  }
  if (write && !std::filesystem::exists(best_path)) {
    save_checkpoint(best_path, result.best, result.adam, result.state);
  }
  return result;
}

std::uint64_t noise_seed(std::uint64_t seed, std::size_t sample, double snr_db) {
  return splitmix(splitmix(splitmix(seed) ^ sample) ^ std::bit_cast<std::uint64_t>(snr_db));
}

std::vector<EvalPoint> evaluate(const model::ModelParams& params, const data::Dataset& dataset,
                                const std::vector<unsigned>& bits, const std::vector<double>& snrs_db,
                                std::uint64_t seed, double mu, bool keep_streams) {
  if (dataset.count() == 0) throw DataError(DataError::Kind::kCorrupt, "evaluate: empty dataset");
  if (dataset.nc != params.config().nc || dataset.nt != params.config().nt) {
    throw DataError(DataError::Kind::kExtentMismatch, "evaluate: dataset extents do not match the model");
  }
  ad::NoGradGuard no_grad;
  const auto& mc = params.config();
  const std::size_t count = dataset.count();
  std::vector<std::vector<double>> clean(count);
  for (std::size_t i = 0; i < count; ++i) clean[i] = dataset.raw_sample(i);

  std::vector<EvalPoint> points(bits.size() * snrs_db.size());
  for (std::size_t si = 0; si < snrs_db.size(); ++si) {
    const double snr = snrs_db[si];
    std::vector<Tensor> latents(count);
    for (std::size_t i = 0; i < count; ++i) {
      const auto noisy = data::add_awgn(dataset.sample_double(i), dataset.norm, snr, noise_seed(seed, i, snr));
      latents[i] = model::encode(channel_tensor(noisy, mc), params);
    }
    for (std::size_t ki = 0; ki < bits.size(); ++ki) {
      quant::QuantizerConfig qc{bits[ki], mu};
      qc.validate();
      std::vector<quant::QuantizedLatent> qs(count);
      std::vector<quant::Symbol> all;
      for (std::size_t i = 0; i < count; ++i) {
        qs[i] = quant::quantize(latents[i], qc);
        all.insert(all.end(), qs[i].symbols.begin(), qs[i].symbols.end());
      }
      const auto hist = entropy::fit_histogram(all, qc.bits);
      const auto codebook = entropy::huffman_build(hist);

      EvalPoint& p = points[ki * snrs_db.size() + si];
      p.bits = qc.bits;
      p.snr_db = snr;
      double entropy_bits = 0.0, measured_bits = 0.0;
      std::vector<std::vector<double>> recon(count);
      for (std::size_t i = 0; i < count; ++i) {
        entropy_bits += entropy::estimate_rate(qs[i], hist);
        auto stream = entropy::huffman_encode(qs[i], codebook);
        measured_bits += entropy::payload_bits(stream);
        const auto s_hat = quant::dequantize(qs[i], qc);
        Tensor h_hat = model::decode(Tensor({s_hat.size()}, s_hat), params);
        recon[i].resize(h_hat.numel());
        for (std::size_t j = 0; j < recon[i].size(); ++j) recon[i][j] = dataset.norm.denormalize(h_hat.values()[j]);
        if (keep_streams) p.streams.push_back(std::move(stream));
      }
      const NmseResult r = nmse(clean, recon);
      p.nmse_db = r.db();
      p.excluded = r.excluded;
      const double samples = static_cast<double>(count);
      p.nominal_bpp = entropy::nominal_bpp(qc.bits, mc.latent, mc.nc, mc.nt);
      p.entropy_bpp = entropy::bits_per_pixel(entropy_bits / samples, mc.nc, mc.nt);
      p.measured_bpp = entropy::bits_per_pixel(measured_bits / samples, mc.nc, mc.nt);
    }
  }
  return points;
}

}  // namespace csifb::train
