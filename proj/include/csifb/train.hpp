/**
 * @file train.hpp
 * @brief Rate-distortion loss, NMSE, Adam, the training loop and the
 * hard-quantized evaluation path.
 */
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "csifb/checkpoint.hpp"
#include "csifb/data.hpp"
#include "csifb/entropy.hpp"
#include "csifb/model.hpp"
#include "csifb/quant.hpp"
#include "csifb/tensor.hpp"

namespace csifb::train {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainConfig {
  double lr = 1e-3;
  std::size_t batch = 32;
  std::size_t epochs = 10;
  /// Stop after this many optimizer steps (0: run all epochs).
  std::size_t max_steps = 0;
  double lambda = 1e-3;
  quant::QuantizerConfig quant;
  std::uint64_t seed = 1;
  /// Validate every this many epochs; the last epoch is always validated.
  std::size_t eval_interval = 1;
  AdamConfig adam;

  /// Throws UsageError on lr <= 0, batch 0, lambda < 0 or a bad quantizer.
  void validate() const;
};

/// Per-sample loss pieces. `total` is differentiable.
struct SampleLoss {
  ad::Tensor total;       // ||H - H^||^2 + lambda * soft_rate
  double squared_error;   // ||H - H^||^2 in the normalized domain
  double soft_rate_bits;  // soft_rate(s)
  quant::QuantizedLatent symbols;
  std::vector<double> reconstruction;
};

/// Forward pass of one normalized sample through encoder, STE quantizer and
/// decoder. With lambda == 0 the rate term is evaluated without a graph.
SampleLoss sample_loss(std::span<const double> channel, const model::ModelParams& params,
                       const entropy::SymbolHistogram& hist, const quant::QuantizerConfig& quant, double lambda);

struct BatchLoss {
  ad::Tensor total;  // (1/B) sum_i (||H_i - H^_i||^2 + lambda * R_i)
  double mse = 0.0;  // (1/B) sum_i ||H_i - H^_i||^2
  double rate_bits = 0.0;
};

/// Whole-batch loss as a single graph (used for gradient checks).
BatchLoss batch_loss(const std::vector<std::vector<double>>& batch, const model::ModelParams& params,
                     const entropy::SymbolHistogram& hist, const quant::QuantizerConfig& quant, double lambda);

/// ||H - H^||^2 / ||H||^2; nullopt when ||H|| == 0.
std::optional<double> sample_nmse(std::span<const double> h, std::span<const double> h_hat);

struct NmseResult {
  double nmse = 0.0;
  std::size_t used = 0;
  std::size_t excluded = 0;  // zero-norm samples
  double db() const;         // 10 log10(nmse); -inf for an exact match
};

NmseResult nmse(const std::vector<std::vector<double>>& h, const std::vector<std::vector<double>>& h_hat);
double to_db(double value);

/// One bias-corrected Adam update of a single tensor. The step counter must
/// already include this update.
void adam_update(std::span<double> w, std::span<const double> g, std::span<double> m, std::span<double> v,
                 std::uint64_t step, double lr, const AdamConfig& config);

/// Advances the step counter and updates every parameter from its gradient,
/// in name order. Parameters and moments are rounded to float32 afterwards.
void adam_step(model::ModelParams& params, AdamState& state, double lr, const AdamConfig& config = {});

struct EpochLog {
  std::size_t epoch = 0;
  double mse = 0.0;
  double soft_rate_bpp = 0.0;
  double val_nmse_db = 0.0;  // NaN when the epoch was not validated
  double entropy_bpp = 0.0;  // NaN when the epoch was not validated
  double wall_seconds = 0.0;
  double train_nmse_db = 0.0;
  std::size_t steps = 0;     // global step count at the end of the epoch
};

std::string log_header();
std::string log_row(const EpochLog& row);

struct TrainOptions {
  /// Directory for best.csiw, last.csiw and log.csv; nothing is written if empty.
  std::filesystem::path out_dir;
  /// Continue from out_dir/last.csiw if it exists.
  bool resume = false;
  std::function<void(const EpochLog&)> on_epoch;
  /// Called with each epoch's training metrics, before validation; returning
  /// true makes that epoch the last one.
  std::function<bool(const EpochLog&)> stop_after;
};

struct TrainResult {
  model::ModelParams params;
  model::ModelParams best;
  AdamState adam;
  TrainingState state;
  std::vector<EpochLog> log;
};

TrainResult train(const TrainConfig& config, const model::ModelConfig& model_config, const data::Dataset& train_set,
                  const data::Dataset& val_set, const TrainOptions& options = {});

struct EvalPoint {
  unsigned bits = 0;
  double snr_db = data::kCleanSnr;
  double nmse_db = 0.0;
  double nominal_bpp = 0.0;
  double entropy_bpp = 0.0;
  double measured_bpp = 0.0;
  std::size_t excluded = 0;
  /// One CSIB stream per sample, Huffman-coded with this point's codebook.
  std::vector<std::vector<std::uint8_t>> streams;
};

/// Hard-quantized pipeline with real Huffman bits for every (k, snr) pair.
/// A single histogram is fitted over all symbols of each point. Noise for
/// sample i at a given SNR is seeded from (seed, i, snr).
std::vector<EvalPoint> evaluate(const model::ModelParams& params, const data::Dataset& dataset,
                                const std::vector<unsigned>& bits, const std::vector<double>& snrs_db,
                                std::uint64_t seed, double mu = 255.0, bool keep_streams = false);

/// Seed for the noise of one sample at one SNR.
std::uint64_t noise_seed(std::uint64_t seed, std::size_t sample, double snr_db);

}  // namespace csifb::train
