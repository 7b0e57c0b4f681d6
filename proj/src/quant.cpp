/**
 * @file quant.cpp
 * @brief mu-law companding, hard quantization and the STE path.
 */
#include "csifb/quant.hpp"

#include <cmath>
#include <string>

#include "csifb/errors.hpp"

namespace csifb::quant {

double QuantizerConfig::center(std::size_t index) const {
  return -1.0 + static_cast<double>(2 * index + 1) / static_cast<double>(levels());
}

void QuantizerConfig::validate() const {
  if (bits < 2 || bits > 16) throw UsageError("quantizer: bits must be in [2, 16], got " + std::to_string(bits));
  if (!(mu > 0.0) || !std::isfinite(mu)) throw UsageError("quantizer: mu must be positive and finite");
}

double mu_compress(double s, double mu) {
  if (!(std::fabs(s) <= 1.0)) throw std::domain_error("mu_compress: |s| > 1 (" + std::to_string(s) + ")");
  return std::copysign(std::log1p(mu * std::fabs(s)) / std::log1p(mu), s);
}

double mu_expand(double y, double mu) {
  if (!(std::fabs(y) <= 1.0)) throw std::domain_error("mu_expand: |y| > 1 (" + std::to_string(y) + ")");
  return std::copysign(std::expm1(std::fabs(y) * std::log1p(mu)) / mu, y);
}

Symbol nearest_level(double companded, const QuantizerConfig& config) {
  const std::size_t n = config.levels();
  // Cell i is (-1 + i*D, -1 + (i+1)*D]; boundary values fall to the lower cell.
  const double pos = (companded + 1.0) / config.step();
  double cell = std::ceil(pos) - 1.0;
  if (cell < 0.0) cell = 0.0;
  if (cell > static_cast<double>(n - 1)) cell = static_cast<double>(n - 1);
  return static_cast<Symbol>(cell);
}

QuantizedLatent quantize(std::span<const double> s, const QuantizerConfig& config) {
  config.validate();
  QuantizedLatent q;
  q.bits = config.bits;
  q.symbols.reserve(s.size());
  for (double v : s) q.symbols.push_back(nearest_level(mu_compress(v, config.mu), config));
  return q;
}

QuantizedLatent quantize(const ad::Tensor& s, const QuantizerConfig& config) { return quantize(s.values(), config); }

std::vector<double> dequantize(const QuantizedLatent& q, const QuantizerConfig& config) {
  config.validate();
  if (q.bits != config.bits) {
    throw UsageError("dequantize: latent has " + std::to_string(q.bits) + " bits, quantizer " +
                     std::to_string(config.bits));
  }
  std::vector<double> out;
  out.reserve(q.symbols.size());
  for (Symbol sym : q.symbols) {
    if (sym >= config.levels()) {
      throw std::out_of_range("dequantize: symbol " + std::to_string(sym) + " >= " + std::to_string(config.levels()));
    }
    out.push_back(mu_expand(config.center(sym), config.mu));
  }
  return out;
}

ad::Tensor ste_quantize(const ad::Tensor& s, const QuantizerConfig& config) {
  const std::vector<double> hard = dequantize(quantize(s, config), config);
  return ad::Tensor::make_result("ste_quantize", s.shape(), ad::Buffer(hard.begin(), hard.end()), {s},
                                 [s](std::span<const double>, std::span<const double> g) {
                                   auto d = s.mutable_grad();
                                   for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
                                 });
}

}  // namespace csifb::quant
