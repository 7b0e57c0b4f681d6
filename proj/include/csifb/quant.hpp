/**
 * @file quant.hpp
 * @brief mu-law companded uniform quantizer with a straight-through
 * training path.
 */
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "csifb/tensor.hpp"

namespace csifb::quant {

struct QuantizerConfig {
  unsigned bits = 8;  // k
  double mu = 255.0;

  std::size_t levels() const { return std::size_t{1} << bits; }
  /// Level spacing in the companded domain, 2 / 2^k.
  double step() const { return 2.0 / static_cast<double>(levels()); }
  /// c_i = -1 + (2i + 1) / 2^k.
  double center(std::size_t index) const;
  /// Throws UsageError unless 2 <= k <= 16 and mu > 0.
  void validate() const;
};

using Symbol = std::uint16_t;

/// Symbol indices in [0, 2^k).
struct QuantizedLatent {
  unsigned bits = 0;
  std::vector<Symbol> symbols;
};

/// sgn(s) ln(1 + mu|s|) / ln(1 + mu); |s| > 1 is rejected.
double mu_compress(double s, double mu);
/// sgn(y) ((1 + mu)^|y| - 1) / mu; |y| > 1 is rejected.
double mu_expand(double y, double mu);

/// Index of the nearest level center to a companded value, ties to the lower.
Symbol nearest_level(double companded, const QuantizerConfig& config);

QuantizedLatent quantize(std::span<const double> s, const QuantizerConfig& config);
QuantizedLatent quantize(const ad::Tensor& s, const QuantizerConfig& config);

/// mu_expand of each symbol's level center.
std::vector<double> dequantize(const QuantizedLatent& q, const QuantizerConfig& config);

/// Forward: dequantize(quantize(s)). Backward: identity.
ad::Tensor ste_quantize(const ad::Tensor& s, const QuantizerConfig& config);

}  // namespace csifb::quant
