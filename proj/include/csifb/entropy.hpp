/**
 * @file entropy.hpp
 * @brief Factorized histogram prior, rate estimates (hard and
 * differentiable), canonical Huffman codes and the feedback bitstream.
 */
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "csifb/quant.hpp"
#include "csifb/tensor.hpp"

namespace csifb::entropy {

using quant::QuantizedLatent;
using quant::Symbol;

constexpr double kLaplaceEpsilon = 1.0;

/// Raw symbol counts plus additive smoothing of epsilon per bin.
class SymbolHistogram {
 public:
  SymbolHistogram() = default;
  SymbolHistogram(unsigned bits, std::vector<std::uint64_t> counts, double epsilon = kLaplaceEpsilon);
  /// No observations; every bin has probability 1/2^k.
  static SymbolHistogram uniform(unsigned bits, double epsilon = kLaplaceEpsilon);

  unsigned bits() const { return bits_; }
  std::size_t size() const { return counts_.size(); }
  double epsilon() const { return epsilon_; }
  const std::vector<std::uint64_t>& counts() const { return counts_; }
  std::uint64_t total() const { return total_; }

  double probability(std::size_t symbol) const;
  std::vector<double> probabilities() const;
  /// Shannon entropy of the smoothed prior, bits per symbol.
  double entropy_bits() const;

 private:
  unsigned bits_ = 0;
  std::vector<std::uint64_t> counts_;
  double epsilon_ = kLaplaceEpsilon;
  std::uint64_t total_ = 0;
};

/// Counts symbols (each < 2^bits); an empty stream is rejected.
SymbolHistogram fit_histogram(std::span<const Symbol> symbols, unsigned bits, double epsilon = kLaplaceEpsilon);
inline SymbolHistogram fit_histogram(const QuantizedLatent& q, double epsilon = kLaplaceEpsilon) {
  return fit_histogram(q.symbols, q.bits, epsilon);
}

/// sum_i -log2 p(symbol_i), in bits.
double estimate_rate(const QuantizedLatent& q, const SymbolHistogram& hist);
/// estimate_rate / N (0 for an empty latent).
double rate_per_symbol(const QuantizedLatent& q, const SymbolHistogram& hist);

/// Differentiable rate in bits: each companded value is spread over its two
/// neighbouring level centers with triangular weights of width step().
ad::Tensor soft_rate(const ad::Tensor& s, const SymbolHistogram& hist, const quant::QuantizerConfig& config);

struct HuffmanCodebook {
  unsigned bits = 0;
  /// Code length per symbol; 0 means the symbol cannot be coded.
  std::vector<std::uint8_t> lengths;
  /// Canonical codewords, right-aligned.
  std::vector<std::uint64_t> codes;

  /// Assigns canonical codewords from lengths (ordered by length, then symbol).
  /// Throws DataError(kCorrupt) if the lengths violate Kraft's inequality.
  static HuffmanCodebook from_lengths(unsigned bits, std::vector<std::uint8_t> lengths);
  /// Kraft sum over coded symbols.
  double kraft_sum() const;
  /// Expected code length under the given probabilities.
  double mean_length(std::span<const double> probabilities) const;
};

constexpr std::size_t kMaxCodeLength = 64;

/// Huffman code for non-negative weights (at least one positive). Merges take
/// the two lightest nodes; equal weights prefer lower symbols, then earlier
/// merged nodes. A lone symbol gets a 1-bit code.
HuffmanCodebook huffman_build(std::span<const double> weights, unsigned bits);
HuffmanCodebook huffman_build(const SymbolHistogram& hist);

constexpr std::uint16_t kBitstreamVersion = 1;

/// "CSIB" | u16 version | u8 k | u32 N | 2^k length bytes | u32 payload bits |
/// payload (MSB first, zero padded). Integers little-endian.
std::vector<std::uint8_t> huffman_encode(const QuantizedLatent& q, const HuffmanCodebook& codebook);
/// Inverse of huffman_encode; the codebook is rebuilt from the header.
QuantizedLatent huffman_decode(std::span<const std::uint8_t> stream);

/// Payload length in bits recorded in a stream header.
std::uint32_t payload_bits(std::span<const std::uint8_t> stream);
/// Sum of code lengths of the symbols.
std::uint64_t coded_bits(const QuantizedLatent& q, const HuffmanCodebook& codebook);

/// Bits per real-valued CSI entry: bits / (2 Nc Nt).
double bits_per_pixel(double bits, std::size_t nc, std::size_t nt);
/// Fixed-length rate k N / (2 Nc Nt).
double nominal_bpp(unsigned k, std::size_t n, std::size_t nc, std::size_t nt);

}  // namespace csifb::entropy
