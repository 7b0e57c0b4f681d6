/**
 * @file entropy.cpp
 * @brief Histogram prior, rate estimates, canonical Huffman coding and the
 * CSIB stream format.
 */
#include "csifb/entropy.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <queue>
#include <string>

#include "csifb/errors.hpp"

namespace csifb::entropy {

namespace {

void check_bits(unsigned bits, const char* where) {
  if (bits < 1 || bits > 16) throw UsageError(std::string(where) + ": bits must be in [1, 16]");
}

}  // namespace

SymbolHistogram::SymbolHistogram(unsigned bits, std::vector<std::uint64_t> counts, double epsilon)
    : bits_(bits), counts_(std::move(counts)), epsilon_(epsilon) {
  check_bits(bits, "histogram");
  if (counts_.size() != (std::size_t{1} << bits)) {
    throw UsageError("histogram: expected " + std::to_string(std::size_t{1} << bits) + " bins, got " +
                     std::to_string(counts_.size()));
  }
  if (!(epsilon > 0.0)) throw UsageError("histogram: smoothing must be positive");
  for (auto c : counts_) total_ += c;
}

SymbolHistogram SymbolHistogram::uniform(unsigned bits, double epsilon) {
  check_bits(bits, "histogram");
  return SymbolHistogram(bits, std::vector<std::uint64_t>(std::size_t{1} << bits, 0), epsilon);
}

double SymbolHistogram::probability(std::size_t symbol) const {
  const double denom = static_cast<double>(total_) + epsilon_ * static_cast<double>(counts_.size());
  return (static_cast<double>(counts_.at(symbol)) + epsilon_) / denom;
}

std::vector<double> SymbolHistogram::probabilities() const {
  std::vector<double> p(counts_.size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = probability(i);
  return p;
}

double SymbolHistogram::entropy_bits() const {
  double h = 0.0;
  for (double p : probabilities()) h -= p * std::log2(p);
  return h;
}

SymbolHistogram fit_histogram(std::span<const Symbol> symbols, unsigned bits, double epsilon) {
  if (symbols.empty()) throw UsageError("fit_histogram: empty symbol stream");
  check_bits(bits, "fit_histogram");
  std::vector<std::uint64_t> counts(std::size_t{1} << bits, 0);
  for (Symbol s : symbols) {
    if (s >= counts.size()) throw UsageError("fit_histogram: symbol " + std::to_string(s) + " out of range");
    ++counts[s];
  }
  return SymbolHistogram(bits, std::move(counts), epsilon);
}

double estimate_rate(const QuantizedLatent& q, const SymbolHistogram& hist) {
  if (q.bits != hist.bits()) throw UsageError("estimate_rate: latent and histogram bit depths differ");
  std::vector<double> cost(hist.size());
  for (std::size_t i = 0; i < cost.size(); ++i) cost[i] = -std::log2(hist.probability(i));
  double bits = 0.0;
  for (Symbol s : q.symbols) bits += cost.at(s);
  return bits;
}

double rate_per_symbol(const QuantizedLatent& q, const SymbolHistogram& hist) {
  return q.symbols.empty() ? 0.0 : estimate_rate(q, hist) / static_cast<double>(q.symbols.size());
}

ad::Tensor soft_rate(const ad::Tensor& s, const SymbolHistogram& hist, const quant::QuantizerConfig& config) {
  config.validate();
  if (hist.bits() != config.bits) throw UsageError("soft_rate: histogram and quantizer bit depths differ");
  const std::size_t n = config.levels();
  const double step = config.step();
  const double lo = config.center(0), hi = config.center(n - 1);
  const double log_mu = std::log1p(config.mu);
  const std::vector<double> p = hist.probabilities();

  const auto sv = s.values();
  // d(rate_i)/d(s_i), zero where the value is clamped.
  std::vector<double> slope(sv.size(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < sv.size(); ++i) {
    const double x = std::clamp(sv[i], -1.0, 1.0);
    const double y_raw = quant::mu_compress(x, config.mu);
    const double y = std::clamp(y_raw, lo, hi);
    const auto j = static_cast<std::size_t>(std::min(std::floor((y - lo) / step), static_cast<double>(n - 2)));
    const double t = (y - config.center(j)) / step;
    const double mix = (1.0 - t) * p[j] + t * p[j + 1];
    total -= std::log2(mix);
    if (x == sv[i] && y == y_raw) {
      const double dy_ds = config.mu / ((1.0 + config.mu * std::fabs(x)) * log_mu);
      slope[i] = -(p[j + 1] - p[j]) / (step * mix * std::numbers::ln2) * dy_ds;
    }
  }
  return ad::Tensor::make_result("soft_rate", {}, {total}, {s},
                                 [s, slope = std::move(slope)](std::span<const double>, std::span<const double> g) {
                                   auto d = s.mutable_grad();
                                   for (std::size_t i = 0; i < slope.size(); ++i) d[i] += g[0] * slope[i];
                                 });
}

HuffmanCodebook HuffmanCodebook::from_lengths(unsigned bits, std::vector<std::uint8_t> lengths) {
  check_bits(bits, "codebook");
  if (lengths.size() != (std::size_t{1} << bits)) throw UsageError("codebook: length table size mismatch");
  HuffmanCodebook cb;
  cb.bits = bits;
  cb.lengths = std::move(lengths);
  cb.codes.assign(cb.lengths.size(), 0);

  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < cb.lengths.size(); ++i) {
    if (cb.lengths[i] > kMaxCodeLength) throw DataError(DataError::Kind::kCorrupt, "codebook: code length above 64");
    if (cb.lengths[i] != 0) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return cb.lengths[a] < cb.lengths[b]; });
  // Kraft check in exact integer arithmetic at the deepest length.
  if (!order.empty()) {
    const std::size_t deepest = cb.lengths[order.back()];
    unsigned __int128 used = 0;
    for (std::size_t sym : order) used += static_cast<unsigned __int128>(1) << (deepest - cb.lengths[sym]);
    if (used > (static_cast<unsigned __int128>(1) << deepest)) {
      throw DataError(DataError::Kind::kCorrupt, "codebook: lengths violate Kraft inequality");
    }
  }
  std::uint64_t code = 0;
  std::size_t prev_len = 0;
  for (std::size_t idx = 0; idx < order.size(); ++idx) {
    const std::size_t sym = order[idx];
    const std::size_t len = cb.lengths[sym];
    if (idx != 0) {
      ++code;
      code <<= (len - prev_len);
    }
    cb.codes[sym] = code;
    prev_len = len;
  }
  return cb;
}

double HuffmanCodebook::kraft_sum() const {
  double sum = 0.0;
  for (auto len : lengths) {
    if (len != 0) sum += std::ldexp(1.0, -static_cast<int>(len));
  }
  return sum;
}

double HuffmanCodebook::mean_length(std::span<const double> probabilities) const {
  double total = 0.0;
  for (std::size_t i = 0; i < lengths.size() && i < probabilities.size(); ++i) total += probabilities[i] * lengths[i];
  return total;
}

HuffmanCodebook huffman_build(std::span<const double> weights, unsigned bits) {
  check_bits(bits, "huffman_build");
  const std::size_t n = std::size_t{1} << bits;
  if (weights.size() != n) throw UsageError("huffman_build: weight table size mismatch");

  struct Node {
    double weight;
    std::uint64_t order;  // leaves: symbol index; merged nodes: n + creation count
    std::int64_t left = -1, right = -1;
  };
  std::vector<Node> nodes;
  auto heavier = [&nodes](std::size_t a, std::size_t b) {
    if (nodes[a].weight != nodes[b].weight) return nodes[a].weight > nodes[b].weight;
    return nodes[a].order > nodes[b].order;
  };
  std::priority_queue<std::size_t, std::vector<std::size_t>, decltype(heavier)> queue(heavier);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(weights[i] >= 0.0) || !std::isfinite(weights[i])) throw UsageError("huffman_build: invalid weight");
    if (weights[i] > 0.0) {
      nodes.push_back({weights[i], i});
      queue.push(nodes.size() - 1);
    }
  }
  if (nodes.empty()) throw UsageError("huffman_build: no symbol has positive weight");

  std::vector<std::uint8_t> lengths(n, 0);
  if (nodes.size() == 1) {
    lengths[nodes[0].order] = 1;
    return HuffmanCodebook::from_lengths(bits, std::move(lengths));
  }
  std::uint64_t created = 0;
  while (queue.size() > 1) {
    const std::size_t a = queue.top();
    queue.pop();
    const std::size_t b = queue.top();
    queue.pop();
    nodes.push_back({nodes[a].weight + nodes[b].weight, n + created++, static_cast<std::int64_t>(a),
                     static_cast<std::int64_t>(b)});
    queue.push(nodes.size() - 1);
  }
  std::vector<std::pair<std::size_t, std::size_t>> stack{{queue.top(), 0}};
  while (!stack.empty()) {
    auto [node, depth] = stack.back();
    stack.pop_back();
    if (nodes[node].left < 0) {
      if (depth > kMaxCodeLength) throw NumericError("huffman_build: code length exceeds 64 bits");
      lengths[nodes[node].order] = static_cast<std::uint8_t>(depth);
    } else {
      stack.emplace_back(static_cast<std::size_t>(nodes[node].left), depth + 1);
      stack.emplace_back(static_cast<std::size_t>(nodes[node].right), depth + 1);
    }
  }
  return HuffmanCodebook::from_lengths(bits, std::move(lengths));
}

HuffmanCodebook huffman_build(const SymbolHistogram& hist) { return huffman_build(hist.probabilities(), hist.bits()); }

namespace {

constexpr std::uint8_t kMagic[4] = {'C', 'S', 'I', 'B'};

void put_le(std::vector<std::uint8_t>& out, std::uint64_t value, std::size_t bytes) {
  for (std::size_t i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> data) : data_(data) {}
  std::uint64_t le(std::size_t bytes, const char* field) {
    if (pos_ + bytes > data_.size()) {
      throw DataError(DataError::Kind::kTruncated, std::string("bitstream: truncated header at ") + field);
    }
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
    pos_ += bytes;
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t bytes, const char* field) {
    if (pos_ + bytes > data_.size()) {
      throw DataError(DataError::Kind::kTruncated, std::string("bitstream: truncated ") + field);
    }
    auto s = data_.subspan(pos_, bytes);
    pos_ += bytes;
    return s;
  }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

struct Header {
  unsigned bits;
  std::uint32_t count;
  std::vector<std::uint8_t> lengths;
  std::uint32_t payload_bits;
};

Header read_header(Reader& r) {
  auto magic = r.take(4, "magic");
  if (!std::equal(magic.begin(), magic.end(), kMagic)) {
    throw DataError(DataError::Kind::kBadMagic, "bitstream: bad magic");
  }
  const auto version = r.le(2, "version");
  if (version != kBitstreamVersion) {
    throw DataError(DataError::Kind::kVersionMismatch, "bitstream: unsupported version " + std::to_string(version));
  }
  Header h;
  h.bits = static_cast<unsigned>(r.le(1, "bits"));
  if (h.bits < 1 || h.bits > 16) throw DataError(DataError::Kind::kCorrupt, "bitstream: invalid bit depth");
  h.count = static_cast<std::uint32_t>(r.le(4, "count"));
  auto table = r.take(std::size_t{1} << h.bits, "code-length table");
  h.lengths.assign(table.begin(), table.end());
  h.payload_bits = static_cast<std::uint32_t>(r.le(4, "payload length"));
  return h;
}

}  // namespace

std::uint64_t coded_bits(const QuantizedLatent& q, const HuffmanCodebook& codebook) {
  std::uint64_t total = 0;
  for (Symbol s : q.symbols) {
    if (s >= codebook.lengths.size() || codebook.lengths[s] == 0) {
      throw std::invalid_argument("huffman: symbol " + std::to_string(s) + " has no codeword");
    }
    total += codebook.lengths[s];
  }
  return total;
}

std::vector<std::uint8_t> huffman_encode(const QuantizedLatent& q, const HuffmanCodebook& codebook) {
  if (q.bits != codebook.bits) throw std::invalid_argument("huffman_encode: latent and codebook bit depths differ");
  const std::uint64_t total = coded_bits(q, codebook);
  if (total > UINT32_MAX || q.symbols.size() > UINT32_MAX) throw std::length_error("huffman_encode: stream too long");

  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_le(out, kBitstreamVersion, 2);
  put_le(out, codebook.bits, 1);
  put_le(out, q.symbols.size(), 4);
  out.insert(out.end(), codebook.lengths.begin(), codebook.lengths.end());
  put_le(out, total, 4);

  const std::size_t base = out.size();
  out.resize(base + (total + 7) / 8, 0);
  std::uint64_t pos = 0;
  for (Symbol s : q.symbols) {
    const std::size_t len = codebook.lengths[s];
    const std::uint64_t code = codebook.codes[s];
    for (std::size_t b = len; b-- > 0; ++pos) {
      if ((code >> b) & 1U) out[base + pos / 8] |= static_cast<std::uint8_t>(0x80U >> (pos % 8));
    }
  }
  return out;
}

QuantizedLatent huffman_decode(std::span<const std::uint8_t> stream) {
  Reader r(stream);
  Header h = read_header(r);
  const HuffmanCodebook cb = HuffmanCodebook::from_lengths(h.bits, h.lengths);
  const std::size_t payload_bytes = (static_cast<std::size_t>(h.payload_bits) + 7) / 8;
  if (r.remaining() < payload_bytes) throw DataError(DataError::Kind::kTruncated, "bitstream: truncated payload");
  if (r.remaining() > payload_bytes) throw DataError(DataError::Kind::kCorrupt, "bitstream: trailing bytes");
  auto payload = r.take(payload_bytes, "payload");

  // Canonical tables: per length, the first code and where its symbols start.
  std::vector<std::size_t> sorted;
  for (std::size_t i = 0; i < cb.lengths.size(); ++i) {
    if (cb.lengths[i] != 0) sorted.push_back(i);
  }
  std::stable_sort(sorted.begin(), sorted.end(),
                   [&](std::size_t a, std::size_t b) { return cb.lengths[a] < cb.lengths[b]; });
  std::vector<std::uint64_t> first_code(kMaxCodeLength + 1, 0), count(kMaxCodeLength + 1, 0),
      first_index(kMaxCodeLength + 1, 0);
  for (std::size_t idx = sorted.size(); idx-- > 0;) {
    const std::size_t len = cb.lengths[sorted[idx]];
    ++count[len];
    first_index[len] = idx;
    first_code[len] = cb.codes[sorted[idx]];
  }

  QuantizedLatent q;
  q.bits = h.bits;
  q.symbols.reserve(h.count);
  std::uint64_t pos = 0;
  for (std::uint32_t i = 0; i < h.count; ++i) {
    std::uint64_t code = 0;
    std::size_t len = 0;
    while (true) {
      if (pos >= h.payload_bits || len == kMaxCodeLength) {
        throw DataError(DataError::Kind::kCorrupt, "bitstream: payload ends inside a codeword");
      }
      code = (code << 1) | ((payload[pos / 8] >> (7 - pos % 8)) & 1U);
      ++pos;
      ++len;
      if (count[len] != 0 && code >= first_code[len] && code - first_code[len] < count[len]) {
        q.symbols.push_back(static_cast<Symbol>(sorted[first_index[len] + (code - first_code[len])]));
        break;
      }
    }
  }
  if (pos != h.payload_bits) throw DataError(DataError::Kind::kCorrupt, "bitstream: payload length mismatch");
  return q;
}

std::uint32_t payload_bits(std::span<const std::uint8_t> stream) {
  Reader r(stream);
  return read_header(r).payload_bits;
}

double bits_per_pixel(double bits, std::size_t nc, std::size_t nt) {
  if (nc == 0 || nt == 0) throw UsageError("bits_per_pixel: zero extent");
  return bits / static_cast<double>(2 * nc * nt);
}

double nominal_bpp(unsigned k, std::size_t n, std::size_t nc, std::size_t nt) {
  return bits_per_pixel(static_cast<double>(k) * static_cast<double>(n), nc, nt);
}

}  // namespace csifb::entropy
