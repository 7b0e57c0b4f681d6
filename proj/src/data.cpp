/**
 * @file data.cpp
 * @brief Channel generator, angular-delay preprocessing, noise and CSID I/O.
 */
#include "csifb/data.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <numbers>
#include <random>

#include "csifb/errors.hpp"

namespace csifb::data {

static_assert(std::endian::native == std::endian::little, "CSID I/O assumes a little-endian host");

namespace {

using CMat = Eigen::Matrix<Complex, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ProfileParams {
  std::size_t min_clusters, max_clusters;
  std::size_t max_delay;      // cluster delays drawn from [0, max_delay)
  double delay_decay;         // taps; cluster power ~ exp(-delay / decay)
  double angle_spread;        // radians, per-ray deviation around the cluster angle
  std::size_t rays;
};

ProfileParams params_for(Profile p, std::size_t nc) {
  if (p == Profile::kIndoor) return {2, 6, std::min<std::size_t>(nc, 8), 3.0, 4.0 * std::numbers::pi / 180.0, 5};
  return {6, 14, nc, 12.0, 8.0 * std::numbers::pi / 180.0, 5};
}

const CMat& cached_dft(std::size_t n) {
  thread_local std::map<std::size_t, CMat> cache;
  auto it = cache.find(n);
  if (it == cache.end()) {
    ComplexMatrix f = dft_matrix(n);
    it = cache.emplace(n, Eigen::Map<CMat>(f.values.data(), static_cast<Eigen::Index>(n),
                                           static_cast<Eigen::Index>(n)))
             .first;
  }
  return it->second;
}

}  // namespace

double ComplexMatrix::frobenius_norm() const {
  double sum = 0.0;
  for (const auto& v : values) sum += std::norm(v);
  return std::sqrt(sum);
}

std::string profile_name(Profile p) { return p == Profile::kIndoor ? "indoor-like" : "outdoor-like"; }

Profile parse_profile(const std::string& name) {
  if (name == "indoor-like" || name == "indoor") return Profile::kIndoor;
  if (name == "outdoor-like" || name == "outdoor") return Profile::kOutdoor;
  throw UsageError("unknown profile '" + name + "' (expected indoor-like or outdoor-like)");
}

struct SyntheticSource::State {
  GeneratorConfig config;
  ProfileParams pp;
  std::mt19937_64 rng;
  std::uniform_int_distribution<std::size_t> cluster_dist;
  std::uniform_int_distribution<std::size_t> delay_dist;
  std::uniform_int_distribution<std::size_t> jitter_dist{0, 1};
  std::uniform_real_distribution<double> angle_dist{-std::numbers::pi / 3.0, std::numbers::pi / 3.0};
  std::normal_distribution<double> normal{0.0, 1.0};
  // Inverse delay transform restricted to the first nc taps: Fd^H[:, 0:nc].
  CMat inv_delay;

  State(const GeneratorConfig& c, std::uint64_t seed)
      : config(c),
        pp(params_for(c.profile, c.nc)),
        rng(seed),
        cluster_dist(pp.min_clusters, pp.max_clusters),
        delay_dist(0, pp.max_delay - 1),
        inv_delay(cached_dft(c.subcarriers).adjoint().leftCols(static_cast<Eigen::Index>(c.nc))) {}
};

SyntheticSource::SyntheticSource(const GeneratorConfig& config, std::uint64_t seed) {
  if (config.nc == 0 || config.nt == 0 || config.nc > config.subcarriers) {
    throw UsageError("synthetic channels: need 1 <= nc <= subcarriers and nt >= 1");
  }
  state_ = std::make_unique<State>(config, seed);
}

SyntheticSource::~SyntheticSource() = default;

SpatialFrequencyChannel SyntheticSource::next() {
  State& st = *state_;
  const ProfileParams& pp = st.pp;
  const std::size_t n_sub = st.config.subcarriers, nc = st.config.nc, nt = st.config.nt;
  const std::size_t clusters = st.config.clusters.value_or(st.cluster_dist(st.rng));
  CMat delay_domain = CMat::Zero(static_cast<Eigen::Index>(nc), static_cast<Eigen::Index>(nt));
  for (std::size_t c = 0; c < clusters; ++c) {
    const std::size_t tau = st.delay_dist(st.rng);
    const double theta = st.angle_dist(st.rng);
    const double power = std::exp(-static_cast<double>(tau) / pp.delay_decay);
    const double ray_std = std::sqrt(power / (2.0 * static_cast<double>(pp.rays)));
    for (std::size_t r = 0; r < pp.rays; ++r) {
      const std::size_t ray_tau = std::min(tau + st.jitter_dist(st.rng), nc - 1);
      const double ray_theta = theta + pp.angle_spread * st.normal(st.rng);
      const Complex gain(ray_std * st.normal(st.rng), ray_std * st.normal(st.rng));
      const double phase_step = -std::numbers::pi * std::sin(ray_theta);
      for (std::size_t a = 0; a < nt; ++a) {
        delay_domain(static_cast<Eigen::Index>(ray_tau), static_cast<Eigen::Index>(a)) +=
            gain * std::polar(1.0, phase_step * static_cast<double>(a));
      }
    }
  }
  // The product goes through an Eigen-owned (always aligned) buffer so the
  // GEMM kernel, and hence the rounding, does not depend on where h lives.
  const CMat freq = st.inv_delay * delay_domain;
  SpatialFrequencyChannel h(n_sub, nt);
  std::copy(freq.data(), freq.data() + freq.size(), h.values.begin());
  const double norm = h.frobenius_norm();
  if (norm > 0.0) {
    for (auto& v : h.values) v /= norm;
  }
  return h;
}

std::vector<SpatialFrequencyChannel> generate_synthetic(std::size_t count, const GeneratorConfig& config,
                                                        std::uint64_t seed) {
  if (count == 0) throw UsageError("generate_synthetic: count must be at least 1");
  SyntheticSource source(config, seed);
  std::vector<SpatialFrequencyChannel> out;
  out.reserve(count);
  for (std::size_t s = 0; s < count; ++s) out.push_back(source.next());
  return out;
}

ComplexMatrix dft_matrix(std::size_t n) {
  ComplexMatrix f(n, n);
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t j = 0; j < n; ++j) {
      // Reduce k*j mod n first so the angle stays accurate for large n.
      const double angle = -2.0 * std::numbers::pi * static_cast<double>((k * j) % n) / static_cast<double>(n);
      f(k, j) = std::polar(scale, angle);
    }
  }
  return f;
}

ComplexMatrix dft_sparsify(const SpatialFrequencyChannel& h) {
  ComplexMatrix out(h.rows, h.cols);
  if (h.rows == 0 || h.cols == 0) return out;
  // Aligned copies keep the rounding independent of the caller's buffers.
  const CMat hm = Eigen::Map<const CMat>(h.values.data(), static_cast<Eigen::Index>(h.rows),
                                         static_cast<Eigen::Index>(h.cols));
  const CMat om = cached_dft(h.rows) * hm * cached_dft(h.cols).adjoint();
  std::copy(om.data(), om.data() + om.size(), out.values.begin());
  return out;
}

std::vector<double> truncate_and_realify(const ComplexMatrix& angular_delay, std::size_t nc) {
  if (nc > angular_delay.rows) {
    throw UsageError("truncate_and_realify: nc " + std::to_string(nc) + " exceeds " +
                     std::to_string(angular_delay.rows) + " rows");
  }
  const std::size_t nt = angular_delay.cols;
  std::vector<double> out(2 * nc * nt);
  for (std::size_t r = 0; r < nc; ++r) {
    for (std::size_t c = 0; c < nt; ++c) {
      out[r * nt + c] = angular_delay(r, c).real();
      out[(nc + r) * nt + c] = angular_delay(r, c).imag();
    }
  }
  return out;
}

Normalization fit_normalization(std::span<const double> raw) {
  if (raw.empty()) return {};
  const auto [lo, hi] = std::minmax_element(raw.begin(), raw.end());
  Normalization n;
  n.offset = *lo;
  n.scale = *hi > *lo ? *hi - *lo : 1.0;
  return n;
}

std::span<const float> Dataset::sample(std::size_t index) const {
  if (index >= count()) throw std::out_of_range("dataset sample " + std::to_string(index) + " out of range");
  return std::span<const float>(values).subspan(index * sample_size(), sample_size());
}

std::vector<double> Dataset::sample_double(std::size_t index) const {
  auto s = sample(index);
  return std::vector<double>(s.begin(), s.end());
}

std::vector<double> Dataset::raw_sample(std::size_t index) const {
  auto s = sample_double(index);
  for (double& v : s) v = norm.denormalize(v);
  return s;
}

Dataset Dataset::slice(std::size_t begin, std::size_t n) const {
  if (begin + n > count()) throw std::out_of_range("dataset slice out of range");
  Dataset d;
  d.nc = nc;
  d.nt = nt;
  d.norm = norm;
  const auto first = values.begin() + static_cast<std::ptrdiff_t>(begin * sample_size());
  d.values.assign(first, first + static_cast<std::ptrdiff_t>(n * sample_size()));
  return d;
}

namespace {

Dataset normalized_dataset(std::vector<double> raw, std::size_t nc, std::size_t nt) {
  Dataset ds;
  ds.nc = nc;
  ds.nt = nt;
  ds.norm = fit_normalization(raw);
  ds.values.resize(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) ds.values[i] = static_cast<float>(ds.norm.normalize(raw[i]));
  return ds;
}

}  // namespace

Dataset build_dataset(const std::vector<SpatialFrequencyChannel>& channels, std::size_t nc) {
  const std::size_t nt = channels.empty() ? 0 : channels.front().cols;
  std::vector<double> raw;
  raw.reserve(channels.size() * 2 * nc * nt);
  for (const auto& h : channels) {
    if (h.cols != nt) throw ShapeError("build_dataset: channels have differing antenna counts");
    auto r = truncate_and_realify(dft_sparsify(h), nc);
    raw.insert(raw.end(), r.begin(), r.end());
  }
  return normalized_dataset(std::move(raw), nc, nt);
}

Dataset synthesize_dataset(std::size_t count, const GeneratorConfig& config, std::uint64_t seed) {
  if (count == 0) throw UsageError("synthesize_dataset: count must be at least 1");
  SyntheticSource source(config, seed);
  std::vector<double> raw;
  raw.reserve(count * 2 * config.nc * config.nt);
  for (std::size_t s = 0; s < count; ++s) {
    auto r = truncate_and_realify(dft_sparsify(source.next()), config.nc);
    raw.insert(raw.end(), r.begin(), r.end());
  }
  return normalized_dataset(std::move(raw), config.nc, config.nt);
}

SplitCounts split_counts(std::size_t total) {
  SplitCounts s;
  s.train = total * 10 / 15;
  s.val = total * 3 / 15;
  s.test = total - s.train - s.val;
  return s;
}

Splits split_dataset(const Dataset& all) {
  const SplitCounts c = split_counts(all.count());
  return {all.slice(0, c.train), all.slice(c.train, c.val), all.slice(c.train + c.val, c.test)};
}

std::vector<double> add_awgn(std::span<const double> normalized, const Normalization& norm, double snr_db,
                             std::uint64_t seed) {
  if (std::isnan(snr_db) || snr_db == -std::numeric_limits<double>::infinity()) {
    throw UsageError("add_awgn: snr_db must be finite or +inf");
  }
  std::vector<double> out(normalized.begin(), normalized.end());
  if (snr_db == kCleanSnr || out.empty()) return out;
  double power = 0.0;
  for (double& v : out) {
    v = norm.denormalize(v);
    power += v * v;
  }
  power /= static_cast<double>(out.size());
  const double sigma = std::sqrt(power / std::pow(10.0, snr_db / 10.0));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma > 0.0 ? sigma : 1.0);
  for (double& v : out) {
    if (sigma > 0.0) v += noise(rng);
    v = norm.normalize(v);
  }
  return out;
}

namespace {

constexpr char kMagic[4] = {'C', 'S', 'I', 'D'};
constexpr std::size_t kHeaderBytes = 4 + 2 + 4 + 12;
constexpr std::size_t kTrailerBytes = 16;

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T get(std::span<const std::uint8_t> bytes, std::size_t offset) {
  T v;
  std::memcpy(&v, bytes.data() + offset, sizeof(T));
  return v;
}

}  // namespace

std::vector<std::uint8_t> serialize_dataset(const Dataset& ds) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  out.reserve(kHeaderBytes + ds.values.size() * 4 + kTrailerBytes);
  put<std::uint16_t>(out, kDatasetVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ds.count()));
  put<std::uint32_t>(out, 2);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ds.nc));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ds.nt));
  const auto* payload = reinterpret_cast<const std::uint8_t*>(ds.values.data());
  out.insert(out.end(), payload, payload + ds.values.size() * sizeof(float));
  put<double>(out, ds.norm.offset);
  put<double>(out, ds.norm.scale);
  return out;
}

Dataset parse_dataset(std::span<const std::uint8_t> bytes) {
  using Kind = DataError::Kind;
  if (bytes.size() < 6) throw DataError(Kind::kTruncated, "dataset: truncated header");
  if (!std::equal(kMagic, kMagic + 4, bytes.begin())) throw DataError(Kind::kBadMagic, "dataset: bad magic");
  const auto version = get<std::uint16_t>(bytes, 4);
  if (version != kDatasetVersion) {
    throw DataError(Kind::kVersionMismatch, "dataset: unsupported version " + std::to_string(version));
  }
  if (bytes.size() < kHeaderBytes) throw DataError(Kind::kTruncated, "dataset: truncated header");
  const auto count = get<std::uint32_t>(bytes, 6);
  const auto two = get<std::uint32_t>(bytes, 10);
  const auto nc = get<std::uint32_t>(bytes, 14);
  const auto nt = get<std::uint32_t>(bytes, 18);
  if (two != 2 || nc == 0 || nt == 0) {
    throw DataError(Kind::kExtentMismatch, "dataset: invalid extents (" + std::to_string(two) + ", " +
                                               std::to_string(nc) + ", " + std::to_string(nt) + ")");
  }
  const std::size_t payload = std::size_t{count} * 2 * nc * nt * sizeof(float);
  if (bytes.size() < kHeaderBytes + payload + kTrailerBytes) {
    throw DataError(Kind::kTruncated, "dataset: truncated payload");
  }
  if (bytes.size() > kHeaderBytes + payload + kTrailerBytes) {
    throw DataError(Kind::kCorrupt, "dataset: trailing bytes after normalization record");
  }
  Dataset ds;
  ds.nc = nc;
  ds.nt = nt;
  ds.values.resize(payload / sizeof(float));
  std::memcpy(ds.values.data(), bytes.data() + kHeaderBytes, payload);
  ds.norm.offset = get<double>(bytes, kHeaderBytes + payload);
  ds.norm.scale = get<double>(bytes, kHeaderBytes + payload + 8);
  if (!std::isfinite(ds.norm.offset) || !(ds.norm.scale > 0.0) || !std::isfinite(ds.norm.scale)) {
    throw DataError(Kind::kCorrupt, "dataset: invalid normalization record");
  }
  return ds;
}

void save_dataset(const std::filesystem::path& path, const Dataset& ds) {
  const auto bytes = serialize_dataset(ds);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError(DataError::Kind::kIo, "cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError(DataError::Kind::kIo, "write failed for " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError(DataError::Kind::kIo, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_dataset(bytes);
}

}  // namespace csifb::data
