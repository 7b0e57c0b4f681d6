/**
 * @file data.hpp
 * @brief Synthetic multipath channels, angular-delay preprocessing,
 * dataset-wide min-max normalization, AWGN and the CSID file format.
 */
#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace csifb::data {

using Complex = std::complex<double>;

/// Row-major complex matrix.
struct ComplexMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<Complex> values;

  ComplexMatrix() = default;
  ComplexMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c) {}
  Complex& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  const Complex& operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  double frobenius_norm() const;
};

/// Spatial-frequency channel: subcarriers x transmit antennas.
using SpatialFrequencyChannel = ComplexMatrix;

enum class Profile { kIndoor, kOutdoor };

/// "indoor-like" / "outdoor-like".
std::string profile_name(Profile p);
Profile parse_profile(const std::string& name);

struct GeneratorConfig {
  std::size_t subcarriers = 256;  // full subcarrier count before truncation
  std::size_t nc = 32;            // delay taps that may carry energy
  std::size_t nt = 32;
  Profile profile = Profile::kIndoor;
  /// Overrides the profile's random cluster count when set.
  std::optional<std::size_t> clusters;
};

/// Clusters of rays built in the delay domain with every delay below nc, then
/// taken to the frequency domain. Each nonzero sample has unit Frobenius norm.
class SyntheticSource {
 public:
  SyntheticSource(const GeneratorConfig& config, std::uint64_t seed);
  ~SyntheticSource();
  SyntheticSource(const SyntheticSource&) = delete;
  SyntheticSource& operator=(const SyntheticSource&) = delete;

  SpatialFrequencyChannel next();

 private:
  struct State;
  std::unique_ptr<State> state_;
};

/// The first `count` draws of a SyntheticSource.
std::vector<SpatialFrequencyChannel> generate_synthetic(std::size_t count, const GeneratorConfig& config,
                                                        std::uint64_t seed);

/// Unitary N x N DFT matrix, F[k][n] = exp(-2 pi i k n / N) / sqrt(N).
ComplexMatrix dft_matrix(std::size_t n);

/// F_d H F_a^H with unitary DFT matrices.
ComplexMatrix dft_sparsify(const SpatialFrequencyChannel& h);

/// First nc rows, real part stacked over imaginary part: 2nc x nt, row-major.
std::vector<double> truncate_and_realify(const ComplexMatrix& angular_delay, std::size_t nc);

/// Affine map onto [0, 1]: normalized = (raw - offset) / scale.
struct Normalization {
  double offset = 0.0;
  double scale = 1.0;

  double normalize(double raw) const { return (raw - offset) / scale; }
  double denormalize(double value) const { return value * scale + offset; }
  bool operator==(const Normalization&) const = default;
};

/// Min-max over every value; a constant set gets scale 1.
Normalization fit_normalization(std::span<const double> raw);

/// Normalized angular-delay samples, each 2nc x nt, stored as float32.
struct Dataset {
  std::size_t nc = 32;
  std::size_t nt = 32;
  Normalization norm;
  std::vector<float> values;

  std::size_t sample_size() const { return 2 * nc * nt; }
  std::size_t count() const { return sample_size() == 0 ? 0 : values.size() / sample_size(); }
  std::span<const float> sample(std::size_t index) const;
  /// Sample widened to double.
  std::vector<double> sample_double(std::size_t index) const;
  /// De-normalized sample.
  std::vector<double> raw_sample(std::size_t index) const;
  /// Copy of samples [begin, begin + n).
  Dataset slice(std::size_t begin, std::size_t n) const;
  bool operator==(const Dataset&) const = default;
};

/// Sparsifies, truncates and realifies every channel, then normalizes with a
/// single record fitted over the whole set.
Dataset build_dataset(const std::vector<SpatialFrequencyChannel>& channels, std::size_t nc);

/// Same result as build_dataset(generate_synthetic(count, config, seed),
/// config.nc) without holding the complex channels in memory.
Dataset synthesize_dataset(std::size_t count, const GeneratorConfig& config, std::uint64_t seed);

struct SplitCounts {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;
};

/// 10:3:2 split; rounding leftovers go to the test set.
SplitCounts split_counts(std::size_t total);

struct Splits {
  Dataset train, val, test;
};
Splits split_dataset(const Dataset& all);

/// Sentinel for a noiseless channel.
constexpr double kCleanSnr = std::numeric_limits<double>::infinity();

/// Adds white Gaussian noise to the de-normalized sample with power
/// mean(raw^2) / 10^(snr_db / 10), then re-normalizes without clamping.
/// snr_db = +inf returns the input unchanged; NaN or -inf is rejected.
std::vector<double> add_awgn(std::span<const double> normalized, const Normalization& norm, double snr_db,
                             std::uint64_t seed);

constexpr std::uint16_t kDatasetVersion = 1;

/// "CSID" | u16 version | u32 count | u32 2, nc, nt | float32 payload |
/// f64 offset | f64 scale, little-endian.
void save_dataset(const std::filesystem::path& path, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_dataset(const Dataset& ds);
Dataset parse_dataset(std::span<const std::uint8_t> bytes);

}  // namespace csifb::data
