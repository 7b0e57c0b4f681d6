/**
 * @file model.hpp
 * @brief STQENet encoder/decoder: spatially separable transformer blocks
 * (local window attention, global sub-sampled attention, MLP) and the
 * multi-resolution CR convolution block.
 *
 * Feature maps are channel-first [d x L x L]. Inside a transformer block the
 * map is held as window-grouped tokens [m^2 x W^2 x d].
 */
#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "csifb/tensor.hpp"

namespace csifb::model {

struct ModelConfig {
  std::size_t nc = 32;         // retained delay taps
  std::size_t nt = 32;         // transmit antennas; also the spatial side L
  std::size_t embed_dim = 64;  // d
  std::size_t window = 8;      // W
  std::size_t heads = 4;       // P
  std::size_t latent = 512;    // M
  std::size_t stb_count = 2;   // transformer blocks per stem
  std::size_t cr_count = 2;
  std::size_t cr_width = 8;    // channels inside each CR path
  std::size_t mlp_ratio = 4;

  std::size_t side() const { return nt; }
  std::size_t partitions() const { return side() / window; }
  std::size_t input_size() const { return 2 * nc * nt; }
  double compression_ratio() const { return static_cast<double>(latent) / static_cast<double>(input_size()); }

  /// Throws UsageError on any violated structural constraint.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

/// kResidualOut marks the last projection of a residual branch; it starts at
/// zero so every transformer block is the identity at initialization.
enum class ParamKind { kWeight, kResidualOut, kBias, kGain };

struct ParamSpec {
  std::string name;
  ad::Shape shape;
  ParamKind kind;
  std::size_t fan_in;
};

/// Every parameter the model needs, derived from the configuration alone.
std::vector<ParamSpec> param_specs(const ModelConfig& config);
std::size_t param_count(const ModelConfig& config);

class ModelParams {
 public:
  ModelParams() = default;
  /// Fan-in scaled uniform weights, zero residual-branch outputs and biases,
  /// unit gains. Values are
  /// rounded to float32 so checkpoints are lossless.
  static ModelParams initialize(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const ad::Tensor& at(const std::string& name) const;
  ad::Tensor& at(const std::string& name);
  std::map<std::string, ad::Tensor>& table() { return table_; }
  const std::map<std::string, ad::Tensor>& table() const { return table_; }
  std::size_t count() const;

  void set_requires_grad(bool on);
  void zero_grad();
  /// Deep copy with fresh leaves.
  ModelParams clone() const;

  /// Builds a table from loaded tensors, checking names and shapes.
  static ModelParams from_table(const ModelConfig& config, std::map<std::string, ad::Tensor> table);

 private:
  ModelConfig config_;
  std::map<std::string, ad::Tensor> table_;
};

/// Measured multiply-accumulates of the query-key score stage.
struct AttentionProbe {
  std::uint64_t score_macs = 0;
  std::size_t groups = 0;
};

ad::Tensor lsa_forward(const ad::Tensor& x, const ModelParams& params, const std::string& prefix,
                       AttentionProbe* probe = nullptr);
ad::Tensor gsa_forward(const ad::Tensor& x, const ModelParams& params, const std::string& prefix,
                       AttentionProbe* probe = nullptr);
ad::Tensor stb_forward(const ad::Tensor& x, const ModelParams& params, const std::string& prefix);
ad::Tensor cr_block_forward(const ad::Tensor& x, const ModelParams& params, const std::string& prefix);

/// Subtracted from every input entry before the first convolution.
constexpr double kInputCenter = 0.5;

/// f_e: [2Nc x Nt] angular-delay matrix -> latent s in (-1, 1)^M.
ad::Tensor encode(const ad::Tensor& channel, const ModelParams& params);
/// f_d: latent [M] -> reconstruction in [0, 1]^{2Nc x Nt}.
ad::Tensor decode(const ad::Tensor& latent, const ModelParams& params);

/// Dominant multiply-accumulate terms of the attention cost,
/// (L^4 / m^4 * d, m^2 * L^2 * d), evaluated literally.
std::pair<std::uint64_t, std::uint64_t> attention_cost(const ModelConfig& config);

}  // namespace csifb::model
