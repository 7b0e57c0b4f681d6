// Small model configurations and randomized parameters shared by tests.
#pragma once

#include <string>

#include "csifb/model.hpp"
#include "test_util.hpp"

namespace testutil {

inline csifb::model::ModelConfig tiny_config() {
  csifb::model::ModelConfig c;
  c.nc = c.nt = 8;
  c.embed_dim = 8;
  c.window = 4;
  c.heads = 2;
  c.latent = 32;
  c.stb_count = 1;
  c.cr_count = 1;
  c.cr_width = 4;
  return c;
}

// Random values everywhere, including biases, norm parameters and the
// residual-branch projections that start at zero. Values stay float32-exact
// like trained parameters.
inline csifb::model::ModelParams random_params(const csifb::model::ModelConfig& c, std::uint64_t seed) {
  auto p = csifb::model::ModelParams::initialize(c, seed);
  Gen g(seed + 1000);
  for (auto& [name, t] : p.table()) {
    if (name.find(".out.weight") != std::string::npos || name.find(".fc2.weight") != std::string::npos) {
      for (double& v : t.mutable_values()) v = g.uniform(-0.4, 0.4);
    } else if (name.find(".bias") != std::string::npos) {
      for (double& v : t.mutable_values()) v = g.uniform(-0.2, 0.2);
    } else if (name.find(".gain") != std::string::npos) {
      for (double& v : t.mutable_values()) v = g.uniform(0.5, 1.5);
    }
    for (double& v : t.mutable_values()) v = static_cast<float>(v);
  }
  return p;
}

}  // namespace testutil
