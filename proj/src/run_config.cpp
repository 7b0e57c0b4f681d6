/**
 * @file run_config.cpp
 * @brief Config keys, presets, config-file parsing and manifests.
 */
#include "csifb/run_config.hpp"

#include <openssl/evp.h>

#include <charconv>
#include <fstream>
#include <functional>
#include <iterator>
#include <limits>
#include <sstream>

#include "csifb/errors.hpp"
#include "json.hpp"

namespace csifb::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
  throw UsageError("invalid value '" + value + "' for " + key + " (expected " + expected + ")");
}

template <typename T>
T parse_integer(const std::string& key, const std::string& value) {
  T out{};
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end || value.empty()) bad_value(key, value, "a non-negative integer");
  return out;
}

double parse_real(const std::string& key, const std::string& value, bool allow_inf = false) {
  if (allow_inf && (value == "inf" || value == "clean")) return std::numeric_limits<double>::infinity();
  double out = 0.0;
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end || value.empty() || !std::isfinite(out)) bad_value(key, value, "a finite number");
  return out;
}

std::vector<std::string> split_list(const std::string& key, const std::string& value) {
  std::vector<std::string> items;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) items.push_back(trim(item));
  if (items.empty()) bad_value(key, value, "a comma-separated list");
  for (const auto& i : items) {
    if (i.empty()) bad_value(key, value, "a comma-separated list");
  }
  return items;
}

std::string format_real(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

template <typename T>
std::string join(const std::vector<T>& v, const std::function<std::string(const T&)>& fmt) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + fmt(v[i]);
  return out;
}

struct Key {
  std::string name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define SIZE_KEY(NAME, FIELD)                                                                      \
  Key {                                                                                            \
    NAME, [](RunConfig& c, const std::string& v) { c.FIELD = parse_integer<std::size_t>(NAME, v); }, \
        [](const RunConfig& c) { return std::to_string(c.FIELD); }                                 \
  }
#define U64_KEY(NAME, FIELD)                                                                          \
  Key {                                                                                               \
    NAME, [](RunConfig& c, const std::string& v) { c.FIELD = parse_integer<std::uint64_t>(NAME, v); }, \
        [](const RunConfig& c) { return std::to_string(c.FIELD); }                                    \
  }
#define REAL_KEY(NAME, FIELD)                                                             \
  Key {                                                                                   \
    NAME, [](RunConfig& c, const std::string& v) { c.FIELD = parse_real(NAME, v); },      \
        [](const RunConfig& c) { return format_real(c.FIELD); }                           \
  }

const std::vector<Key>& key_table() {
  static const std::vector<Key> table = {
      Key{"data.profile", [](RunConfig& c, const std::string& v) { c.profile = data::parse_profile(v); },
          [](const RunConfig& c) { return data::profile_name(c.profile); }},
      SIZE_KEY("data.samples", samples),
      SIZE_KEY("data.subcarriers", subcarriers),
      Key{"data.nc", [](RunConfig& c, const std::string& v) { c.model.nc = parse_integer<std::size_t>("data.nc", v); },
          [](const RunConfig& c) { return std::to_string(c.model.nc); }},
      Key{"data.nt", [](RunConfig& c, const std::string& v) { c.model.nt = parse_integer<std::size_t>("data.nt", v); },
          [](const RunConfig& c) { return std::to_string(c.model.nt); }},
      U64_KEY("data.seed", data_seed),
      SIZE_KEY("model.embed_dim", model.embed_dim),
      SIZE_KEY("model.window", model.window),
      SIZE_KEY("model.heads", model.heads),
      SIZE_KEY("model.latent", model.latent),
      SIZE_KEY("model.stb_count", model.stb_count),
      SIZE_KEY("model.cr_count", model.cr_count),
      SIZE_KEY("model.cr_width", model.cr_width),
      SIZE_KEY("model.mlp_ratio", model.mlp_ratio),
      Key{"quantizer.bits",
          [](RunConfig& c, const std::string& v) { c.train.quant.bits = parse_integer<unsigned>("quantizer.bits", v); },
          [](const RunConfig& c) { return std::to_string(c.train.quant.bits); }},
      REAL_KEY("quantizer.mu", train.quant.mu),
      REAL_KEY("train.lr", train.lr),
      SIZE_KEY("train.batch", train.batch),
      SIZE_KEY("train.epochs", train.epochs),
      SIZE_KEY("train.max_steps", train.max_steps),
      REAL_KEY("train.lambda", train.lambda),
      U64_KEY("train.seed", train.seed),
      SIZE_KEY("train.eval_interval", train.eval_interval),
      REAL_KEY("train.beta1", train.adam.beta1),
      REAL_KEY("train.beta2", train.adam.beta2),
      REAL_KEY("train.eps", train.adam.eps),
      Key{"sweep.snrs",
          [](RunConfig& c, const std::string& v) {
            c.snrs.clear();
            for (const auto& s : split_list("sweep.snrs", v)) c.snrs.push_back(parse_real("sweep.snrs", s, true));
          },
          [](const RunConfig& c) { return join<double>(c.snrs, format_real); }},
      Key{"sweep.bits",
          [](RunConfig& c, const std::string& v) {
            c.sweep_bits.clear();
            for (const auto& s : split_list("sweep.bits", v)) c.sweep_bits.push_back(parse_integer<unsigned>("sweep.bits", s));
          },
          [](const RunConfig& c) {
            return join<unsigned>(c.sweep_bits, [](const unsigned& b) { return std::to_string(b); });
          }},
      Key{"sweep.latents",
          [](RunConfig& c, const std::string& v) {
            c.sweep_latents.clear();
            for (const auto& s : split_list("sweep.latents", v))
              c.sweep_latents.push_back(parse_integer<std::size_t>("sweep.latents", s));
          },
          [](const RunConfig& c) {
            return join<std::size_t>(c.sweep_latents, [](const std::size_t& m) { return std::to_string(m); });
          }},
      U64_KEY("sweep.seed", eval_seed),
      Key{"sweep.split",
          [](RunConfig& c, const std::string& v) {
            if (v != "train" && v != "val" && v != "test") bad_value("sweep.split", v, "train, val or test");
            c.split = v;
          },
          [](const RunConfig& c) { return c.split; }},
  };
  return table;
}

#undef SIZE_KEY
#undef U64_KEY
#undef REAL_KEY

const Key& find_key(const std::string& name) {
  for (const auto& k : key_table()) {
    if (k.name == name) return k;
  }
  throw UsageError("unknown config key '" + name + "'");
}

RunConfig desk_preset() {
  RunConfig c;
  c.preset = "desk";
  c.samples = 1500;
  c.model.embed_dim = 16;
  c.model.window = 8;
  c.model.heads = 4;
  c.model.latent = 512;
  c.train.batch = 8;
  c.train.epochs = 5;
  c.train.lambda = 1e-3;
  c.train.quant.bits = 8;
  return c;
}

RunConfig paper_preset() {
  RunConfig c;
  c.preset = "paper";
  c.samples = 150000;
  c.model.embed_dim = 64;
  c.model.window = 8;
  c.model.heads = 4;
  c.model.latent = 512;
  c.train.batch = 200;
  c.train.epochs = 1000;
  c.train.lambda = 1e-3;
  c.train.quant.bits = 8;
  c.train.eval_interval = 10;
  return c;
}

}  // namespace

data::GeneratorConfig RunConfig::generator() const {
  data::GeneratorConfig g;
  g.subcarriers = subcarriers;
  g.nc = model.nc;
  g.nt = model.nt;
  g.profile = profile;
  return g;
}

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& k : key_table()) out.push_back(k.name);
    return out;
  }();
  return names;
}

void RunConfig::set(const std::string& key, const std::string& value) { find_key(key).set(*this, trim(value)); }

std::string RunConfig::get(const std::string& key) const { return find_key(key).get(*this); }

std::map<std::string, std::string> RunConfig::resolved() const {
  std::map<std::string, std::string> out;
  for (const auto& k : key_table()) out[k.name] = k.get(*this);
  return out;
}

void RunConfig::apply_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line, section;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(lineno) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw UsageError(where + "malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section != "data" && section != "model" && section != "quantizer" && section != "train" && section != "sweep") {
        throw UsageError(where + "unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError(where + "expected key = value");
    if (section.empty()) throw UsageError(where + "key outside of a section");
    const std::string key = section + "." + trim(line.substr(0, eq));
    try {
      set(key, line.substr(eq + 1));
    } catch (const UsageError& e) {
      throw UsageError(where + e.what());
    }
  }
}

void RunConfig::apply_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(DataError::Kind::kIo, "cannot open config file " + path.string());
  apply_text(std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()), path.string());
}

void RunConfig::validate() const {
  if (samples == 0) throw UsageError("data.samples must be at least 1");
  if (model.nc > subcarriers) throw UsageError("data.nc must not exceed data.subcarriers");
  model.validate();
  train.validate();
  if (snrs.empty() || sweep_bits.empty() || sweep_latents.empty()) throw UsageError("sweep lists must be non-empty");
  for (unsigned b : sweep_bits) quant::QuantizerConfig{b, train.quant.mu}.validate();
  for (double s : snrs) {
    if (std::isnan(s) || s == -std::numeric_limits<double>::infinity()) throw UsageError("sweep.snrs: invalid SNR");
  }
}

RunConfig preset(const std::string& name) {
  if (name == "desk") return desk_preset();
  if (name == "paper") return paper_preset();
  throw UsageError("unknown preset '" + name + "' (expected desk or paper)");
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"desk", "paper"};
  return names;
}

std::map<std::string, std::string> overrides(const RunConfig& config) {
  const auto base = preset(config.preset).resolved();
  std::map<std::string, std::string> out;
  for (const auto& [k, v] : config.resolved()) {
    if (base.at(k) != v) out[k] = v;
  }
  return out;
}

std::string sha1_hex(std::span<const std::uint8_t> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha1(), nullptr) != 1) {
    throw std::runtime_error("SHA-1 digest failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

std::string blob_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(DataError::Kind::kIo, "cannot open " + path.string());
  std::vector<std::uint8_t> content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string header = "blob " + std::to_string(content.size());
  std::vector<std::uint8_t> blob(header.begin(), header.end());
  blob.push_back(0);
  blob.insert(blob.end(), content.begin(), content.end());
  return sha1_hex(blob);
}

std::string make_manifest(const std::string& command, const RunConfig& config,
                          const std::vector<ManifestInput>& inputs) {
  nlohmann::ordered_json m;
  m["format"] = "csifb-manifest";
  m["version"] = 1;
  m["command"] = command;
  m["preset"] = config.preset;
  m["config"] = config.resolved();
  m["overrides"] = overrides(config);
  nlohmann::ordered_json in = nlohmann::ordered_json::array();
  for (const auto& i : inputs) in.push_back({{"role", i.role}, {"path", i.path.string()}, {"sha1", blob_hash(i.path)}});
  m["inputs"] = in;

  // The content hash ignores input paths, so relocated inputs hash the same.
  nlohmann::ordered_json hashed = m;
  for (auto& i : hashed["inputs"]) i.erase("path");
  const std::string canonical = hashed.dump();
  m["content_hash"] = sha1_hex(std::span(reinterpret_cast<const std::uint8_t*>(canonical.data()), canonical.size()));
  return m.dump(2) + "\n";
}

}  // namespace csifb::cli
