/**
 * @file checkpoint.cpp
 * @brief CSIW serialization.
 */
#include "csifb/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "csifb/errors.hpp"

namespace csifb::train {

static_assert(std::endian::native == std::endian::little, "CSIW I/O assumes a little-endian host");

namespace {

using Kind = DataError::Kind;
constexpr char kMagic[4] = {'C', 'S', 'I', 'W'};
constexpr const char* kMomentPrefix[2] = {"adam.m/", "adam.v/"};

class Writer {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out_.insert(out_.end(), p, p + sizeof(T));
  }
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    out_.insert(out_.end(), p, p + n);
  }
  void tensor(const std::string& name, const ad::Shape& shape, std::span<const double> values) {
    put<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    bytes(name.data(), name.size());
    put<std::uint8_t>(static_cast<std::uint8_t>(shape.size()));
    for (auto d : shape) put<std::uint32_t>(static_cast<std::uint32_t>(d));
    for (double v : values) put<float>(static_cast<float>(v));
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> data) : data_(data) {}
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw DataError(Kind::kTruncated, "checkpoint: truncated file");
  }
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

std::vector<std::uint32_t> config_fields(const model::ModelConfig& c) {
  return {static_cast<std::uint32_t>(c.nc),        static_cast<std::uint32_t>(c.nt),
          static_cast<std::uint32_t>(c.embed_dim), static_cast<std::uint32_t>(c.window),
          static_cast<std::uint32_t>(c.heads),     static_cast<std::uint32_t>(c.latent),
          static_cast<std::uint32_t>(c.stb_count), static_cast<std::uint32_t>(c.cr_count),
          static_cast<std::uint32_t>(c.cr_width),  static_cast<std::uint32_t>(c.mlp_ratio)};
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const model::ModelParams& params, const AdamState& adam,
                                               const TrainingState& state) {
  Writer w;
  w.bytes(kMagic, 4);
  w.put<std::uint16_t>(kCheckpointVersion);
  for (auto f : config_fields(params.config())) w.put<std::uint32_t>(f);

  const auto& table = params.table();
  std::uint32_t entries = static_cast<std::uint32_t>(table.size());
  for (const auto* moments : {&adam.m, &adam.v}) entries += static_cast<std::uint32_t>(moments->size());
  w.put<std::uint32_t>(entries);
  for (const auto& [name, t] : table) w.tensor(name, t.shape(), t.values());
  int which = 0;
  for (const auto* moments : {&adam.m, &adam.v}) {
    for (const auto& [name, values] : *moments) {
      w.tensor(kMomentPrefix[which] + name, params.at(name).shape(), values);
    }
    ++which;
  }

  w.put<std::uint8_t>(static_cast<std::uint8_t>(state.bits));
  w.put<double>(state.mu);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(state.histogram.size()));
  for (auto c : state.histogram) w.put<std::uint64_t>(c);
  w.put<std::uint64_t>(adam.step);
  w.put<std::uint64_t>(state.epoch);
  w.put<std::uint64_t>(state.global_step);
  w.put<double>(state.best_score);
  return w.take();
}

Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (r.str(4) != std::string(kMagic, 4)) throw DataError(Kind::kBadMagic, "checkpoint: bad magic");
  const auto version = r.get<std::uint16_t>();
  if (version != kCheckpointVersion) {
    throw DataError(Kind::kVersionMismatch, "checkpoint: unsupported version " + std::to_string(version));
  }
  model::ModelConfig c;
  std::size_t* fields[] = {&c.nc,    &c.nt,        &c.embed_dim, &c.window,   &c.heads,
                           &c.latent, &c.stb_count, &c.cr_count, &c.cr_width, &c.mlp_ratio};
  for (auto* f : fields) *f = r.get<std::uint32_t>();
  try {
    c.validate();
  } catch (const UsageError& e) {
    throw DataError(Kind::kCorrupt, std::string("checkpoint: invalid model configuration: ") + e.what());
  }

  std::map<std::string, ad::Tensor> table;
  Checkpoint ck;
  const auto entries = r.get<std::uint32_t>();
  for (std::uint32_t e = 0; e < entries; ++e) {
    const std::string name = r.str(r.get<std::uint16_t>());
    ad::Shape shape(r.get<std::uint8_t>());
    for (auto& d : shape) d = r.get<std::uint32_t>();
    std::vector<double> values(ad::numel(shape));
    for (double& v : values) v = r.get<float>();
    bool moment = false;
    for (int which = 0; which < 2; ++which) {
      const std::string prefix = kMomentPrefix[which];
      if (name.rfind(prefix, 0) == 0) {
        (which == 0 ? ck.adam.m : ck.adam.v)[name.substr(prefix.size())] = std::move(values);
        moment = true;
        break;
      }
    }
    if (!moment) table.emplace(name, ad::Tensor(std::move(shape), std::move(values)));
  }
  ck.params = model::ModelParams::from_table(c, std::move(table));
  for (const auto* moments : {&ck.adam.m, &ck.adam.v}) {
    for (const auto& [name, values] : *moments) {
      auto it = ck.params.table().find(name);
      if (it == ck.params.table().end() || it->second.numel() != values.size()) {
        throw DataError(Kind::kCorrupt, "checkpoint: optimizer moment for unknown parameter " + name);
      }
    }
  }

  ck.state.bits = r.get<std::uint8_t>();
  ck.state.mu = r.get<double>();
  ck.state.histogram.resize(r.get<std::uint32_t>());
  for (auto& count : ck.state.histogram) count = r.get<std::uint64_t>();
  ck.adam.step = r.get<std::uint64_t>();
  ck.state.epoch = r.get<std::uint64_t>();
  ck.state.global_step = r.get<std::uint64_t>();
  ck.state.best_score = r.get<double>();
  if (!r.done()) throw DataError(Kind::kCorrupt, "checkpoint: trailing bytes");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const model::ModelParams& params, const AdamState& adam,
                     const TrainingState& state) {
  const auto bytes = serialize_checkpoint(params, adam, state);
  // Write then rename so an interrupted save never leaves a torn file.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError(Kind::kIo, "cannot open " + tmp.string() + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw DataError(Kind::kIo, "write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError(Kind::kIo, "cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes);
}

}  // namespace csifb::train
