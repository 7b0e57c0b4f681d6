/**
 * @file cli.cpp
 * @brief Subcommand wiring, config resolution and output files.
 */
#include "csifb/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "csifb/checkpoint.hpp"
#include "csifb/data.hpp"
#include "csifb/entropy.hpp"
#include "csifb/errors.hpp"
#include "csifb/model.hpp"
#include "csifb/quant.hpp"
#include "csifb/report.hpp"
#include "csifb/run_config.hpp"
#include "csifb/train.hpp"

namespace csifb::cli {

namespace fs = std::filesystem;

namespace {

// Tolerances of the trend warnings printed by the sweeps.
constexpr double kSnrTolDb = 0.5;
constexpr double kFloorDb = 1.0;
constexpr double kRateTolDb = 0.5;

/// Shared by every subcommand. Precedence, lowest first: preset, --config
/// file, --set, --section.key flags, short aliases.
struct ConfigOptions {
  std::string preset = "desk";
  std::string config_file;
  std::vector<std::string> sets;
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> flags;
  std::map<std::string, std::string> alias_values;
  std::map<std::string, CLI::Option*> aliases;  // alias name -> option
  std::map<std::string, std::string> alias_keys;

  void attach(CLI::App* app) {
    app->add_option("--preset", preset, "Named preset (desk or paper)")->capture_default_str();
    app->add_option("--config", config_file, "key=value config file with [section] headers");
    app->add_option("--set", sets, "Override one key, as section.key=value (repeatable)");
    const std::vector<std::pair<std::string, std::string>> short_names = {
        {"profile", "data.profile"}, {"samples", "data.samples"}, {"lambda", "train.lambda"}, {"bits", "quantizer.bits"}};
    for (const auto& [alias, key] : short_names) {
      alias_keys[alias] = key;
      aliases[alias] = app->add_option("--" + alias, alias_values[alias], "Same as --" + key);
    }
    auto* group = app->add_option_group("Config keys");
    for (const auto& key : RunConfig::keys()) flags[key] = group->add_option("--" + key, values[key]);
  }

  RunConfig resolve() const {
    RunConfig c = cli::preset(preset);
    if (!config_file.empty()) c.apply_file(config_file);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw UsageError("--set expects section.key=value, got '" + s + "'");
      c.set(s.substr(0, eq), s.substr(eq + 1));
    }
    for (const auto& [key, opt] : flags) {
      if (opt->count() > 0) c.set(key, values.at(key));
    }
    for (const auto& [alias, opt] : aliases) {
      if (opt->count() > 0) c.set(alias_keys.at(alias), alias_values.at(alias));
    }
    c.validate();
    return c;
  }

  std::vector<ManifestInput> config_inputs() const {
    if (config_file.empty()) return {};
    return {{"config", config_file}};
  }
};

void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError(DataError::Kind::kIo, "cannot write " + path.string());
}

void write_text(const fs::path& path, const std::string& text) {
  write_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError(DataError::Kind::kIo, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

train::Checkpoint load_existing_checkpoint(const fs::path& path) {
  if (path.empty()) throw UsageError("--checkpoint is required");
  if (!fs::is_regular_file(path)) throw DataError(DataError::Kind::kIo, "checkpoint not found: " + path.string());
  return train::load_checkpoint(path);
}

/// A dataset directory resolves to <dir>/<split>.csid; a file is used as is.
fs::path dataset_file(const fs::path& data, const std::string& split) {
  return fs::is_directory(data) ? data / (split + ".csid") : data;
}

double parse_snr(const std::string& s) {
  if (s == "inf" || s == "clean") return data::kCleanSnr;
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw UsageError("invalid SNR '" + s + "'");
  }
  return v;
}

std::string fixed(double v, int digits = 3) {
  if (!std::isfinite(v)) return report::format_number(v);
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

report::SweepRow to_row(const std::string& scenario, const model::ModelConfig& mc, const train::EvalPoint& p) {
  return {scenario, p.bits, p.snr_db, mc.compression_ratio(), p.nmse_db, p.nominal_bpp, p.entropy_bpp, p.measured_bpp};
}

void warn_all(std::ostream& err, const std::vector<std::string>& violations) {
  for (const auto& v : violations) err << "warning: trend violated: " << v << '\n';
}

void write_manifest(const fs::path& path, const std::string& command, const RunConfig& c,
                    const std::vector<ManifestInput>& inputs) {
  write_text(path, make_manifest(command, c, inputs));
}

// ---------------------------------------------------------------------------

struct GenDataArgs {
  std::string out;
  bool force = false;
};

void gen_data(const ConfigOptions& opts, const GenDataArgs& a, std::ostream& out) {
  const RunConfig c = opts.resolve();
  const fs::path dir = a.out;
  const std::vector<fs::path> targets = {dir / "train.csid", dir / "val.csid", dir / "test.csid", dir / "manifest.json"};
  if (!a.force) {
    for (const auto& t : targets) {
      if (fs::exists(t)) throw UsageError(t.string() + " already exists (pass --force to overwrite)");
    }
  }
  const data::Dataset all = data::synthesize_dataset(c.samples, c.generator(), c.data_seed);
  const data::Splits s = data::split_dataset(all);
  fs::create_directories(dir);
  data::save_dataset(targets[0], s.train);
  data::save_dataset(targets[1], s.val);
  data::save_dataset(targets[2], s.test);
  write_manifest(targets[3], "gen-data", c, opts.config_inputs());
  out << "profile " << data::profile_name(c.profile) << ", seed " << c.data_seed << ": " << s.train.count() << " train / "
      << s.val.count() << " val / " << s.test.count() << " test samples in " << dir.string() << '\n';
}

struct TrainArgs {
  std::string data;
  std::string out;
  bool resume = false;
  bool force = false;
};

/// Trains one model into `dir`, printing progress; returns the final row.
train::EpochLog run_training(const RunConfig& c, const fs::path& data_dir, const fs::path& dir, bool resume,
                             std::ostream& out) {
  const data::Dataset train_set = data::load_dataset(data_dir / "train.csid");
  const data::Dataset val_set = data::load_dataset(data_dir / "val.csid");
  if (c.train.lambda == 0.0) out << "lambda = 0: rate term frozen out of the gradient (soft rate logged only)\n";
  out << "model: d=" << c.model.embed_dim << " W=" << c.model.window << " M=" << c.model.latent << " ("
      << model::param_count(c.model) << " parameters), k=" << c.train.quant.bits << ", " << train_set.count()
      << " training samples\n";
  train::TrainOptions options;
  options.out_dir = dir;
  options.resume = resume;
  options.on_epoch = [&](const train::EpochLog& r) {
    out << "epoch " << r.epoch << "/" << c.train.epochs << " step " << r.steps << ": mse " << fixed(r.mse, 5)
        << ", train NMSE " << fixed(r.train_nmse_db) << " dB, soft rate " << fixed(r.soft_rate_bpp, 4) << " bpp";
    if (!std::isnan(r.val_nmse_db)) {
      out << ", val NMSE " << fixed(r.val_nmse_db) << " dB, entropy " << fixed(r.entropy_bpp, 4) << " bpp";
    }
    out << '\n';
  };
  const train::TrainResult result = train::train(c.train, c.model, train_set, val_set, options);
  if (result.log.empty()) {
    out << "nothing to do: the run already completed " << result.state.epoch << " epochs\n";
    return {};
  }
  return result.log.back();
}

void train_cmd(const ConfigOptions& opts, const TrainArgs& a, std::ostream& out) {
  const RunConfig c = opts.resolve();
  const fs::path data_dir = a.data, dir = a.out;
  if (!fs::is_directory(data_dir)) throw UsageError("--data must be a directory holding train.csid and val.csid");
  if (!a.resume && !a.force && fs::exists(dir / "last.csiw")) {
    throw UsageError(dir.string() + " already holds a run (pass --resume to continue or --force to restart)");
  }
  auto inputs = opts.config_inputs();
  inputs.push_back({"train", data_dir / "train.csid"});
  inputs.push_back({"val", data_dir / "val.csid"});
  fs::create_directories(dir);
  write_manifest(dir / "manifest.json", "train", c, inputs);
  const train::EpochLog last = run_training(c, data_dir, dir, a.resume, out);
  if (last.epoch != 0) {
    out << "final val NMSE " << fixed(last.val_nmse_db) << " dB, entropy " << fixed(last.entropy_bpp, 4) << " bpp\n";
  }
  out << "checkpoints: " << (dir / "best.csiw").string() << ", " << (dir / "last.csiw").string() << '\n';
}

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string out;
  std::string snr = "inf";
  bool svg = true;
  std::vector<std::string> checkpoints;
};

void eval_cmd(const ConfigOptions& opts, const EvalArgs& a, std::ostream& out) {
  const RunConfig c = opts.resolve();
  const double snr = parse_snr(a.snr);
  const train::Checkpoint ck = load_existing_checkpoint(a.checkpoint);
  const fs::path data_path = dataset_file(a.data, c.split);
  const data::Dataset ds = data::load_dataset(data_path);
  const auto points = train::evaluate(ck.params, ds, {c.train.quant.bits}, {snr}, c.eval_seed, c.train.quant.mu);
  const auto row = to_row(data::profile_name(c.profile), ck.params.config(), points.front());
  const fs::path dir = a.out;
  write_text(dir / "eval.csv", report::sweep_csv({row}));
  auto inputs = opts.config_inputs();
  inputs.push_back({"checkpoint", a.checkpoint});
  inputs.push_back({"data", data_path});
  write_manifest(dir / "manifest.json", "eval", c, inputs);
  out << ds.count() << " samples, k=" << row.k << ", SNR " << report::format_number(snr) << " dB: NMSE "
      << fixed(row.nmse_db) << " dB; bpp nominal " << fixed(row.nominal_bpp, 4) << ", entropy "
      << fixed(row.entropy_bpp, 4) << ", measured " << fixed(row.measured_bpp, 4) << '\n';
  if (points.front().excluded > 0) out << points.front().excluded << " zero-norm samples excluded from NMSE\n";
}

void sweep_snr_cmd(const ConfigOptions& opts, const EvalArgs& a, std::ostream& out, std::ostream& err) {
  const RunConfig c = opts.resolve();
  const train::Checkpoint ck = load_existing_checkpoint(a.checkpoint);
  const fs::path data_path = dataset_file(a.data, c.split);
  const data::Dataset ds = data::load_dataset(data_path);
  const auto points = train::evaluate(ck.params, ds, c.sweep_bits, c.snrs, c.eval_seed, c.train.quant.mu);
  std::vector<report::SweepRow> rows;
  for (const auto& p : points) rows.push_back(to_row(data::profile_name(c.profile), ck.params.config(), p));

  const fs::path dir = a.out;
  write_text(dir / "sweep_snr.csv", report::sweep_csv(rows));
  if (a.svg) write_text(dir / "sweep_snr.svg", report::sweep_svg(rows, report::XAxis::kSnr, "NMSE vs SNR"));
  auto inputs = opts.config_inputs();
  inputs.push_back({"checkpoint", a.checkpoint});
  inputs.push_back({"data", data_path});
  write_manifest(dir / "manifest.json", "sweep-snr", c, inputs);
  for (const auto& r : rows) {
    out << "k=" << r.k << " snr " << std::setw(4) << report::format_number(r.snr_db) << " dB: NMSE "
        << fixed(r.nmse_db) << " dB, measured " << fixed(r.measured_bpp, 4) << " bpp\n";
  }
  out << rows.size() << " rows written to " << (dir / "sweep_snr.csv").string() << '\n';
  std::vector<unsigned> order = c.sweep_bits;
  std::sort(order.begin(), order.end());
  warn_all(err, report::snr_trend_violations(rows, order, kSnrTolDb, kFloorDb));
}

void sweep_rate_cmd(const ConfigOptions& opts, const EvalArgs& a, std::ostream& out, std::ostream& err) {
  const RunConfig c = opts.resolve();
  const fs::path dir = a.out;
  auto inputs = opts.config_inputs();
  std::vector<std::string> checkpoints = a.checkpoints;
  if (checkpoints.empty()) {
    // One model per latent size, trained with the resolved configuration.
    const fs::path data_dir = a.data;
    if (!fs::is_directory(data_dir)) {
      throw UsageError("without --checkpoint, --data must be a directory holding train/val/test.csid");
    }
    inputs.push_back({"train", data_dir / "train.csid"});
    inputs.push_back({"val", data_dir / "val.csid"});
    for (std::size_t m : c.sweep_latents) {
      RunConfig mc = c;
      mc.model.latent = m;
      mc.validate();
      const fs::path run = dir / ("m" + std::to_string(m));
      out << "training M=" << m << " into " << run.string() << '\n';
      run_training(mc, data_dir, run, false, out);
      checkpoints.push_back((run / "best.csiw").string());
    }
  } else {
    for (const auto& p : checkpoints) inputs.push_back({"checkpoint", p});
  }
  const fs::path data_path = dataset_file(a.data, c.split);
  const data::Dataset ds = data::load_dataset(data_path);
  inputs.push_back({"data", data_path});

  std::vector<report::SweepRow> rows;
  for (const auto& path : checkpoints) {
    const train::Checkpoint ck = load_existing_checkpoint(path);
    const auto points = train::evaluate(ck.params, ds, c.sweep_bits, {data::kCleanSnr}, c.eval_seed, c.train.quant.mu);
    for (const auto& p : points) {
      rows.push_back(to_row(data::profile_name(c.profile), ck.params.config(), p));
      const auto& r = rows.back();
      out << "M=" << ck.params.config().latent << " k=" << r.k << ": NMSE " << fixed(r.nmse_db) << " dB; bpp nominal "
          << fixed(r.nominal_bpp, 4) << ", entropy " << fixed(r.entropy_bpp, 4) << ", measured "
          << fixed(r.measured_bpp, 4) << '\n';
    }
  }
  write_text(dir / "sweep_rate.csv", report::sweep_csv(rows));
  if (a.svg) {
    write_text(dir / "sweep_rate.svg", report::sweep_svg(rows, report::XAxis::kMeasuredBpp, "NMSE vs BPP"));
  }
  write_manifest(dir / "manifest.json", "sweep-rate", c, inputs);
  out << rows.size() << " rows written to " << (dir / "sweep_rate.csv").string() << '\n';
  warn_all(err, report::rate_trend_violations(rows, kRateTolDb));
}

struct CodecArgs {
  std::string checkpoint;
  std::string data;
  std::string bitstream;
  std::string out;
  std::optional<std::size_t> index;
};

/// Prior of the checkpoint at its training bit depth; uniform if none was fitted.
entropy::SymbolHistogram checkpoint_prior(const train::Checkpoint& ck) {
  if (ck.state.histogram.empty()) return entropy::SymbolHistogram::uniform(ck.state.bits);
  return entropy::SymbolHistogram(ck.state.bits, ck.state.histogram);
}

fs::path manifest_beside(const fs::path& out) { return fs::path(out.string() + ".manifest.json"); }

void encode_cmd(const ConfigOptions& opts, const CodecArgs& a, std::ostream& out) {
  const RunConfig c = opts.resolve();
  const train::Checkpoint ck = load_existing_checkpoint(a.checkpoint);
  const fs::path data_path = dataset_file(a.data, c.split);
  const data::Dataset ds = data::load_dataset(data_path);
  const std::size_t index = a.index.value_or(0);
  if (index >= ds.count()) {
    throw UsageError("--index " + std::to_string(index) + " is out of range (" + std::to_string(ds.count()) +
                     " samples)");
  }
  const auto& mc = ck.params.config();
  if (ds.nc != mc.nc || ds.nt != mc.nt) {
    throw DataError(DataError::Kind::kExtentMismatch, "dataset extents do not match the checkpoint");
  }
  const quant::QuantizerConfig qc{ck.state.bits, ck.state.mu};
  ad::NoGradGuard no_grad;
  const auto sample = ds.sample_double(index);
  const ad::Tensor s = model::encode(ad::Tensor({2 * mc.nc, mc.nt}, sample), ck.params);
  const auto q = quant::quantize(s, qc);
  const auto stream = entropy::huffman_encode(q, entropy::huffman_build(checkpoint_prior(ck)));
  write_bytes(a.out, stream);
  auto inputs = opts.config_inputs();
  inputs.push_back({"checkpoint", a.checkpoint});
  inputs.push_back({"data", data_path});
  write_manifest(manifest_beside(a.out), "encode", c, inputs);
  const auto bits = entropy::payload_bits(stream);
  out << "sample " << index << ": " << q.symbols.size() << " symbols at k=" << qc.bits << " -> " << bits
      << " payload bits (" << fixed(entropy::bits_per_pixel(bits, mc.nc, mc.nt), 4) << " bpp, nominal "
      << fixed(entropy::nominal_bpp(qc.bits, mc.latent, mc.nc, mc.nt), 4) << "), " << stream.size()
      << " bytes written to " << a.out << '\n';
}

void decode_cmd(const ConfigOptions& opts, const CodecArgs& a, std::ostream& out) {
  const RunConfig c = opts.resolve();
  const train::Checkpoint ck = load_existing_checkpoint(a.checkpoint);
  const auto& mc = ck.params.config();
  const auto bytes = read_bytes(a.bitstream);
  const auto q = entropy::huffman_decode(bytes);
  if (q.bits != ck.state.bits || q.symbols.size() != mc.latent) {
    throw DataError(DataError::Kind::kExtentMismatch, "bitstream does not match the checkpoint's latent size or k");
  }
  // The normalization record comes from the dataset the model was trained on.
  const fs::path data_path = dataset_file(a.data, c.split);
  const data::Dataset ref = data::load_dataset(data_path);
  if (ref.nc != mc.nc || ref.nt != mc.nt) {
    throw DataError(DataError::Kind::kExtentMismatch, "dataset extents do not match the checkpoint");
  }
  ad::NoGradGuard no_grad;
  const quant::QuantizerConfig qc{ck.state.bits, ck.state.mu};
  const auto s_hat = quant::dequantize(q, qc);
  const ad::Tensor h_hat = model::decode(ad::Tensor({s_hat.size()}, s_hat), ck.params);

  data::Dataset result;
  result.nc = mc.nc;
  result.nt = mc.nt;
  result.norm = ref.norm;
  result.values.assign(h_hat.values().begin(), h_hat.values().end());
  data::save_dataset(a.out, result);
  auto inputs = opts.config_inputs();
  inputs.push_back({"checkpoint", a.checkpoint});
  inputs.push_back({"bitstream", a.bitstream});
  inputs.push_back({"data", data_path});
  write_manifest(manifest_beside(a.out), "decode", c, inputs);
  out << "decoded " << q.symbols.size() << " symbols at k=" << q.bits << " into " << a.out << '\n';
  if (a.index) {
    if (*a.index >= ref.count()) throw UsageError("--index is out of range");
    std::vector<double> recon(h_hat.numel());
    for (std::size_t j = 0; j < recon.size(); ++j) recon[j] = ref.norm.denormalize(h_hat.values()[j]);
    const auto v = train::sample_nmse(ref.raw_sample(*a.index), recon);
    out << "NMSE against sample " << *a.index << ": "
        << (v ? fixed(train::to_db(*v)) + " dB" : std::string("undefined (zero-norm reference)")) << '\n';
  }
}

int report_error(std::ostream& err, const char* kind, const std::exception& e, int code) {
  err << "error (" << kind << "): " << e.what() << '\n';
  return code;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Transformer CSI feedback: data generation, training, evaluation and the feedback codec.", "csifb"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  // Options live in unique_ptrs so the bound addresses stay put.
  std::map<std::string, std::unique_ptr<ConfigOptions>> opts;
  auto command = [&](const std::string& name, const std::string& help) {
    CLI::App* sub = app.add_subcommand(name, help);
    opts[name] = std::make_unique<ConfigOptions>();
    opts[name]->attach(sub);
    return sub;
  };

  GenDataArgs gen;
  auto* gen_cmd = command("gen-data", "Generate synthetic channels and write train/val/test splits");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_flag("--force", gen.force, "Overwrite existing files");

  TrainArgs tr;
  auto* train_sub = command("train", "Train a model; writes best.csiw, last.csiw and log.csv");
  train_sub->add_option("--data", tr.data, "Dataset directory from gen-data")->required();
  train_sub->add_option("--out", tr.out, "Run directory")->required();
  train_sub->add_flag("--resume", tr.resume, "Continue from <out>/last.csiw");
  train_sub->add_flag("--force", tr.force, "Restart a run directory that already holds checkpoints");

  EvalArgs ev;
  auto* eval_sub = command("eval", "Evaluate a checkpoint at one (k, SNR) point");
  eval_sub->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  eval_sub->add_option("--data", ev.data, "Dataset directory (uses sweep.split) or .csid file")->required();
  eval_sub->add_option("--out", ev.out, "Output directory for eval.csv and manifest.json")->required();
  eval_sub->add_option("--snr", ev.snr, "SNR in dB, or inf")->capture_default_str();

  EvalArgs ss;
  auto* snr_sub = command("sweep-snr", "NMSE over sweep.snrs x sweep.bits for one checkpoint");
  snr_sub->add_option("--checkpoint", ss.checkpoint, "Checkpoint file")->required();
  snr_sub->add_option("--data", ss.data, "Dataset directory (uses sweep.split) or .csid file")->required();
  snr_sub->add_option("--out", ss.out, "Output directory")->required();
  snr_sub->add_flag("!--no-svg", ss.svg, "Skip the SVG chart");

  EvalArgs sr;
  auto* rate_sub = command("sweep-rate", "Rate-distortion points over (M, k)");
  rate_sub->add_option("--checkpoint", sr.checkpoints, "Checkpoint files; without any, one model per sweep.latents is trained");
  rate_sub->add_option("--data", sr.data, "Dataset directory")->required();
  rate_sub->add_option("--out", sr.out, "Output directory")->required();
  rate_sub->add_flag("!--no-svg", sr.svg, "Skip the SVG chart");

  CodecArgs en;
  auto* enc_sub = command("encode", "Encode one sample into a feedback bitstream");
  enc_sub->add_option("--checkpoint", en.checkpoint, "Checkpoint file")->required();
  enc_sub->add_option("--data", en.data, "Dataset directory (uses sweep.split) or .csid file")->required();
  enc_sub->add_option("--index", en.index, "Sample index (default 0)");
  enc_sub->add_option("--out", en.out, "Bitstream file")->required();

  CodecArgs de;
  auto* dec_sub = command("decode", "Decode a feedback bitstream into a one-sample dataset file");
  dec_sub->add_option("--checkpoint", de.checkpoint, "Checkpoint file")->required();
  dec_sub->add_option("--bitstream", de.bitstream, "Bitstream file")->required();
  dec_sub->add_option("--data", de.data, "Dataset supplying the normalization record")->required();
  dec_sub->add_option("--index", de.index, "Report NMSE against this sample of --data");
  dec_sub->add_option("--out", de.out, "Output .csid file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return kExitOk;
    }
    app.exit(e, out, err);
    return kExitUsage;
  }

  try {
    if (gen_cmd->parsed()) gen_data(*opts["gen-data"], gen, out);
    if (train_sub->parsed()) train_cmd(*opts["train"], tr, out);
    if (eval_sub->parsed()) eval_cmd(*opts["eval"], ev, out);
    if (snr_sub->parsed()) sweep_snr_cmd(*opts["sweep-snr"], ss, out, err);
    if (rate_sub->parsed()) sweep_rate_cmd(*opts["sweep-rate"], sr, out, err);
    if (enc_sub->parsed()) encode_cmd(*opts["encode"], en, out);
    if (dec_sub->parsed()) decode_cmd(*opts["decode"], de, out);
  } catch (const UsageError& e) {
    return report_error(err, "usage", e, kExitUsage);
  } catch (const DataError& e) {
    return report_error(err, "data", e, kExitData);
  } catch (const ShapeError& e) {
    return report_error(err, "data", e, kExitData);
  } catch (const NumericError& e) {
    return report_error(err, "numeric", e, kExitNumeric);
  } catch (const fs::filesystem_error& e) {
    return report_error(err, "data", e, kExitData);
  } catch (const std::exception& e) {
    return report_error(err, "internal", e, kExitInternal);
  }
  out.flush();
  return kExitOk;
}

}  // namespace csifb::cli
