// rfg: risk profiles, event mining, risk-targeted motion synthesis, corruption masks and the
// property self-check, driven from files.
//
// Exit codes: 0 ok, 1 failed check or verification, 2 input error, 3 synthesis/training
// failure, 4 I/O error.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "rfg/error.hpp"
#include "rfg/mask.hpp"
#include "rfg/mining.hpp"
#include "rfg/motion.hpp"
#include "rfg/rado.hpp"
#include "rfg/risk.hpp"
#include "rfg/scenario.hpp"
#include "rfg/selfcheck.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace rfg;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitInput = 2;
constexpr int kExitSynthesis = 3;
constexpr int kExitIo = 4;

bool g_verbose = false;

std::string read_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << text;
  if (!os) throw IoError("write failed: " + path.string());
}

json parse_json_file(const fs::path& path) {
  const std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw SchemaError(path.filename().string(), std::string("invalid JSON: ") + e.what());
  }
}

void show_config(const std::string& command, const json& effective) {
  if (g_verbose) std::cerr << "rfg " << command << " effective config:\n" << effective.dump(2) << "\n";
}

RiskParams load_params(const std::string& path) { return path.empty() ? RiskParams{} : load_risk_params(path); }

Aggregation parse_aggregation(const std::string& s) {
  if (s == "sum") return Aggregation::Sum;
  if (s == "max") return Aggregation::Max;
  throw ConfigError("--agg must be 'sum' or 'max', got '" + s + "'");
}

ScalarMode parse_scalar_mode(const std::string& s) {
  if (s == "max") return ScalarMode::MaxFrame;
  if (s == "mean") return ScalarMode::MeanFrame;
  throw ConfigError("--scalar must be 'max' or 'mean', got '" + s + "'");
}

/// Flag, then config-file value, then RFG_SEED.
std::uint64_t resolve_seed(const CLI::Option* flag, std::uint64_t flag_value, std::optional<std::uint64_t> from_file,
                           const std::string& command) {
  if (flag->count() > 0) return flag_value;
  if (from_file) return *from_file;
  if (const char* env = std::getenv("RFG_SEED"); env != nullptr && *env != '\0') {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used);
      if (used == std::string(env).size()) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError("RFG_SEED is not an unsigned integer: '" + std::string(env) + "'");
  }
  throw ConfigError(command + " is stochastic and needs a seed: pass --seed, set \"seed\" in --config, or export RFG_SEED");
}

std::string fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------------------------
// risk

struct RiskArgs {
  std::string scenario, params, agg = "sum", out, breakdown;
};

int cmd_risk(const RiskArgs& a) {
  const Scenario sc = load_scenario(a.scenario);
  RiskParams params = load_params(a.params);
  params.aggregation = parse_aggregation(a.agg);
  params.validate();
  show_config("risk", risk_params_to_json(params));
  const ScenarioRisk risk = risk_profile(sc, params);
  const std::string csv = profile_to_csv(make_profile(risk));
  if (a.out.empty()) {
    std::cout << csv;
  } else {
    write_file(a.out, csv);
  }
  if (!a.breakdown.empty()) write_file(a.breakdown, breakdown_to_json(risk).dump(2) + "\n");
  return kExitOk;
}

// ---------------------------------------------------------------------------------------------
// mine / quantiles

struct PoolEntry {
  std::string source;
  RiskProfile profile;
};

std::vector<PoolEntry> load_pool(const fs::path& dir, const RiskParams& params) {
  if (!fs::is_directory(dir)) throw ConfigError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto ext = e.path().extension();
    if (e.is_regular_file() && (ext == ".json" || ext == ".csv")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ConfigError("no scenario (.json) or profile (.csv) files in " + dir.string());
  std::vector<PoolEntry> pool;
  for (const auto& f : files) {
    if (f.extension() == ".csv") {
      pool.push_back({f.filename().string(), profile_from_csv(read_file(f), f.stem().string())});
    } else {
      pool.push_back({f.filename().string(), make_profile(risk_profile(load_scenario(f), params))});
    }
  }
  return pool;
}

std::vector<double> parse_number_list(const std::string& text, const std::string& what) {
  std::vector<double> out;
  std::string tok;
  std::istringstream is(text);
  while (is >> tok) {
    std::istringstream parts(tok);
    std::string item;
    while (std::getline(parts, item, ',')) {
      if (item.empty()) continue;
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(item, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != item.size()) throw ConfigError(what + ": not a number: '" + item + "'");
      out.push_back(v);
    }
  }
  return out;
}

json quantiles_json(std::span<const double> probs, std::span<const double> values) {
  json q = json::array();
  for (std::size_t i = 0; i < probs.size(); ++i) q.push_back({{"p", probs[i]}, {"value", values[i]}});
  return q;
}

struct MineArgs {
  std::string dir, params, out, scalar = "max", probs = "0.2,0.8,0.95";
  double threshold = 0.5;
  std::size_t min_duration = 3;
};

int cmd_mine(const MineArgs& a) {
  const RiskParams params = load_params(a.params);
  const ScalarMode mode = parse_scalar_mode(a.scalar);
  const auto probs = parse_number_list(a.probs, "--quantiles");
  show_config("mine", {{"threshold", a.threshold},
                       {"min_duration", a.min_duration},
                       {"scalar", a.scalar},
                       {"quantiles", probs},
                       {"risk_params", risk_params_to_json(params)}});
  const auto pool = load_pool(a.dir, params);
  json scenarios = json::array();
  std::vector<double> scalars;
  for (const auto& e : pool) {
    const double s = scenario_scalar_risk(e.profile, mode);
    scalars.push_back(s);
    scenarios.push_back({{"id", e.profile.scenario_id},
                         {"source", e.source},
                         {"scalar_risk", s},
                         {"num_frames", e.profile.values.size()},
                         {"events", events_to_json(detect_events(e.profile, a.threshold, a.min_duration))}});
  }
  const auto qs = risk_quantiles(scalars, probs);
  const json report = {{"threshold", a.threshold},
                       {"min_duration", a.min_duration},
                       {"scalar", a.scalar},
                       {"pool_size", scalars.size()},
                       {"quantiles", quantiles_json(probs, qs)},
                       {"scenarios", scenarios}};
  if (a.out.empty()) {
    std::cout << report.dump(2) << "\n";
  } else {
    write_file(a.out, report.dump(2) + "\n");
  }
  return kExitOk;
}

struct QuantileArgs {
  std::string values, pool_file, dir, params, scalar = "max", probs = "0.2,0.8,0.95", out;
};

int cmd_quantiles(const QuantileArgs& a) {
  std::vector<double> pool;
  if (!a.values.empty()) pool = parse_number_list(a.values, "--values");
  if (!a.pool_file.empty()) {
    const auto more = parse_number_list(read_file(a.pool_file), a.pool_file);
    pool.insert(pool.end(), more.begin(), more.end());
  }
  if (!a.dir.empty()) {
    const ScalarMode mode = parse_scalar_mode(a.scalar);
    for (const auto& e : load_pool(a.dir, load_params(a.params))) pool.push_back(scenario_scalar_risk(e.profile, mode));
  }
  if (a.values.empty() && a.pool_file.empty() && a.dir.empty()) {
    throw ConfigError("quantiles needs --values, --pool or --dir");
  }
  const auto probs = parse_number_list(a.probs, "--probs");
  const auto qs = risk_quantiles(pool, probs);
  std::string csv = "p,value\n";
  for (std::size_t i = 0; i < qs.size(); ++i) csv += format_g9(probs[i]) + "," + format_g9(qs[i]) + "\n";
  if (a.out.empty()) {
    std::cout << csv;
  } else {
    write_file(a.out, csv);
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------------------------
// synth

struct SynthArgs {
  std::string scenario, params, config, out;
  double target = -1.0, target_quantile = -1.0, tau = 2.0;
  std::size_t modes = 3, iterations = 200, population = 64, pool_size = 256;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* modes_opt = nullptr;
  CLI::Option* iterations_opt = nullptr;
  CLI::Option* population_opt = nullptr;
};

int cmd_synth(const SynthArgs& a) {
  const Scenario sc = load_scenario(a.scenario);
  const RiskParams params = load_params(a.params);
  SynthesisConfig cfg;
  std::optional<std::uint64_t> file_seed;
  if (!a.config.empty()) {
    const json doc = parse_json_file(a.config);
    cfg = synthesis_config_from_json(doc);
    if (doc.contains("seed")) file_seed = cfg.seed;
  }
  if (a.modes_opt->count() > 0) cfg.num_modes = a.modes;
  if (a.iterations_opt->count() > 0) cfg.iterations = a.iterations;
  if (a.population_opt->count() > 0) cfg.population = a.population;
  cfg.seed = resolve_seed(a.seed_opt, a.seed, file_seed, "synth");
  cfg.validate();

  if ((a.target >= 0.0) == (a.target_quantile >= 0.0)) {
    throw ConfigError("pass exactly one of --target or --target-quantile");
  }
  double r_star = a.target;
  json target_info = {{"tau", a.tau}};
  if (a.target_quantile >= 0.0) {
    if (a.target_quantile > 1.0) throw ConfigError("--target-quantile must be in [0, 1]");
    const auto pool = sample_risk_pool(sc, params, cfg, a.pool_size, cfg.seed);
    r_star = risk_quantiles(pool, std::vector<double>{a.target_quantile})[0];
    target_info["quantile"] = a.target_quantile;
    target_info["pool_size"] = a.pool_size;
  }
  target_info["r_star"] = r_star;
  show_config("synth", {{"target", target_info}, {"synthesis", synthesis_config_to_json(cfg)},
                        {"risk_params", risk_params_to_json(params)}});

  const RiskTarget target = RiskTarget::scalar_target(r_star, a.tau);
  const SynthesisResult res = synthesize(sc, target, params, cfg);
  json doc = synthesis_to_json(sc, target, cfg, res);
  if (a.target_quantile >= 0.0) doc["target"]["pool"] = {{"quantile", a.target_quantile}, {"size", a.pool_size}};
  write_file(a.out, doc.dump(2) + "\n");
  std::printf("target r* %s (tau %s)\nR_min %s  R_max %s  loss %s  iterations %zu\n", format_g9(r_star).c_str(),
              format_g9(a.tau).c_str(), format_g9(res.match.r_min).c_str(), format_g9(res.match.r_max).c_str(),
              format_g9(res.match.loss).c_str(), res.iterations_run);
  if (res.degenerate_spread) std::printf("warning: R_max == R_min (no risk variation found)\n");
  return kExitOk;
}

// ---------------------------------------------------------------------------------------------
// mask

struct MaskArgs {
  std::string scenario, motions, latent, out;
  int mode = -1;
  std::size_t height = 36, width = 64;
  BlobParams blob;
  bool verify = false;
};

struct MaskBuild {
  json manifest;
  std::vector<std::pair<std::string, std::string>> files;  // name, bytes
};

MaskBuild build_masks(const MaskArgs& a) {
  const Scenario sc = load_scenario(a.scenario);
  a.blob.validate();
  std::vector<AgentMotion> motion;
  json source = "scenario";
  if (!a.motions.empty()) {
    const auto hyps = hypotheses_from_json(parse_json_file(a.motions));
    if (hyps.empty()) throw SchemaError("hypotheses", "empty");
    std::size_t pick = hyps.size() - 1;
    if (a.mode < 0) {
      for (std::size_t m = 0; m < hyps.size(); ++m) {
        if (hyps[m].induced_risk > hyps[pick].induced_risk) pick = m;
      }
    } else if (static_cast<std::size_t>(a.mode) >= hyps.size()) {
      throw ConfigError("--mode " + std::to_string(a.mode) + " but the motions file has " + std::to_string(hyps.size()) +
                        " hypotheses");
    } else {
      pick = static_cast<std::size_t>(a.mode);
    }
    motion = hyps[pick].agents;
    source = {{"motions_mode", pick}};
  } else {
    for (const auto& t : sc.agents) motion.push_back({t.id, t.cls, t.size, t.trajectory, {}});
  }
  const std::vector<std::vector<AgentMotion>> batch{motion};

  std::size_t H = a.height, W = a.width;
  Tensor latent;
  if (!a.latent.empty()) {
    latent = load_tensor(a.latent);
    if (latent.rank() != 6) throw DimensionError("latent must be B×N_c×C×T×H×W, got " + shape_str(latent.shape()));
    H = latent.dim(4);
    W = latent.dim(5);
  }
  const MaskVolume geo = geometric_mask(sc, batch, a.blob, H, W);
  if (a.latent.empty()) latent = render_agent_latent(sc, batch, a.blob, H, W);
  const auto& ls = latent.shape();
  if (ls[0] != 1 || ls[1] != geo.cameras() || ls[3] != geo.frames()) {
    throw DimensionError("latent " + shape_str(ls) + " does not match 1 batch, " + std::to_string(geo.cameras()) +
                         " cameras, " + std::to_string(geo.frames()) + " frames");
  }
  const MaskVolume fused = fuse_masks(geo, motion_mask(latent, a.blob));

  MaskBuild out;
  json files = json::array();
  const std::size_t plane = H * W;
  for (std::size_t c = 0; c < fused.cameras(); ++c) {
    for (std::size_t t = 0; t < fused.frames(); ++t) {
      const auto bytes = encode_pgm(fused.data.data().subspan((c * fused.frames() + t) * plane, plane), H, W);
      std::string name = "b0_cam" + std::to_string(c) + "_f" + std::to_string(t) + ".pgm";
      std::string data(bytes.begin(), bytes.end());
      files.push_back({{"name", name}, {"camera", sc.cameras[c].name}, {"frame", t}, {"fnv1a64", fnv1a64(data)}});
      out.files.emplace_back(std::move(name), std::move(data));
    }
  }
  out.manifest = {{"scenario_id", sc.id},
                  {"kind", std::string(to_string(fused.kind))},
                  {"source", source},
                  {"latent", a.latent.empty() ? json("rendered") : json(fs::path(a.latent).filename().string())},
                  {"height", H},
                  {"width", W},
                  {"blob",
                   {{"sigma_w", a.blob.sigma_w},
                    {"sigma_h", a.blob.sigma_h},
                    {"soft_threshold", a.blob.soft_threshold},
                    {"points_per_agent", a.blob.points_per_agent}}},
                  {"files", files}};
  return out;
}

int cmd_mask(const MaskArgs& a) {
  show_config("mask", {{"height", a.height},
                       {"width", a.width},
                       {"sigma_w", a.blob.sigma_w},
                       {"sigma_h", a.blob.sigma_h},
                       {"soft_threshold", a.blob.soft_threshold},
                       {"points_per_agent", a.blob.points_per_agent},
                       {"mode", a.mode}});
  const MaskBuild build = build_masks(a);
  const fs::path dir(a.out);
  if (!a.verify) {
    for (const auto& [name, data] : build.files) write_file(dir / name, data);
    write_file(dir / "manifest.json", build.manifest.dump(2) + "\n");
    std::printf("wrote %zu masks to %s\n", build.files.size(), dir.string().c_str());
    return kExitOk;
  }

  const json on_disk = parse_json_file(dir / "manifest.json");
  std::size_t bad = 0;
  if (on_disk != build.manifest) {
    std::printf("mismatch: manifest.json differs from the recomputed manifest\n");
    ++bad;
  }
  for (const auto& [name, data] : build.files) {
    std::error_code ec;
    if (!fs::is_regular_file(dir / name, ec)) {
      std::printf("mismatch: %s missing\n", name.c_str());
      ++bad;
    } else if (fnv1a64(read_file(dir / name)) != fnv1a64(data)) {
      std::printf("mismatch: %s checksum\n", name.c_str());
      ++bad;
    }
  }
  if (bad > 0) return kExitCheckFailed;
  std::printf("verified %zu masks in %s\n", build.files.size(), dir.string().c_str());
  return kExitOk;
}

// ---------------------------------------------------------------------------------------------
// selfcheck / train

int cmd_selfcheck(std::uint64_t seed, bool corrupt) {
  const auto results = run_selfcheck({seed, corrupt});
  std::size_t failed = 0;
  double total = 0.0;
  for (const auto& r : results) {
    total += r.seconds;
    if (r.passed) {
      std::printf("PASS %-36s %7.2fs\n", r.name.c_str(), r.seconds);
    } else {
      ++failed;
      std::printf("FAIL %-36s %7.2fs  %s\n", r.name.c_str(), r.seconds, r.detail.c_str());
    }
  }
  std::printf("%zu/%zu checks passed in %.2fs\n", results.size() - failed, results.size(), total);
  return failed == 0 ? kExitOk : kExitCheckFailed;
}

struct TrainArgs {
  std::string out, variant = "linear", weights = "1,0,0", schedule = "constant";
  std::size_t steps = 2000;
  double lr = 1e-2, beta = 0.1;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
};

int cmd_train(const TrainArgs& a) {
  ToyTrainConfig cfg;
  if (a.variant != "linear" && a.variant != "one_hidden") throw ConfigError("--variant must be linear or one_hidden");
  cfg.variant = a.variant == "linear" ? ModelVariant::Linear : ModelVariant::OneHidden;
  const auto w = parse_number_list(a.weights, "--weights");
  if (w.size() != 3) throw ConfigError("--weights needs three values: sft,ra,align");
  cfg.weights = {w[0], w[1], w[2]};
  if (a.schedule != "constant" && a.schedule != "snr") throw ConfigError("--schedule must be constant or snr");
  cfg.schedule = a.schedule == "constant" ? NoiseWeight::Constant : NoiseWeight::SnrProxy;
  cfg.steps = a.steps;
  cfg.lr = a.lr;
  cfg.dpo_beta = a.beta;
  cfg.seed = resolve_seed(a.seed_opt, a.seed, std::nullopt, "train");
  show_config("train", {{"variant", a.variant}, {"weights", w}, {"schedule", a.schedule}, {"steps", cfg.steps},
                        {"lr", cfg.lr}, {"beta", cfg.dpo_beta}, {"seed", cfg.seed}});
  const ToyTrainResult res = toy_train_demo(cfg);
  const fs::path dir(a.out);
  write_file(dir / "trace.csv", trace_to_csv(res.trace));
  save_model(res.model, dir, "model");
  save_model(res.reference, dir, "reference");
  std::printf("total %s -> %s over %zu steps\n", format_g9(res.trace.front().total).c_str(),
              format_g9(res.trace.back().total).c_str(), cfg.steps);
  return kExitOk;
}

template <class F>
int guarded(F&& f) {
  try {
    return f();
  } catch (const SchemaError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kExitInput;
  } catch (const ConfigError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kExitInput;
  } catch (const DimensionError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kExitInput;
  } catch (const DomainError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kExitInput;
  } catch (const SynthesisError& e) {
    std::cerr << "synthesis failed: " << e.what() << "\n";
    return kExitSynthesis;
  } catch (const TrainingError& e) {
    std::cerr << "training failed: " << e.what() << "\n";
    return kExitSynthesis;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitCheckFailed;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Risk-field scenario analysis, risk-targeted motion synthesis and corruption masks"};
  app.require_subcommand(1);
  app.add_flag("-v,--verbose", g_verbose, "Print the effective configuration to stderr");

  RiskArgs risk;
  auto* risk_cmd = app.add_subcommand("risk", "Per-frame risk profile of a scenario");
  risk_cmd->add_option("-s,--scenario", risk.scenario, "Scenario JSON")->required();
  risk_cmd->add_option("-p,--params", risk.params, "Risk parameter JSON (defaults when omitted)");
  risk_cmd->add_option("--agg", risk.agg, "Per-frame aggregation: sum or max")->capture_default_str();
  risk_cmd->add_option("-o,--out", risk.out, "Profile CSV (stdout when omitted)");
  risk_cmd->add_option("--breakdown", risk.breakdown, "Per-agent breakdown JSON");

  MineArgs mine;
  auto* mine_cmd = app.add_subcommand("mine", "Risk events per scenario and pool quantiles");
  mine_cmd->add_option("-d,--dir", mine.dir, "Directory of scenario .json and/or profile .csv files")->required();
  mine_cmd->add_option("-p,--params", mine.params, "Risk parameter JSON");
  mine_cmd->add_option("-t,--threshold", mine.threshold, "Event threshold")->capture_default_str();
  mine_cmd->add_option("--min-duration", mine.min_duration, "Frames for a sustained segment")->capture_default_str();
  mine_cmd->add_option("-q,--quantiles", mine.probs, "Comma-separated probabilities")->capture_default_str();
  mine_cmd->add_option("--scalar", mine.scalar, "Scenario scalar: max or mean frame")->capture_default_str();
  mine_cmd->add_option("-o,--out", mine.out, "Report JSON (stdout when omitted)");

  QuantileArgs quant;
  auto* quant_cmd = app.add_subcommand("quantiles", "Linear-interpolation quantiles of a risk pool");
  quant_cmd->add_option("--values", quant.values, "Comma-separated pool values");
  quant_cmd->add_option("--pool", quant.pool_file, "Text file of pool values");
  quant_cmd->add_option("-d,--dir", quant.dir, "Directory of scenarios/profiles");
  quant_cmd->add_option("-p,--params", quant.params, "Risk parameter JSON (with --dir)");
  quant_cmd->add_option("--scalar", quant.scalar, "Scenario scalar: max or mean frame")->capture_default_str();
  quant_cmd->add_option("--probs", quant.probs, "Comma-separated probabilities")->capture_default_str();
  quant_cmd->add_option("-o,--out", quant.out, "CSV output (stdout when omitted)");

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Multi-modal motion matching a target risk");
  synth_cmd->add_option("-s,--scenario", synth.scenario, "Scenario JSON")->required();
  synth_cmd->add_option("-p,--params", synth.params, "Risk parameter JSON");
  synth_cmd->add_option("-c,--config", synth.config, "Synthesis config JSON");
  synth_cmd->add_option("--target", synth.target, "Target risk r*");
  synth_cmd->add_option("--target-quantile", synth.target_quantile, "Set r* to this quantile of a sampled pool");
  synth_cmd->add_option("--pool-size", synth.pool_size, "Pool size for --target-quantile")->capture_default_str();
  synth_cmd->add_option("--tau", synth.tau, "Upper-mode factor")->capture_default_str();
  synth.modes_opt = synth_cmd->add_option("-m,--modes", synth.modes, "Number of hypotheses");
  synth.iterations_opt = synth_cmd->add_option("--iterations", synth.iterations, "Search iterations");
  synth.population_opt = synth_cmd->add_option("--population", synth.population, "Samples per iteration");
  synth.seed_opt = synth_cmd->add_option("--seed", synth.seed, "Seed (falls back to config, then RFG_SEED)");
  synth_cmd->add_option("-o,--out", synth.out, "Motions JSON")->required();

  MaskArgs mask;
  auto* mask_cmd = app.add_subcommand("mask", "Fused corruption masks as PGM files plus a manifest");
  mask_cmd->add_option("-s,--scenario", mask.scenario, "Scenario JSON with cameras")->required();
  mask_cmd->add_option("--motions", mask.motions, "Motions JSON from synth (scenario tracks when omitted)");
  mask_cmd->add_option("--mode", mask.mode, "Hypothesis index (default: highest induced risk)");
  mask_cmd->add_option("--latent", mask.latent, "Latent tensor B×N_c×C×T×H×W (rendered from motions when omitted)");
  mask_cmd->add_option("--height", mask.height, "Mask rows without --latent")->capture_default_str();
  mask_cmd->add_option("--width", mask.width, "Mask columns without --latent")->capture_default_str();
  mask_cmd->add_option("--sigma-w", mask.blob.sigma_w, "Blob sigma along x (mask pixels)")->capture_default_str();
  mask_cmd->add_option("--sigma-h", mask.blob.sigma_h, "Blob sigma along y (mask pixels)")->capture_default_str();
  mask_cmd->add_option("--threshold", mask.blob.soft_threshold, "Motion soft threshold")->capture_default_str();
  mask_cmd->add_option("--points", mask.blob.points_per_agent, "Sample points per agent")->capture_default_str();
  mask_cmd->add_option("-o,--out", mask.out, "Output directory")->required();
  mask_cmd->add_flag("--verify", mask.verify, "Recompute and compare against an existing output directory");

  std::uint64_t check_seed = 0;
  bool corrupt = false;
  auto* check_cmd = app.add_subcommand("selfcheck", "Run every property and gradient suite");
  auto* check_seed_opt = check_cmd->add_option("--seed", check_seed, "Seed (falls back to RFG_SEED, then 0)");
  check_cmd->add_flag("--corrupt-gradient", corrupt, "Testing aid: perturb one analytic gradient")->group("");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Toy training run on the combined objective");
  train_cmd->add_option("-o,--out", train.out, "Output directory for trace.csv and model files")->required();
  train_cmd->add_option("--variant", train.variant, "linear or one_hidden")->capture_default_str();
  train_cmd->add_option("--weights", train.weights, "Loss weights sft,ra,align")->capture_default_str();
  train_cmd->add_option("--schedule", train.schedule, "Noise weight: constant or snr")->capture_default_str();
  train_cmd->add_option("--steps", train.steps, "Gradient steps")->capture_default_str();
  train_cmd->add_option("--lr", train.lr, "Learning rate")->capture_default_str();
  train_cmd->add_option("--beta", train.beta, "Preference temperature")->capture_default_str();
  train.seed_opt = train_cmd->add_option("--seed", train.seed, "Seed (falls back to RFG_SEED)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInput;
  }

  if (*risk_cmd) return guarded([&] { return cmd_risk(risk); });
  if (*mine_cmd) return guarded([&] { return cmd_mine(mine); });
  if (*quant_cmd) return guarded([&] { return cmd_quantiles(quant); });
  if (*synth_cmd) return guarded([&] { return cmd_synth(synth); });
  if (*mask_cmd) return guarded([&] { return cmd_mask(mask); });
  if (*check_cmd) {
    return guarded([&] {
      std::uint64_t seed = 0;
      if (check_seed_opt->count() > 0 || std::getenv("RFG_SEED") != nullptr) {
        seed = resolve_seed(check_seed_opt, check_seed, std::nullopt, "selfcheck");
      }
      return cmd_selfcheck(seed, corrupt);
    });
  }
  if (*train_cmd) return guarded([&] { return cmd_train(train); });
  return kExitInput;
}
