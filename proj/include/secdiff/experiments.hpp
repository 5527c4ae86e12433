#ifndef SECDIFF_EXPERIMENTS_HPP
#define SECDIFF_EXPERIMENTS_HPP

// Experiment harness: profiles, method evaluation, sweeps and the end-to-end
// pipeline used by the command-line tool.

#include "secdiff/finetune.hpp"
#include "secdiff/plots.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace secdiff {

// ---- methods -------------------------------------------------------------

enum class MethodId { cdm, cdm_f, cdm_mlp, opt, rzf_ns, mrt };

inline std::string to_string(MethodId m) {
  switch (m) {
    case MethodId::cdm: return "cdm";
    case MethodId::cdm_f: return "cdm-f";
    case MethodId::cdm_mlp: return "cdm-mlp";
    case MethodId::opt: return "opt";
    case MethodId::rzf_ns: return "rzf-ns";
    case MethodId::mrt: return "mrt";
  }
  return "?";
}

inline MethodId method_from_string(const std::string& s) {
  for (MethodId m : {MethodId::cdm, MethodId::cdm_f, MethodId::cdm_mlp, MethodId::opt, MethodId::rzf_ns, MethodId::mrt})
    if (to_string(m) == s) return m;
  throw config_error("unknown method id: " + s);
}

inline bool is_learned(MethodId m) { return m == MethodId::cdm || m == MethodId::cdm_f || m == MethodId::cdm_mlp; }

inline void to_json(nlohmann::json& j, MethodId m) { j = to_string(m); }
inline void from_json(const nlohmann::json& j, MethodId& m) { m = method_from_string(j.get<std::string>()); }

// ---- sweeps --------------------------------------------------------------

enum class SweepAxis { power, eves, users, noise };

inline std::string to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::power: return "power";
    case SweepAxis::eves: return "eves";
    case SweepAxis::users: return "users";
    case SweepAxis::noise: return "noise";
  }
  return "?";
}

inline SweepAxis axis_from_string(const std::string& s) {
  for (SweepAxis a : {SweepAxis::power, SweepAxis::eves, SweepAxis::users, SweepAxis::noise})
    if (to_string(a) == s) return a;
  throw config_error("unknown sweep axis: " + s);
}

struct SweepSpec {
  SweepAxis axis = SweepAxis::power;
  std::vector<double> values;
  int test_channels = 128;
  int candidates = 8;

  /// Power and noise reuse the base models without retraining.
  bool zero_shot() const { return axis == SweepAxis::power || axis == SweepAxis::noise; }

  void validate() const {
    if (values.empty()) throw config_error("sweep " + to_string(axis) + ": no values");
    const bool up = values.size() < 2 || values[1] > values[0];
    for (std::size_t i = 1; i < values.size(); ++i)
      if (up ? !(values[i] > values[i - 1]) : !(values[i] < values[i - 1]))
        throw config_error("sweep " + to_string(axis) + ": values must be strictly monotone");
    if (candidates < 1) throw config_error("sweep: candidates must be >= 1");
    if (test_channels < 1) throw config_error("sweep: test_channels must be >= 1");
    if (axis == SweepAxis::eves || axis == SweepAxis::users)
      for (double v : values)
        if (v != std::floor(v) || v < (axis == SweepAxis::users ? 1 : 0))
          throw config_error("sweep " + to_string(axis) + ": values must be admissible counts");
  }
};

inline void to_json(nlohmann::json& j, const SweepSpec& s) {
  j = nlohmann::json{{"axis", to_string(s.axis)}, {"values", s.values}, {"test_channels", s.test_channels},
                     {"candidates", s.candidates}};
}
inline void from_json(const nlohmann::json& j, SweepSpec& s) {
  s.axis = axis_from_string(j.at("axis").get<std::string>());
  s.values = j.at("values").get<std::vector<double>>();
  s.test_channels = j.value("test_channels", 128);
  s.candidates = j.value("candidates", 8);
}

/// Training budget for the models of one sweep cell.
struct CellBudget {
  std::size_t N = 1024;
  TrainConfig train;
  FinetuneConfig finetune;
};

inline void to_json(nlohmann::json& j, const CellBudget& b) {
  j = nlohmann::json{{"N", b.N}, {"train", b.train}, {"finetune", b.finetune}};
}
inline void from_json(const nlohmann::json& j, CellBudget& b) {
  b.N = j.value("N", b.N);
  if (j.contains("train")) b.train = j.at("train").get<TrainConfig>();
  if (j.contains("finetune")) b.finetune = j.at("finetune").get<FinetuneConfig>();
}

// ---- configuration -------------------------------------------------------

struct ExperimentConfig {
  std::string profile = "desk";
  std::uint64_t seed = 7;
  SystemConfig system;
  DenoiserSpec denoiser;
  OracleOptions oracle;
  std::size_t n_train = 4096;
  std::size_t n_test = 512;
  TrainConfig train;
  FinetuneConfig finetune;
  int candidates = 8;
  int ddim_steps = 50;
  std::vector<MethodId> eval_methods{MethodId::cdm,    MethodId::cdm_f,  MethodId::cdm_mlp,
                                     MethodId::opt,    MethodId::rzf_ns, MethodId::mrt};
  std::vector<SweepSpec> sweeps;
  std::vector<MethodId> sweep_methods{MethodId::cdm, MethodId::cdm_f, MethodId::opt, MethodId::rzf_ns, MethodId::mrt};
  CellBudget sweep_budget;

  /// Every stream used downstream is derived from the root seed.
  void apply_seed(std::uint64_t s) {
    seed = s;
    system.seed = s;
    train.seed = stream_key(s, 1, salt::training);
    finetune.seed = stream_key(s, 2, salt::finetune);
    sweep_budget.train.seed = train.seed;
    sweep_budget.finetune.seed = finetune.seed;
  }

  void validate() const {
    system.validate();
    denoiser.with_system(system).validate();
    oracle.validate();
    train.validate();
    finetune.validate(train.T);
    sweep_budget.train.validate();
    sweep_budget.finetune.validate(sweep_budget.train.T);
    if (n_train < 2) throw config_error("n_train must be >= 2");
    if (n_test < 1) throw config_error("n_test must be >= 1");
    if (candidates < 1) throw config_error("candidates must be >= 1");
    if (ddim_steps < 1 || ddim_steps > train.T) throw config_error("ddim_steps must lie in [1, T]");
    if (sweep_budget.N < 2) throw config_error("sweep budget N must be >= 2");
    for (const auto& s : sweeps) s.validate();
  }
};

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = nlohmann::json{{"profile", c.profile},
                     {"seed", c.seed},
                     {"system", c.system},
                     {"denoiser", c.denoiser},
                     {"oracle", c.oracle},
                     {"data", {{"n_train", c.n_train}, {"n_test", c.n_test}}},
                     {"train", c.train},
                     {"finetune", c.finetune},
                     {"eval", {{"candidates", c.candidates}, {"ddim_steps", c.ddim_steps}, {"methods", c.eval_methods}}},
                     {"sweep", {{"axes", c.sweeps}, {"methods", c.sweep_methods}, {"budget", c.sweep_budget}}}};
}

inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  c.profile = j.at("profile").get<std::string>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.system = j.at("system").get<SystemConfig>();
  c.denoiser = j.at("denoiser").get<DenoiserSpec>();
  c.oracle = j.at("oracle").get<OracleOptions>();
  c.n_train = j.at("data").at("n_train").get<std::size_t>();
  c.n_test = j.at("data").at("n_test").get<std::size_t>();
  c.train = j.at("train").get<TrainConfig>();
  c.finetune = j.at("finetune").get<FinetuneConfig>();
  c.candidates = j.at("eval").at("candidates").get<int>();
  c.ddim_steps = j.at("eval").at("ddim_steps").get<int>();
  c.eval_methods = j.at("eval").at("methods").get<std::vector<MethodId>>();
  c.sweeps = j.at("sweep").at("axes").get<std::vector<SweepSpec>>();
  c.sweep_methods = j.at("sweep").at("methods").get<std::vector<MethodId>>();
  c.sweep_budget = j.at("sweep").at("budget").get<CellBudget>();
}

inline ExperimentConfig profile_config(const std::string& name, std::uint64_t seed = 7) {
  ExperimentConfig c;
  c.profile = name;
  if (name == "smoke" || name == "desk") {
    c.system.M = 4;
    c.system.K = 2;
    c.system.L = 2;
    c.system.J = 2;
  }
  if (name == "smoke") {
    c.denoiser.channels = {16, 32, 32};
    c.denoiser.cond_dim = 64;
    c.denoiser.time_dim = 32;
    c.denoiser.embed_hidden = 64;
    c.denoiser.heads = 2;
    c.denoiser.groups = 4;
    c.oracle.restarts = 2;
    c.oracle.max_iters = 150;
    c.n_train = 256;
    c.n_test = 32;
    c.train.T = 50;
    c.train.epochs = 20;
    c.train.batch_size = 64;
    c.finetune.epochs = 3;
    c.finetune.steps_per_epoch = 2;
    c.finetune.batch_size = 16;
    c.finetune.chain_len = 4;
    c.finetune.ddim_steps = 10;
    c.finetune.monitor_channels = 16;
    c.candidates = 2;
    c.ddim_steps = 10;
    c.sweeps = {{SweepAxis::power, {0, 10, 20}, 16, 2},
                {SweepAxis::eves, {1, 2}, 16, 2},
                {SweepAxis::users, {1, 2}, 16, 2},
                {SweepAxis::noise, {-110, -100, -90}, 16, 2}};
    c.sweep_budget.N = 128;
    c.sweep_budget.train = c.train;
    c.sweep_budget.train.epochs = 5;
    c.sweep_budget.finetune = c.finetune;
    c.sweep_budget.finetune.epochs = 1;
  } else if (name == "desk") {
    c.denoiser.channels = {32, 64, 128};
    c.n_train = 4096;
    c.n_test = 512;
    c.train.T = 200;
    c.train.epochs = 150;
    c.finetune.epochs = 60;
    c.sweeps = {{SweepAxis::power, {0, 5, 10, 15, 20, 25}, 128, 8},
                {SweepAxis::eves, {1, 2, 3, 4}, 128, 8},
                {SweepAxis::users, {1, 2, 3}, 128, 8},
                {SweepAxis::noise, {-110, -100, -90}, 128, 8}};
    c.sweep_budget.N = 1024;
    c.sweep_budget.train = c.train;
    c.sweep_budget.train.epochs = 60;
    c.sweep_budget.finetune = c.finetune;
    c.sweep_budget.finetune.epochs = 15;
  } else if (name == "paper") {
    c.n_train = 16384;
    c.n_test = 512;
    c.train.T = 1000;
    c.train.epochs = 1000;
    c.finetune.epochs = 60;
    c.sweeps = {{SweepAxis::power, {0, 5, 10, 15, 20, 25}, 512, 8},
                {SweepAxis::eves, {1, 2, 3, 4, 5, 6}, 512, 8},
                {SweepAxis::users, {1, 2, 3, 4, 5}, 512, 8},
                {SweepAxis::noise, {-110, -105, -100, -95, -90}, 512, 8}};
    c.sweep_budget.N = 4096;
    c.sweep_budget.train = c.train;
    c.sweep_budget.finetune = c.finetune;
  } else {
    throw config_error("unknown profile: " + name + " (expected smoke, desk or paper)");
  }
  c.system.J = SystemConfig::default_an_streams(c.system.M, c.system.K);
  c.apply_seed(seed);
  return c;
}

/// Profile defaults overlaid with a JSON config file (any subset of keys).
inline ExperimentConfig load_experiment_config(const std::filesystem::path& path, const std::string& profile_override,
                                               std::optional<std::uint64_t> seed_override) {
  nlohmann::json file = nlohmann::json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open config file " + path.string());
    try {
      file = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw config_error(std::string("config parse error: ") + e.what());
    }
    if (!file.is_object()) throw config_error("config file must hold a JSON object");
  }
  const std::string profile = !profile_override.empty() ? profile_override : file.value("profile", std::string("desk"));
  const std::uint64_t seed = seed_override ? *seed_override : file.value("seed", std::uint64_t{7});
  ExperimentConfig base = profile_config(profile, seed);
  nlohmann::json merged = base;
  file.erase("profile");
  file.erase("seed");
  const bool dims_changed = file.contains("system") && (file["system"].contains("M") || file["system"].contains("K")) &&
                            !file["system"].contains("J");
  merged.merge_patch(file);
  ExperimentConfig c;
  try {
    c = merged.get<ExperimentConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw config_error(std::string("config error: ") + e.what());
  }
  if (dims_changed) c.system.J = SystemConfig::default_an_streams(c.system.M, c.system.K);
  c.apply_seed(seed);
  try {
    c.validate();
  } catch (const config_error&) {
    throw;
  } catch (const std::exception& e) {
    throw config_error(e.what());
  }
  return c;
}

// ---- evaluation ----------------------------------------------------------

struct Summary {
  double mean = 0.0, ci_low = 0.0, ci_high = 0.0;
  std::size_t n = 0;
};

/// Mean with a normal-approximation 95% interval.
inline Summary summarize(const std::vector<double>& v) {
  Summary s;
  s.n = v.size();
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= double(v.size());
  double var = 0.0;
  for (double x : v) var += (x - s.mean) * (x - s.mean);
  var = v.size() > 1 ? var / double(v.size() - 1) : 0.0;
  const double half = 1.959963984540054 * std::sqrt(var / double(v.size()));
  s.ci_low = s.mean - half;
  s.ci_high = s.mean + half;
  return s;
}

struct ModelSet {
  std::optional<Checkpoint> cdm, cdm_f, cdm_mlp;

  const Checkpoint* get(MethodId m) const {
    const std::optional<Checkpoint>* p = m == MethodId::cdm     ? &cdm
                                         : m == MethodId::cdm_f ? &cdm_f
                                         : m == MethodId::cdm_mlp ? &cdm_mlp
                                                                  : nullptr;
    return p && p->has_value() ? &**p : nullptr;
  }
};

struct EvalContext {
  SystemConfig cfg;
  int candidates = 8;
  int ddim_steps = 50;
  std::uint64_t seed = 0;
  OracleOptions oracle;
};

struct MethodEval {
  MethodId method;
  int candidates = 1;
  std::vector<double> per_channel;
  Summary summary;
};

/// Exact-mode R_sum of method m on every channel.  Learned methods sample
/// ctx.candidates strategies per channel and keep the best.
inline MethodEval evaluate_method(MethodId m, const ModelSet& models, const std::vector<ChannelSet>& channels,
                                  const EvalContext& ctx) {
  MethodEval ev{m, is_learned(m) ? ctx.candidates : 1, {}, {}};
  ev.per_channel.reserve(channels.size());
  auto check = [&](const Strategy& s) {
    if (total_power(s) > 1.0 + 1e-6) throw stage_error("eval", to_string(m) + " produced an infeasible strategy");
  };
  if (is_learned(m)) {
    const Checkpoint* base = models.get(m);
    if (!base) throw stage_error("eval", "missing checkpoint for method " + to_string(m));
    if (base->cfg.M != ctx.cfg.M || base->cfg.K != ctx.cfg.K || base->cfg.L != ctx.cfg.L || base->cfg.J != ctx.cfg.J)
      throw stage_error("eval", "checkpoint for " + to_string(m) + " has incompatible dimensions");
    Checkpoint ck = *base;  // shares parameters; only the rate config changes
    ck.cfg = ctx.cfg;
    InferenceOptions io;
    io.candidates = ctx.candidates;
    io.sampler.ddim_steps = std::min(ctx.ddim_steps, ck.schedule.T);
    io.seed = ctx.seed;
    for (const auto& r : infer(ck, channels, io)) {
      check(r.best);
      ev.per_channel.push_back(r.best_rsum);
    }
  } else {
    for (std::size_t n = 0; n < channels.size(); ++n) {
      Strategy s;
      if (m == MethodId::opt) {
        Rng rng = make_stream(ctx.seed, n, salt::oracle);
        s = oracle_optimize(channels[n], ctx.cfg, ctx.oracle, rng).strategy;
      } else if (m == MethodId::rzf_ns) {
        s = rzf_ns_best(channels[n], ctx.cfg);
      } else {
        s = mrt(channels[n], ctx.cfg);
      }
      check(s);
      ev.per_channel.push_back(sum_secrecy(channels[n], s, ctx.cfg, RateMode::exact).R_sum);
    }
  }
  ev.summary = summarize(ev.per_channel);
  return ev;
}

/// FNV-1a over the composite channels; logged so every method in a cell is
/// provably scored on the same list.
inline std::string channel_list_hash(const std::vector<ChannelSet>& cs) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& c : cs)
    for (Eigen::Index i = 0; i < c.h_composite.size(); ++i) {
      const double parts[2] = {c.h_composite(i).real(), c.h_composite(i).imag()};
      const auto* bytes = reinterpret_cast<const unsigned char*>(parts);
      for (std::size_t b = 0; b < sizeof parts; ++b) h = (h ^ bytes[b]) * 1099511628211ull;
    }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string file_hash(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::uint64_t h = 1469598103934665603ull;
  char ch;
  while (in.get(ch)) h = (h ^ static_cast<unsigned char>(ch)) * 1099511628211ull;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---- stages ---------------------------------------------------------------

using Logger = std::function<void(const std::string&)>;

/// Runs fn, re-raising any failure as a stage_error tagged with `stage`.
template <class F>
auto run_stage(const std::string& stage, F&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const stage_error&) {
    throw;
  } catch (const config_error&) {
    throw;
  } catch (const std::exception& e) {
    throw stage_error(stage, e.what());
  }
}

inline DatasetBundle make_training_data(const SystemConfig& cfg, std::size_t N, const OracleOptions& oracle) {
  DatasetOptions o;
  o.N = N;
  o.oracle = oracle;
  return generate_dataset(cfg, o);
}

/// Trains the requested learned models for one system configuration.
inline ModelSet build_models(const SystemConfig& cfg, const DenoiserSpec& spec, const OracleOptions& oracle,
                             const CellBudget& budget, bool want_f, bool want_mlp, const Logger& log = {}) {
  const DatasetBundle data = make_training_data(cfg, budget.N, oracle);
  ModelSet ms;
  TrainConfig tc = budget.train;
  tc.backbone = Backbone::unet;
  ms.cdm = train(data, spec, tc).checkpoint;
  if (log) log("  trained cdm");
  if (want_mlp) {
    tc.backbone = Backbone::mlp;
    ms.cdm_mlp = train(data, spec, tc).checkpoint;
    if (log) log("  trained cdm-mlp");
  }
  if (want_f) {
    ms.cdm_f = finetune(*ms.cdm, budget.finetune).checkpoint;
    if (log) log("  fine-tuned cdm-f");
  }
  return ms;
}

inline SystemConfig apply_axis(SystemConfig cfg, SweepAxis axis, double v) {
  switch (axis) {
    case SweepAxis::power: cfg.P_dbm = v; break;
    case SweepAxis::noise: cfg.noise_dbm = v; break;
    case SweepAxis::eves: cfg.L = static_cast<int>(v); break;
    case SweepAxis::users:
      cfg.K = static_cast<int>(v);
      cfg.J = SystemConfig::default_an_streams(cfg.M, cfg.K);
      break;
  }
  cfg.validate();
  return cfg;
}

struct SweepResult {
  std::vector<MetricRow> rows;
  nlohmann::json cells = nlohmann::json::array();  // per-cell channel hashes
};

/// One row per (axis value, method); all methods in a cell score the same
/// channels.  Zero-shot axes reuse `base`; the others train per cell.
inline SweepResult run_sweep(const SweepSpec& spec, const std::vector<MethodId>& methods, const ExperimentConfig& ec,
                             const ModelSet& base, const Logger& log = {}) {
  spec.validate();
  if (methods.empty()) throw config_error("sweep: empty method list");
  SweepResult res;
  const bool want_f = std::find(methods.begin(), methods.end(), MethodId::cdm_f) != methods.end();
  const bool want_mlp = std::find(methods.begin(), methods.end(), MethodId::cdm_mlp) != methods.end();
  const bool any_learned = std::any_of(methods.begin(), methods.end(), is_learned);
  for (std::size_t vi = 0; vi < spec.values.size(); ++vi) {
    const double v = spec.values[vi];
    const SystemConfig cfg = apply_axis(ec.system, spec.axis, v);
    const std::uint64_t cell_seed =
        stream_key(ec.seed, static_cast<std::uint64_t>(spec.axis) * 1000 + vi, salt::sweep);
    if (log) log("sweep " + to_string(spec.axis) + "=" + fmt_num(v, "%g"));
    ModelSet cell_models;
    const ModelSet* models = &base;
    if (!spec.zero_shot() && any_learned) {
      SystemConfig train_cfg = cfg;
      train_cfg.seed = cell_seed;
      CellBudget b = ec.sweep_budget;
      b.train.seed = stream_key(cell_seed, 1, salt::training);
      b.finetune.seed = stream_key(cell_seed, 2, salt::finetune);
      cell_models = build_models(train_cfg, ec.denoiser, ec.oracle, b, want_f, want_mlp, log);
      models = &cell_models;
    }
    const auto channels = test_channels(cfg, static_cast<std::size_t>(spec.test_channels), cell_seed);
    const std::string hash = channel_list_hash(channels);
    EvalContext ctx{cfg, spec.candidates, ec.ddim_steps, stream_key(cell_seed, 3, salt::sampler), ec.oracle};
    nlohmann::json cell{{"axis", to_string(spec.axis)}, {"value", v}, {"channels", channels.size()},
                        {"channel_hash", hash}, {"methods", nlohmann::json::array()}};
    for (MethodId m : methods) {
      const MethodEval ev = evaluate_method(m, *models, channels, ctx);
      res.rows.push_back({fmt_num(v, "%g"), to_string(m), ev.summary.mean, ev.summary.ci_low, ev.summary.ci_high,
                          ev.summary.n});
      cell["methods"].push_back({{"method", to_string(m)}, {"channel_hash", hash}});
      if (log) log("  " + to_string(m) + " mean R_sum " + fmt_num(ev.summary.mean, "%.4f"));
    }
    res.cells.push_back(cell);
  }
  return res;
}

// ---- pipeline --------------------------------------------------------------

struct Layout {
  std::filesystem::path root;
  std::filesystem::path data() const { return root / "data" / "train"; }
  std::filesystem::path model(MethodId m) const { return root / "models" / to_string(m); }
  std::filesystem::path curves() const { return root / "curves"; }
  std::filesystem::path metrics() const { return root / "metrics"; }
  std::filesystem::path figures() const { return root / "figures"; }
  std::filesystem::path manifest() const { return root / "run_manifest.json"; }
};

inline void stage_gen_data(const ExperimentConfig& ec, const Layout& out, const Logger& log = {}) {
  run_stage("gen-data", [&] {
    const DatasetBundle b = make_training_data(ec.system, ec.n_train, ec.oracle);
    save_dataset(b, out.data());
    if (log) log("gen-data: " + std::to_string(b.size()) + " records, mean label " + fmt_num(b.rsum.mean(), "%.4f"));
  });
}

inline void stage_train(const ExperimentConfig& ec, const Layout& out, Backbone backbone, const Logger& log = {}) {
  run_stage("train", [&] {
    const DatasetBundle b = load_dataset(out.data());
    TrainConfig tc = ec.train;
    tc.backbone = backbone;
    const MethodId m = backbone == Backbone::unet ? MethodId::cdm : MethodId::cdm_mlp;
    const TrainResult r = train(b, ec.denoiser, tc, [&](int e, double l) {
      if (log && (e == 1 || e % 10 == 0 || e == tc.epochs)) log("train " + to_string(m) + " epoch " + std::to_string(e) + " loss " + fmt_num(l, "%.5f"));
    });
    save_checkpoint(r.checkpoint, out.model(m));
    write_curve_csv(out.curves() / ("loss_" + to_string(m) + ".csv"), "loss", r.loss_curve);
  });
}

inline void stage_finetune(const ExperimentConfig& ec, const Layout& out, const Logger& log = {}) {
  run_stage("finetune", [&] {
    const Checkpoint base = load_checkpoint(out.model(MethodId::cdm));
    const FinetuneResult r = finetune(base, ec.finetune, [&](int e, double v) {
      if (log && (e == 1 || e % 10 == 0 || e == ec.finetune.epochs)) log("finetune epoch " + std::to_string(e) + " mean R_sum " + fmt_num(v, "%.4f"));
    });
    save_checkpoint(r.checkpoint, out.model(MethodId::cdm_f));
    write_curve_csv(out.curves() / "finetune_cdm-f.csv", "mean_rsum", r.secrecy_curve);
  });
}

inline ModelSet load_models(const Layout& out, const std::vector<MethodId>& methods) {
  ModelSet ms;
  for (MethodId m : methods) {
    if (!is_learned(m)) continue;
    Checkpoint ck = load_checkpoint(out.model(m));
    if (m == MethodId::cdm) ms.cdm = std::move(ck);
    if (m == MethodId::cdm_f) ms.cdm_f = std::move(ck);
    if (m == MethodId::cdm_mlp) ms.cdm_mlp = std::move(ck);
  }
  return ms;
}

struct EvalReport {
  std::vector<MethodEval> evals;
  std::string channel_hash;
};

/// Scores every method on the fixed held-out set; learned methods are also
/// reported with a single candidate as "<id>@B1".
inline EvalReport stage_eval(const ExperimentConfig& ec, const Layout& out, const Logger& log = {}) {
  return run_stage("eval", [&] {
    const ModelSet ms = load_models(out, ec.eval_methods);
    const auto channels = test_channels(ec.system, ec.n_test, ec.seed);
    EvalReport rep;
    rep.channel_hash = channel_list_hash(channels);
    EvalContext ctx{ec.system, ec.candidates, ec.ddim_steps, stream_key(ec.seed, 3, salt::sampler), ec.oracle};
    std::vector<MetricRow> rows;
    const std::string axis = fmt_num(ec.system.P_dbm, "%g");
    for (MethodId m : ec.eval_methods) {
      MethodEval ev = evaluate_method(m, ms, channels, ctx);
      rows.push_back({axis, to_string(m), ev.summary.mean, ev.summary.ci_low, ev.summary.ci_high, ev.summary.n});
      if (log) log("eval " + to_string(m) + " mean R_sum " + fmt_num(ev.summary.mean, "%.4f"));
      rep.evals.push_back(std::move(ev));
    }
    if (ec.candidates > 1) {
      EvalContext one = ctx;
      one.candidates = 1;
      for (MethodId m : ec.eval_methods) {
        if (!is_learned(m)) continue;
        const MethodEval ev = evaluate_method(m, ms, channels, one);
        rows.push_back({axis, to_string(m) + "@B1", ev.summary.mean, ev.summary.ci_low, ev.summary.ci_high, ev.summary.n});
      }
    }
    write_metrics_csv(out.metrics() / "eval.csv", rows);
    return rep;
  });
}

inline nlohmann::json stage_sweep(const ExperimentConfig& ec, const Layout& out, const std::vector<SweepAxis>& axes,
                                  const Logger& log = {}) {
  return run_stage("sweep", [&] {
    std::vector<MethodId> learned;
    for (MethodId m : ec.sweep_methods)
      if (is_learned(m)) learned.push_back(m);
    const ModelSet base = load_models(out, learned);
    nlohmann::json cells = nlohmann::json::array();
    for (const auto& spec : ec.sweeps) {
      if (std::find(axes.begin(), axes.end(), spec.axis) == axes.end()) continue;
      const SweepResult r = run_sweep(spec, ec.sweep_methods, ec, base, log);
      write_metrics_csv(out.metrics() / ("sweep_" + to_string(spec.axis) + ".csv"), r.rows);
      for (const auto& c : r.cells) cells.push_back(c);
    }
    return cells;
  });
}

inline std::vector<std::filesystem::path> stage_plot(const Layout& out, std::vector<std::filesystem::path> csvs = {}) {
  return run_stage("plot", [&] {
    if (csvs.empty()) {
      for (const auto& dir : {out.metrics(), out.curves()}) {
        if (!std::filesystem::exists(dir)) continue;
        for (const auto& e : std::filesystem::directory_iterator(dir))
          if (e.path().extension() == ".csv") csvs.push_back(e.path());
      }
      std::sort(csvs.begin(), csvs.end());
    }
    if (csvs.empty()) throw csv_error("no CSV files to plot");
    return emit_plots(csvs, out.figures());
  });
}

inline nlohmann::json artifact_hashes(const Layout& out) {
  nlohmann::json a = nlohmann::json::object();
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(out.root))
    if (e.is_regular_file() && e.path() != out.manifest()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) a[std::filesystem::relative(f, out.root).generic_string()] = file_hash(f);
  return a;
}

/// gen-data -> train -> finetune -> eval -> sweep -> plot, then the manifest.
inline void pipeline(const ExperimentConfig& ec, const Layout& out, const Logger& log = {}) {
  ec.validate();
  std::filesystem::create_directories(out.root);
  stage_gen_data(ec, out, log);
  stage_train(ec, out, Backbone::unet, log);
  const bool mlp = std::find(ec.eval_methods.begin(), ec.eval_methods.end(), MethodId::cdm_mlp) != ec.eval_methods.end() ||
                   std::find(ec.sweep_methods.begin(), ec.sweep_methods.end(), MethodId::cdm_mlp) != ec.sweep_methods.end();
  if (mlp) stage_train(ec, out, Backbone::mlp, log);
  stage_finetune(ec, out, log);
  const EvalReport rep = stage_eval(ec, out, log);
  std::vector<SweepAxis> axes;
  for (const auto& s : ec.sweeps) axes.push_back(s.axis);
  const nlohmann::json cells = stage_sweep(ec, out, axes, log);
  stage_plot(out);
  nlohmann::json man{{"config", ec},
                     {"seeds", {{"root", ec.seed}, {"train", ec.train.seed}, {"finetune", ec.finetune.seed}}},
                     {"stages", {"gen-data", "train", "finetune", "eval", "sweep", "plot"}},
                     {"eval_channel_hash", rep.channel_hash},
                     {"sweep_cells", cells},
                     {"artifacts", artifact_hashes(out)}};
  std::ofstream f(out.manifest(), std::ios::trunc);
  f << man.dump(2) << '\n';
}

}  // namespace secdiff

#endif  // SECDIFF_EXPERIMENTS_HPP
