#include "secdiff/experiments.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace secdiff;
using namespace testing_support;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("secdiff_exp_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentConfig tiny_experiment() {
  ExperimentConfig ec = profile_config("smoke", 11);
  ec.system = tiny_config();
  ec.system.seed = 11;
  ec.denoiser = tiny_denoiser();
  ec.oracle.restarts = 1;
  ec.oracle.max_iters = 60;
  ec.train.T = 30;
  ec.train.epochs = 3;
  ec.train.batch_size = 8;
  ec.train.learning_rate = 1e-3;
  ec.ddim_steps = 5;
  ec.sweep_budget.N = 12;
  ec.sweep_budget.train = ec.train;
  ec.sweep_budget.train.epochs = 1;
  ec.sweep_budget.finetune.epochs = 1;
  ec.sweep_budget.finetune.steps_per_epoch = 1;
  ec.sweep_budget.finetune.batch_size = 4;
  ec.sweep_budget.finetune.ddim_steps = 5;
  ec.sweep_budget.finetune.chain_len = 2;
  ec.sweep_budget.finetune.monitor_channels = 4;
  ec.apply_seed(11);
  return ec;
}

const ModelSet& tiny_models() {
  static const ModelSet ms = [] {
    const ExperimentConfig ec = tiny_experiment();
    CellBudget b;
    b.N = 24;
    b.train = ec.train;
    return build_models(ec.system, ec.denoiser, ec.oracle, b, false, false);
  }();
  return ms;
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(SECDIFF_CLI_PATH) + " " + args + " >" + log.string() + " 2>&1";
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

}  // namespace

TEST(Names, MethodsAndAxesRoundTrip) {
  for (MethodId m : {MethodId::cdm, MethodId::cdm_f, MethodId::cdm_mlp, MethodId::opt, MethodId::rzf_ns, MethodId::mrt})
    EXPECT_EQ(method_from_string(to_string(m)), m);
  for (SweepAxis a : {SweepAxis::power, SweepAxis::eves, SweepAxis::users, SweepAxis::noise})
    EXPECT_EQ(axis_from_string(to_string(a)), a);
  EXPECT_THROW(method_from_string("zf"), config_error);
  EXPECT_THROW(axis_from_string("bandwidth"), config_error);
}

TEST(Summary, MeanAndNormalInterval) {
  const Summary s = summarize({1.0, 2.0, 3.0, 4.0});
  EXPECT_DOUBLE_EQ(s.mean, 2.5);
  const double half = 1.959963984540054 * std::sqrt((2.25 + 0.25 + 0.25 + 2.25) / 3.0 / 4.0);
  EXPECT_NEAR(s.ci_low, 2.5 - half, 1e-12);
  EXPECT_NEAR(s.ci_high, 2.5 + half, 1e-12);
  EXPECT_EQ(s.n, 4u);
  const Summary one = summarize({5.0});
  EXPECT_EQ(one.ci_low, 5.0);
  EXPECT_EQ(one.ci_high, 5.0);
}

TEST(SweepSpec, Validation) {
  SweepSpec s{SweepAxis::power, {0, 10, 20}, 8, 2};
  EXPECT_NO_THROW(s.validate());
  s.values = {};
  EXPECT_THROW(s.validate(), config_error);
  s.values = {0, 10, 10};
  EXPECT_THROW(s.validate(), config_error);
  s.values = {20, 10, 0};
  EXPECT_NO_THROW(s.validate());
  s.axis = SweepAxis::users;
  s.values = {0, 1};
  EXPECT_THROW(s.validate(), config_error);
  s.values = {1, 2.5};
  EXPECT_THROW(s.validate(), config_error);
  s.axis = SweepAxis::eves;
  s.values = {0, 1};
  EXPECT_NO_THROW(s.validate());
  s.candidates = 0;
  EXPECT_THROW(s.validate(), config_error);
}

TEST(Config, ProfilesValidate) {
  for (const char* p : {"smoke", "desk", "paper"}) {
    const ExperimentConfig c = profile_config(p, 3);
    EXPECT_NO_THROW(c.validate()) << p;
    EXPECT_EQ(c.seed, 3u);
    EXPECT_EQ(c.system.seed, 3u);
  }
  EXPECT_THROW(profile_config("huge"), config_error);
  const ExperimentConfig d = profile_config("desk");
  EXPECT_EQ(d.system.M, 4);
  EXPECT_EQ(d.system.K, 2);
  EXPECT_EQ(d.system.L, 2);
  EXPECT_EQ(d.system.J, 2);
  EXPECT_EQ(d.n_train, 4096u);
  EXPECT_EQ(d.n_test, 512u);
  EXPECT_EQ(d.train.T, 200);
  EXPECT_EQ(d.train.epochs, 150);
  EXPECT_EQ(d.finetune.epochs, 60);
}

TEST(Config, FileOverlaysProfile) {
  const fs::path dir = scratch_dir("cfg");
  {
    std::ofstream f(dir / "c.json");
    f << R"({"profile":"smoke","seed":5,"system":{"L":1},"train":{"epochs":4}})";
  }
  const ExperimentConfig c = load_experiment_config(dir / "c.json", "", std::nullopt);
  EXPECT_EQ(c.profile, "smoke");
  EXPECT_EQ(c.seed, 5u);
  EXPECT_EQ(c.system.L, 1);
  EXPECT_EQ(c.system.M, 4);
  EXPECT_EQ(c.train.epochs, 4);
  EXPECT_EQ(c.train.T, profile_config("smoke").train.T);

  const ExperimentConfig o = load_experiment_config(dir / "c.json", "smoke", 9);
  EXPECT_EQ(o.seed, 9u);
  EXPECT_EQ(o.system.seed, 9u);
  EXPECT_NE(o.train.seed, c.train.seed);

  {
    std::ofstream f(dir / "dims.json");
    f << R"({"profile":"smoke","system":{"M":6,"K":3}})";
  }
  const ExperimentConfig dm = load_experiment_config(dir / "dims.json", "", std::nullopt);
  EXPECT_EQ(dm.system.J, SystemConfig::default_an_streams(6, 3));
}

TEST(Config, BadInputsAreConfigErrors) {
  const fs::path dir = scratch_dir("badcfg");
  EXPECT_THROW(load_experiment_config(dir / "missing.json", "", std::nullopt), config_error);
  {
    std::ofstream f(dir / "syntax.json");
    f << "{not json";
  }
  EXPECT_THROW(load_experiment_config(dir / "syntax.json", "", std::nullopt), config_error);
  {
    std::ofstream f(dir / "array.json");
    f << "[1,2]";
  }
  EXPECT_THROW(load_experiment_config(dir / "array.json", "", std::nullopt), config_error);
  {
    std::ofstream f(dir / "range.json");
    f << R"({"profile":"smoke","system":{"M":0}})";
  }
  EXPECT_THROW(load_experiment_config(dir / "range.json", "", std::nullopt), config_error);
  {
    std::ofstream f(dir / "type.json");
    f << R"({"profile":"smoke","train":{"epochs":"many"}})";
  }
  EXPECT_THROW(load_experiment_config(dir / "type.json", "", std::nullopt), config_error);
  EXPECT_THROW(load_experiment_config({}, "galactic", std::nullopt), config_error);
}

TEST(Evaluate, RzfNsWithoutEavesdroppersScoresPlainSumRate) {
  SystemConfig cfg = desk_config();
  cfg.L = 0;
  cfg.seed = 21;
  const auto channels = test_channels(cfg, 40, 21);
  EvalContext ctx{cfg, 1, 10, 5, OracleOptions{}};
  const MethodEval ev = evaluate_method(MethodId::rzf_ns, ModelSet{}, channels, ctx);
  ASSERT_EQ(ev.per_channel.size(), channels.size());
  for (std::size_t n = 0; n < channels.size(); ++n) {
    const Strategy s = rzf_ns_best(channels[n], cfg);
    double plain = 0.0;
    for (int k = 0; k < cfg.K; ++k) plain += user_rate(channels[n], s, k, cfg);
    EXPECT_NEAR(ev.per_channel[n], plain, 1e-12 * std::max(1.0, plain));
  }
}

TEST(Evaluate, MissingCheckpointIsStageError) {
  const SystemConfig cfg = tiny_config();
  const auto channels = test_channels(cfg, 2, 1);
  EvalContext ctx{cfg, 1, 5, 1, OracleOptions{}};
  EXPECT_THROW(evaluate_method(MethodId::cdm, ModelSet{}, channels, ctx), stage_error);
  EXPECT_THROW(evaluate_method(MethodId::cdm_f, ModelSet{}, channels, ctx), stage_error);
}

TEST(Evaluate, IncompatibleDimensionsAreStageError) {
  SystemConfig cfg = tiny_config();
  cfg.L = 2;
  const auto channels = test_channels(cfg, 2, 1);
  EvalContext ctx{cfg, 1, 5, 1, OracleOptions{}};
  EXPECT_THROW(evaluate_method(MethodId::cdm, tiny_models(), channels, ctx), stage_error);
}

TEST(Evaluate, EightCandidatesBeatOne) {
  const SystemConfig cfg = tiny_config();
  const auto channels = test_channels(cfg, 64, 31);
  EvalContext one{cfg, 1, 5, 77, OracleOptions{}};
  EvalContext eight = one;
  eight.candidates = 8;
  const MethodEval a = evaluate_method(MethodId::cdm, tiny_models(), channels, one);
  const MethodEval b = evaluate_method(MethodId::cdm, tiny_models(), channels, eight);
  EXPECT_EQ(a.candidates, 1);
  EXPECT_EQ(b.candidates, 8);
  EXPECT_GE(b.summary.mean, a.summary.mean);
}

TEST(Evaluate, BaselinesAreFeasibleAndOracleLeads) {
  SystemConfig cfg = tiny_config();
  const auto channels = test_channels(cfg, 20, 41);
  OracleOptions oo;
  oo.restarts = 2;
  oo.max_iters = 200;
  EvalContext ctx{cfg, 1, 5, 3, oo};
  const double opt = evaluate_method(MethodId::opt, ModelSet{}, channels, ctx).summary.mean;
  const double mrt_v = evaluate_method(MethodId::mrt, ModelSet{}, channels, ctx).summary.mean;
  EXPECT_GE(opt, mrt_v);
}

TEST(Hashes, ChannelListHashIsContentSensitive) {
  const SystemConfig cfg = tiny_config();
  const auto a = test_channels(cfg, 5, 1);
  const auto b = test_channels(cfg, 5, 1);
  const auto c = test_channels(cfg, 5, 2);
  EXPECT_EQ(channel_list_hash(a), channel_list_hash(b));
  EXPECT_NE(channel_list_hash(a), channel_list_hash(c));
  EXPECT_EQ(channel_list_hash(a).size(), 16u);
}

TEST(Sweep, EmptyMethodListIsRejected) {
  const ExperimentConfig ec = tiny_experiment();
  EXPECT_THROW(run_sweep({SweepAxis::power, {0, 10}, 4, 1}, {}, ec, ModelSet{}), config_error);
}

TEST(Sweep, ZeroShotPowerSharesChannelsAcrossMethods) {
  const ExperimentConfig ec = tiny_experiment();
  const SweepSpec spec{SweepAxis::power, {0, 10, 20}, 6, 2};
  const std::vector<MethodId> methods{MethodId::cdm, MethodId::rzf_ns, MethodId::mrt};
  const SweepResult r = run_sweep(spec, methods, ec, tiny_models());
  ASSERT_EQ(r.rows.size(), spec.values.size() * methods.size());
  ASSERT_EQ(r.cells.size(), spec.values.size());
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    EXPECT_EQ(r.rows[i].method, to_string(methods[i % methods.size()]));
    EXPECT_EQ(r.rows[i].n, 6u);
    EXPECT_LE(r.rows[i].ci_low, r.rows[i].mean);
    EXPECT_GE(r.rows[i].ci_high, r.rows[i].mean);
  }
  for (const auto& cell : r.cells) {
    ASSERT_EQ(cell["methods"].size(), methods.size());
    for (const auto& m : cell["methods"]) EXPECT_EQ(m["channel_hash"], cell["channel_hash"]);
  }
  EXPECT_EQ(r.rows[0].axis, "0");
  EXPECT_EQ(r.rows[3].axis, "10");
}

TEST(Sweep, EveAxisTrainsPerCell) {
  const ExperimentConfig ec = tiny_experiment();
  const SweepSpec spec{SweepAxis::eves, {1, 2}, 4, 1};
  int trained = 0;
  const SweepResult r = run_sweep(spec, {MethodId::cdm, MethodId::cdm_f, MethodId::rzf_ns}, ec, ModelSet{},
                                  [&](const std::string& s) { trained += s.find("trained cdm") != std::string::npos; });
  EXPECT_EQ(trained, 2);
  EXPECT_EQ(r.rows.size(), 6u);
}

TEST(Sweep, DeterministicGivenSeed) {
  const ExperimentConfig ec = tiny_experiment();
  const SweepSpec spec{SweepAxis::noise, {-110, -100}, 4, 2};
  const auto a = run_sweep(spec, {MethodId::cdm, MethodId::mrt}, ec, tiny_models());
  const auto b = run_sweep(spec, {MethodId::cdm, MethodId::mrt}, ec, tiny_models());
  ASSERT_EQ(a.rows.size(), b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) EXPECT_EQ(a.rows[i].mean, b.rows[i].mean);
}

TEST(Plots, EmptyMethodListWritesNothing) {
  const fs::path dir = scratch_dir("plot_empty");
  write_metrics_csv(dir / "sweep_power.csv", {});
  EXPECT_THROW(emit_plots({dir / "sweep_power.csv"}, dir / "fig"), csv_error);
  EXPECT_FALSE(fs::exists(dir / "fig" / "sweep_power.svg"));
}

TEST(Plots, ValidSweepCsvRendersOneImageDeterministically) {
  const fs::path dir = scratch_dir("plot_ok");
  write_metrics_csv(dir / "sweep_power.csv", {{"0", "cdm", 1.0, 0.9, 1.1, 16},
                                              {"10", "cdm", 2.0, 1.8, 2.2, 16},
                                              {"0", "opt", 1.2, 1.1, 1.3, 16},
                                              {"10", "opt", 2.4, 2.2, 2.6, 16}});
  const auto out = emit_plots({dir / "sweep_power.csv"}, dir / "fig");
  ASSERT_EQ(out.size(), 1u);
  ASSERT_TRUE(fs::exists(out[0]));
  EXPECT_GT(fs::file_size(out[0]), 0u);
  const std::string first = slurp(out[0]);
  EXPECT_NE(first.find("<svg"), std::string::npos);
  EXPECT_NE(first.find(">cdm<"), std::string::npos);
  EXPECT_NE(first.find(">opt<"), std::string::npos);
  emit_plots({dir / "sweep_power.csv"}, dir / "fig");
  EXPECT_EQ(slurp(out[0]), first);
}

TEST(Plots, CurveCsvAndCategoricalAxis) {
  const fs::path dir = scratch_dir("plot_curve");
  {
    std::ofstream f(dir / "train_loss.csv");
    f << "epoch,loss\n1,3.0\n2,1.5\n3,0.9\n";
  }
  write_metrics_csv(dir / "eval.csv", {{"20", "cdm", 1.0, 0.9, 1.1, 8}, {"20", "cdm@B1", 0.8, 0.7, 0.9, 8}});
  const auto out = emit_plots({dir / "train_loss.csv", dir / "eval.csv"}, dir / "fig");
  EXPECT_EQ(out.size(), 2u);
  for (const auto& p : out) EXPECT_GT(fs::file_size(p), 0u);
}

TEST(Plots, MalformedInputWritesNothing) {
  const fs::path dir = scratch_dir("plot_bad");
  write_metrics_csv(dir / "good.csv", {{"0", "cdm", 1.0, 0.9, 1.1, 16}});
  {
    std::ofstream f(dir / "bad.csv");
    f << kMetricsHeader << "\n0,cdm,abc,0,1,2\n";
  }
  EXPECT_THROW(emit_plots({dir / "good.csv", dir / "bad.csv"}, dir / "fig"), csv_error);
  EXPECT_FALSE(fs::exists(dir / "fig"));
  {
    std::ofstream f(dir / "short.csv");
    f << kMetricsHeader << "\n0,cdm,1\n";
  }
  EXPECT_THROW(read_metrics_csv(dir / "short.csv"), csv_error);
  EXPECT_THROW(read_curve_csv(dir / "missing.csv"), csv_error);
}

TEST(Cli, ExitCodes) {
  const fs::path dir = scratch_dir("cli");
  const fs::path log = dir / "log.txt";
  EXPECT_EQ(run_cli("", log), 2);
  EXPECT_EQ(run_cli("pipeline --config " + (dir / "nope.json").string() + " --out " + (dir / "o").string(), log), 2);
  const std::string text = slurp(log);
  EXPECT_NE(text.find("nope.json"), std::string::npos);
  EXPECT_NE(text.find("Usage"), std::string::npos);
  EXPECT_EQ(run_cli("pipeline --out " + (dir / "o").string(), log), 2);
  EXPECT_EQ(run_cli("pipeline --profile galactic", log), 2);
  EXPECT_EQ(run_cli("frobnicate", log), 2);
  EXPECT_EQ(run_cli("--help", log), 0);
  EXPECT_EQ(run_cli("eval --profile smoke --out " + (dir / "empty").string(), log), 3);
  {
    std::ofstream f(dir / "bad.csv");
    f << "garbage\n";
  }
  EXPECT_EQ(run_cli("plot --profile smoke --csv " + (dir / "bad.csv").string() + " --out " + (dir / "p").string(), log),
            3);
}
