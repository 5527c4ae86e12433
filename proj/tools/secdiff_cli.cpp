// Command-line front end: gen-data, train, finetune, eval, sweep, plot, pipeline.

#include "secdiff/experiments.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "runs/default";
  std::string profile;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "JSON config file (overrides profile defaults)");
  sub->add_option("--seed", c.seed, "root seed");
  sub->add_option("--out", c.out, "output directory")->capture_default_str();
  sub->add_option("--profile", c.profile, "smoke | desk | paper")->check(CLI::IsMember({"smoke", "desk", "paper"}));
}

void log_line(const std::string& s) { std::cerr << s << std::endl; }

}  // namespace

int main(int argc, char** argv) {
  using namespace secdiff;
  CLI::App app{"Conditional diffusion beamforming toolkit for secure MU-MISO downlinks"};
  app.require_subcommand(1);
  Common common;

  auto* gen = app.add_subcommand("gen-data", "generate and label the training dataset");
  auto* tr = app.add_subcommand("train", "stage-1 denoiser training");
  auto* ft = app.add_subcommand("finetune", "secrecy-guided fine-tuning of the trained model");
  auto* ev = app.add_subcommand("eval", "score all methods on the held-out channel set");
  auto* sw = app.add_subcommand("sweep", "power / eves / users / noise sweeps");
  auto* pl = app.add_subcommand("plot", "render SVG figures from metric and curve CSVs");
  auto* pp = app.add_subcommand("pipeline", "gen-data, train, finetune, eval, sweep and plot in one run");
  for (auto* s : {gen, tr, ft, ev, sw, pl, pp}) add_common(s, common);

  std::string backbone = "unet";
  tr->add_option("--backbone", backbone, "unet | mlp")->check(CLI::IsMember({"unet", "mlp"}));
  std::vector<std::string> axes;
  sw->add_option("--axis", axes, "axes to run (default: all configured)")
      ->check(CLI::IsMember({"power", "eves", "users", "noise"}));
  std::vector<std::string> csvs;
  pl->add_option("--csv", csvs, "CSV files (default: every CSV under <out>/metrics and <out>/curves)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (pp->parsed() && common.config.empty() && common.profile.empty())
      throw config_error("pipeline needs --config <path> or --profile {smoke|desk|paper}");
    const ExperimentConfig ec = load_experiment_config(common.config, common.profile, common.seed);
    const Layout out{common.out};
    std::filesystem::create_directories(out.root);

    if (gen->parsed()) stage_gen_data(ec, out, log_line);
    if (tr->parsed()) stage_train(ec, out, backbone_from_string(backbone), log_line);
    if (ft->parsed()) stage_finetune(ec, out, log_line);
    if (ev->parsed()) stage_eval(ec, out, log_line);
    if (sw->parsed()) {
      std::vector<SweepAxis> a;
      for (const auto& s : axes) a.push_back(axis_from_string(s));
      if (a.empty())
        for (const auto& s : ec.sweeps) a.push_back(s.axis);
      stage_sweep(ec, out, a, log_line);
    }
    if (pl->parsed()) {
      std::vector<std::filesystem::path> paths(csvs.begin(), csvs.end());
      for (const auto& p : stage_plot(out, paths)) std::cout << p.string() << '\n';
    }
    if (pp->parsed()) pipeline(ec, out, log_line);
  } catch (const config_error& e) {
    std::cerr << "config error: " << e.what() << "\n\n" << app.help();
    return 2;
  } catch (const stage_error& e) {
    std::cerr << "stage failed: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "failed: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
