// safemon: collect datasets, train monitors, run experiments, and serve live sessions.

#include <pthread.h>

#include <csignal>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "safemon/safemon.hpp"
#include "safemon/server.hpp"

namespace fs = std::filesystem;
using namespace safemon;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config, "JSON configuration file (defaults apply when omitted)");
  cmd->add_option("-s,--seed", c.seed, "master seed (overrides experiment.master_seed)");
}

Config resolve(const Common& c) {
  Config cfg = c.config.empty() ? Config{} : load_config(c.config);
  if (c.seed) cfg.experiment.master_seed = *c.seed;
  cfg.validate();
  return cfg;
}

void log_line(const std::string& s) { std::cerr << s << "\n"; }

void write_out(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  io::write_file(path, text);
  log_line("wrote " + path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conformal runtime safety monitor for a lateral-directional aircraft model"};
  app.require_subcommand(1);

  Common common;

  auto* collect = app.add_subcommand("collect", "simulate rollouts and write a dataset bundle");
  add_common(collect, common);
  std::string bundle_out = "bundle.json";
  collect->add_option("-o,--out", bundle_out, "bundle file");

  auto* train = app.add_subcommand("train", "fit the predictor and write a monitor artifact");
  add_common(train, common);
  std::string bundle_in, monitor_out = "monitor.json", method_str = "full";
  train->add_option("-b,--bundle", bundle_in, "dataset bundle")->required()->check(CLI::ExistingFile);
  train->add_option("-m,--method", method_str, "full | no_pred | pca | current_ny | pred_ny");
  train->add_option("-o,--out", monitor_out, "monitor artifact");

  auto* eval = app.add_subcommand("eval", "evaluate one monitor on fresh test trajectories");
  add_common(eval, common);
  std::string monitor_in, results_out = "-";
  eval->add_option("-M,--monitor", monitor_in, "monitor artifact")->required();
  eval->add_option("-o,--out", results_out, "results table (CSV, '-' for stdout)");

  auto* experiment = app.add_subcommand("experiment", "full sweep over fits, methods and epsilon grid");
  add_common(experiment, common);
  std::string exp_out = "results.csv", summary_out;
  experiment->add_option("-o,--out", exp_out, "results table (CSV)");
  experiment->add_option("--summary", summary_out, "summary JSON");

  auto* health = app.add_subcommand("health", "check the unsafe fraction of the scenario");
  add_common(health, common);
  std::size_t health_n = 1000;
  health->add_option("-n,--samples", health_n, "rollouts (>= 100)");

  auto* serve = app.add_subcommand("serve", "run the live monitoring service");
  add_common(serve, common);
  std::string serve_monitor, address = "127.0.0.1";
  unsigned short port = 8080;
  unsigned threads = 2;
  serve->add_option("-M,--monitor", serve_monitor, "monitor artifact")->required();
  serve->add_option("--address", address, "listen address");
  serve->add_option("-p,--port", port, "listen port (0 = any)");
  serve->add_option("--threads", threads, "worker threads");

  auto* plot = app.add_subcommand("plot", "render miss-rate and power panels from a results table");
  add_common(plot, common);
  std::string plot_in = "results.csv", plot_dir = ".";
  plot->add_option("-r,--results", plot_in, "results table")->check(CLI::ExistingFile);
  plot->add_option("-d,--dir", plot_dir, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    const Config cfg = resolve(common);

    if (*collect) {
      const auto b = collect_dataset(cfg.plant, cfg.dataset, cfg.experiment.n_unsafe, cfg.experiment.master_seed);
      save_bundle(b, bundle_out);
      log_line(fmt::format("{} rollouts, {} unsafe, {} safe observations, {} too-early discarded", b.rollouts,
                           b.unsafe_count(), b.safe.size(), b.too_early_discarded));
    } else if (*train) {
      const auto b = load_bundle(bundle_in);
      MethodSpec spec{parse_method(method_str)};
      if (!cfg.experiment.methods.empty()) {
        spec.pca_dims = cfg.experiment.methods.front().pca_dims;
        spec.scale_features = cfg.experiment.methods.front().scale_features;
      }
      std::optional<LinearPredictor> predictor;
      if (spec.needs_predictor()) {
        predictor = fit_least_squares(b.safe);
        log_line(fmt::format("predictor: {} samples, condition {:.3g}{}", predictor->summary.pair_count,
                             predictor->summary.condition_number, predictor->summary.ridge_applied ? " (ridge)" : ""));
      }
      const auto m = build_monitor(spec, b, predictor ? &*predictor : nullptr);
      save_monitor(m, monitor_out);
      log_line(fmt::format("{} monitor calibrated on N={}", m.meta().method, m.calibration_size()));
    } else if (*eval) {
      const auto m = load_monitor(monitor_in);
      check_compatible(m, cfg.plant, cfg.dataset);
      const auto pool = make_test_pool(cfg.plant, cfg.experiment.test_trajectories, cfg.experiment.master_seed);
      const auto rows = evaluate_monitor(m, pool, cfg.experiment.epsilon_grid, 0);
      write_out(results_out, results_csv(rows, {}));
    } else if (*experiment) {
      const auto res = run_experiment(cfg, log_line);
      write_out(exp_out, results_csv(res.detail, res.summary));
      if (!summary_out.empty()) write_out(summary_out, io::dump(summary_json(res, cfg)));
    } else if (*health) {
      const auto r = scenario_health(cfg.plant, cfg.dataset, health_n, cfg.experiment.master_seed);
      std::cout << io::dump(to_json(r));
      for (const auto& w : r.warnings) log_line("warning: " + w);
    } else if (*serve) {
      auto monitor = std::make_shared<const CalibratedMonitor>(load_monitor(serve_monitor));
      auto registry = std::make_shared<SessionRegistry>(monitor, cfg.plant, cfg.dataset);
      MonitorServer server(registry, address, port);
      log_line(fmt::format("serving {} monitor on http://{}:{}/api/v1", monitor->meta().method, address, server.port()));
      sigset_t set;
      sigemptyset(&set);
      sigaddset(&set, SIGINT);
      sigaddset(&set, SIGTERM);
      pthread_sigmask(SIG_BLOCK, &set, nullptr);
      server.start(threads);
      int sig = 0;
      sigwait(&set, &sig);
      server.stop();
    } else if (*plot) {
      const auto rows = parse_results_csv(io::read_file(plot_in));
      fs::create_directories(plot_dir);
      write_out((fs::path(plot_dir) / "miss_rate.svg").string(), render_panel_svg(rows, PlotPanel::miss_rate));
      write_out((fs::path(plot_dir) / "power.svg").string(), render_panel_svg(rows, PlotPanel::power));
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.error_class());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
