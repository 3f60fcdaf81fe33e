// Command-line driver: run, sweep, plot, resume.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedcon/fedcon.hpp"

namespace {

enum Exit : int { kOk = 0, kUsage = 1, kConfig = 2, kData = 3, kTraining = 4, kIo = 5, kInternal = 6 };

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::string out;
  std::int64_t seed = -1;
  bool quiet = false;
};

void add_common(CLI::App* app, Common& c, bool with_config = true) {
  if (with_config) app->add_option("--config", c.config, "Config file (key = value lines)")->check(CLI::ExistingFile);
  app->add_option("--set", c.sets, "Override key=value (repeatable)")->allow_extra_args(false);
  app->add_option("--out", c.out, "Output directory");
  app->add_option("--seed", c.seed, "Master seed")->check(CLI::NonNegativeNumber);
  app->add_flag("--quiet", c.quiet, "Suppress per-round progress");
}

fedcon::ExperimentConfig build_config(const Common& c) {
  std::vector<std::string> overrides = c.sets;
  if (!c.out.empty()) overrides.push_back("run.out=" + c.out);
  if (c.seed >= 0) overrides.push_back("run.seed=" + std::to_string(c.seed));
  return c.config.empty() ? fedcon::parse_config("", overrides) : fedcon::load_config(c.config, overrides);
}

fedcon::RunHooks progress(bool quiet, std::uint64_t total) {
  fedcon::RunHooks hooks;
  if (quiet) return hooks;
  hooks.on_round = [total](const fedcon::RoundReport& r, double seconds) {
    std::printf("round %llu/%llu  server_ce=%.4f  consistency=%.4f", (unsigned long long)r.round,
                (unsigned long long)total, r.server.mean_ce, r.server.mean_consistency);
    if (r.accuracy) std::printf("  acc=%.4f", *r.accuracy);
    std::printf("  (%.1fs)\n", seconds);
    std::fflush(stdout);
  };
  return hooks;
}

void report(const fedcon::RunResult& r) {
  std::printf("completed %llu rounds in %s", (unsigned long long)r.rounds_completed, r.dir.string().c_str());
  if (r.final_accuracy) std::printf("; final accuracy %.4f", *r.final_accuracy);
  std::printf("\n");
}

int fail(const char* category, const std::string& msg, int code) {
  std::fprintf(stderr, "fedcon: error [%s]: %s\n", category, msg.c_str());
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated semi-supervised training with contrastive online/target networks"};
  app.require_subcommand(1);

  Common run_opts, sweep_opts, resume_opts;
  auto* run = app.add_subcommand("run", "Run one experiment");
  add_common(run, run_opts);

  auto* sweep = app.add_subcommand("sweep", "Run one experiment per value of a config key");
  add_common(sweep, sweep_opts);
  std::string axis;
  std::vector<std::string> values;
  sweep->add_option("--axis", axis, "Key or alias to vary (gamma, r, E, BS_L, tau, mu, ...)")->required();
  sweep->add_option("--values", values, "Comma-separated values")->required()->delimiter(',');

  auto* plot = app.add_subcommand("plot", "Render SVG curves from a run or sweep directory");
  std::string metrics_source, plot_out;
  plot->add_option("--metrics", metrics_source, "Run directory, sweep directory or metrics.csv")->required();
  plot->add_option("--out", plot_out, "Directory for the SVG files (defaults to the source directory)");

  auto* resume = app.add_subcommand("resume", "Continue a run directory from its last checkpoint");
  add_common(resume, resume_opts, false);
  resume->get_option("--out")->required()->description("Run directory to resume");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    if (*run) {
      const auto cfg = build_config(run_opts);
      report(fedcon::run_experiment(cfg, progress(run_opts.quiet, cfg.R_G)));
    } else if (*sweep) {
      const auto base = build_config(sweep_opts);
      auto hooks = progress(sweep_opts.quiet, base.R_G);
      const auto points = fedcon::run_sweep(base, axis, values, hooks, [&](const fedcon::SweepPoint& p) {
        std::printf("%s=%s done -> %s\n", axis.c_str(), p.value.c_str(), p.dir.string().c_str());
      });
      std::printf("\n%-12s %s\n", axis.c_str(), "final_accuracy");
      for (const auto& p : points)
        std::printf("%-12s %s\n", p.value.c_str(),
                    p.final_accuracy ? std::to_string(*p.final_accuracy).c_str() : "n/a");
    } else if (*plot) {
      const std::filesystem::path src = metrics_source;
      const std::filesystem::path out =
          !plot_out.empty() ? std::filesystem::path(plot_out)
                            : (std::filesystem::is_regular_file(src) ? src.parent_path() : src);
      const auto outcome = fedcon::emit_plots(src, out);
      for (const auto& w : outcome.warnings) std::fprintf(stderr, "fedcon: warning: %s\n", w.c_str());
      for (const auto& f : outcome.written) std::printf("wrote %s\n", f.string().c_str());
    } else if (*resume) {
      std::vector<std::string> overrides = resume_opts.sets;
      if (resume_opts.seed >= 0) overrides.push_back("run.seed=" + std::to_string(resume_opts.seed));
      const auto r = fedcon::resume_experiment(resume_opts.out, overrides, progress(resume_opts.quiet, 0));
      report(r);
    }
  } catch (const fedcon::ConfigError& e) {
    return fail("config", e.what(), kConfig);
  } catch (const fedcon::SplitError& e) {
    return fail("config", e.what(), kConfig);
  } catch (const fedcon::IngestionError& e) {
    return fail("data", e.what(), kData);
  } catch (const fedcon::FormatError& e) {
    return fail("data", e.what(), kData);
  } catch (const fedcon::TrainingError& e) {
    return fail("training", e.what(), kTraining);
  } catch (const fedcon::CheckpointError& e) {
    return fail("io", e.what(), kIo);
  } catch (const fedcon::MetricsError& e) {
    return fail("io", e.what(), kIo);
  } catch (const std::filesystem::filesystem_error& e) {
    return fail("io", e.what(), kIo);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), kInternal);
  }
  return kOk;
}
