// Command-line front end: fit, simulate, bootstrap, report.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "lvmoe/errors.hpp"
#include "lvmoe/io.hpp"
#include "lvmoe/simulation.hpp"

namespace {

using namespace lvmoe;

struct DataArgs {
  std::string data;
  std::string roles;
  std::string versions;
  double rare_threshold = 0.05;
};

struct FitArgs {
  DataArgs in;
  double tol = 1e-6;
  int max_iter = 500;
  int restarts = 10;
  std::uint64_t seed = 0;
  std::optional<double> floor;
  std::string contrasts = "within";
  std::string out;
  unsigned threads = 0;
  int resamples = 100;
  double level = 0.95;
};

// A single count applies to every treatment.
VersionStructure versions_for(const std::string& list, int treatments) {
  VersionStructure s = parse_versions(list);
  if (s.num_treatments() == 1 && treatments > 1)
    return VersionStructure(std::vector<int>(static_cast<std::size_t>(treatments),
                                             s.versions(0)));
  return s;
}

ContrastSet contrast_set(const std::string& name) {
  if (name == "none") return ContrastSet::None;
  if (name == "within") return ContrastSet::WithinTreatment;
  if (name == "all") return ContrastSet::All;
  throw InputError("unknown contrast set '" + name + "'");
}

void add_data_options(CLI::App* cmd, DataArgs& a) {
  cmd->add_option("--data", a.data, "delimited input table")->required();
  cmd->add_option("--roles", a.roles, "JSON file with column roles")->required();
  cmd->add_option("--versions", a.versions, "versions per treatment, e.g. 2,2,3")
      ->required();
  cmd->add_option("--rare-threshold", a.rare_threshold,
                  "drop categories at or below this share in any treatment");
}

void add_fit_options(CLI::App* cmd, FitArgs& a) {
  cmd->add_option("--tol", a.tol, "EM convergence tolerance");
  cmd->add_option("--max-iter", a.max_iter, "EM iteration cap");
  cmd->add_option("--restarts", a.restarts, "EM restarts per treatment");
  cmd->add_option("--seed", a.seed, "random seed");
  cmd->add_option("--floor", a.floor, "propensity floor in [0, 0.1)");
  cmd->add_option("--contrasts", a.contrasts, "none | within | all");
  cmd->add_option("--threads", a.threads, "worker threads, 0 = all cores");
  cmd->add_option("--out", a.out, "output directory")->required();
}

RunConfig run_config(const FitArgs& a, int treatments) {
  RunConfig c;
  c.versions = versions_for(a.in.versions, treatments);
  c.em.tol = a.tol;
  c.em.max_iter = a.max_iter;
  c.em.restarts = a.restarts;
  c.seed = a.seed;
  c.floor = a.floor;
  c.contrasts = contrast_set(a.contrasts);
  c.out_dir = a.out;
  c.threads = a.threads;
  c.resamples = a.resamples;
  c.level = a.level;
  return c;
}

PreprocessResult load(const DataArgs& a) {
  const Roles roles = load_roles(a.roles);
  return preprocess(ingest(a.data, roles), a.rare_threshold);
}

void log_preprocess(const PreprocessReport& r) {
  std::cerr << "rows: " << r.n_input << " read, " << r.n_dropped_missing
            << " dropped (missing), " << r.n_dropped_rare
            << " dropped (rare categories), " << r.kept_rows.size() << " used\n";
  for (std::size_t t = 0; t < r.treatment_levels.size(); ++t)
    std::cerr << "treatment " << t << " = " << r.treatment_levels[t] << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent treatment versions: mixture-of-experts EM and IPW estimation"};
  app.require_subcommand(1);

  FitArgs fit;
  auto* fit_cmd = app.add_subcommand("fit", "fit the model and estimate every psi");
  add_data_options(fit_cmd, fit.in);
  add_fit_options(fit_cmd, fit);

  FitArgs boot;
  auto* boot_cmd =
      app.add_subcommand("bootstrap", "point estimates with percentile intervals");
  add_data_options(boot_cmd, boot.in);
  add_fit_options(boot_cmd, boot);
  boot_cmd->add_option("--B", boot.resamples, "bootstrap resamples");
  boot_cmd->add_option("--level", boot.level, "interval level");

  SimConfig sim;
  std::string sim_versions = "2,2";
  std::string sim_out;
  bool oracle = false;
  unsigned sim_threads = 0;
  int sim_restarts = EmConfig{}.restarts;
  auto* sim_cmd = app.add_subcommand("simulate", "Monte Carlo study on synthetic data");
  sim_cmd->add_option("--n", sim.n, "units per replicate");
  sim_cmd->add_option("--p", sim.p, "covariates");
  sim_cmd->add_option("--snr", sim.snr, "signal-to-noise ratio");
  sim_cmd->add_option("--treatments", sim.treatments, "number of treatments J");
  sim_cmd->add_option("--versions", sim_versions, "versions per treatment");
  sim_cmd->add_option("--reps", sim.reps, "replicates");
  sim_cmd->add_option("--seed", sim.seed, "random seed");
  sim_cmd->add_option("--restarts", sim_restarts, "EM restarts per treatment");
  sim_cmd->add_option("--threads", sim_threads, "worker threads, 0 = all cores");
  sim_cmd->add_flag("--oracle", oracle, "plug in the true parameters instead of EM");
  sim_cmd->add_option("--out", sim_out, "output directory")->required();

  std::string report_in;
  std::string report_format = "tabular";
  std::string report_out;
  auto* rep_cmd = app.add_subcommand("report", "convert a saved report");
  rep_cmd->add_option("--in", report_in, "report file (tabular or structured)")
      ->required();
  rep_cmd->add_option("--format", report_format, "tabular | structured");
  rep_cmd->add_option("--out", report_out, "output path, default standard output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*fit_cmd) {
      const PreprocessResult pre = load(fit.in);
      log_preprocess(pre.report);
      const RunConfig cfg = run_config(fit, pre.data.num_treatments);
      run_fit(cfg, pre.data, &pre.report);
    } else if (*boot_cmd) {
      const PreprocessResult pre = load(boot.in);
      log_preprocess(pre.report);
      const RunConfig cfg = run_config(boot, pre.data.num_treatments);
      const BootstrapRun run = run_bootstrap(cfg, pre.data, &pre.report);
      std::cerr << "bootstrap: " << run.bootstrap.redraws
                << " redraws for missing treatments, " << run.bootstrap.failures
                << " failed fits redrawn\n";
    } else if (*sim_cmd) {
      sim.versions = versions_for(sim_versions, sim.treatments);
      MonteCarloOptions opts;
      opts.em.restarts = sim_restarts;
      opts.oracle = oracle;
      opts.threads = sim_threads;
      const MonteCarloResult result = monte_carlo(sim, opts);
      for (const auto& msg : result.failure_messages) std::cerr << msg << "\n";
      const std::filesystem::path out(sim_out);
      write_metrics(result, out / "metrics.tsv");
      write_replicates(result, out / "replicates.tsv");
    } else if (*rep_cmd) {
      const EstimandReport report = load_report(report_in);
      const ReportFormat format = report_format_from_string(report_format);
      if (report_out.empty())
        std::cout << format_report(report, format);
      else
        emit_report(report, format, report_out);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
