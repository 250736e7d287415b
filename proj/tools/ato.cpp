#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>

#include "CLI11.hpp"
#include "ato/harness.hpp"

using namespace ato;

namespace {

struct CommonArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  int threads = static_cast<int>(std::thread::hardware_concurrency());
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config, "experiment config file")->required();
  cmd->add_option("--seed", args.seed, "override the base seed");
  cmd->add_option("--out", args.out, "output path");
  cmd->add_option("--threads", args.threads, "worker pool size");
}

void print_rows(const std::vector<ExperimentRow>& rows, std::ostream& os) {
  int classes = 0;
  for (const auto& r : rows) classes = std::max(classes, (int)r.class_leads.size());
  os << csv_header(classes) << "\n";
  for (const auto& r : rows) os << to_csv(r) << "\n";
}

int run_cases(const CommonArgs& args, bool bounds_only, bool to_file) {
  const ExperimentConfig cfg = parse_config(args.config);
  RunOptions ro;
  ro.threads = std::max(args.threads, 1);
  ro.seed_override = args.seed;
  ro.lower_bound_only = bounds_only;

  int classes = 0;
  {
    // class count from the first case, for the header
    const AtoSystem sys = validate_system(cfg.raw_system(cfg.cases.at(0)));
    classes = sys.num_classes();
  }

  std::ofstream file;
  if (to_file && !args.out.empty()) {
    file.open(args.out);
    if (!file) throw ConfigError("cannot open output file: " + args.out);
    file << csv_header(classes) << "\n";
    ro.log = &file;
    const auto rows = run_experiment(cfg, ro);
    std::cout << "wrote " << rows.size() << " rows to " << args.out << "\n";
    return 0;
  }
  const auto rows = run_experiment(cfg, ro);
  print_rows(rows, std::cout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stochastic-program bounds, policy simulation and optimality-gap "
               "experiments for assemble-to-order systems"};
  app.require_subcommand(1);

  CommonArgs lb_args, sim_args, exp_args, trk_args;
  CLI::App* lb = app.add_subcommand("lower-bound", "compute cost lower bounds per case");
  add_common(lb, lb_args);
  CLI::App* sim = app.add_subcommand("simulate", "simulate the policy and report cost");
  add_common(sim, sim_args);
  CLI::App* exp =
      app.add_subcommand("experiment", "bounds, simulation and gaps, written as csv");
  add_common(exp, exp_args);
  CLI::App* trk = app.add_subcommand("tracking", "tracking-model convergence sweep");
  add_common(trk, trk_args);

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand(lb)) return run_cases(lb_args, true, false);
    if (app.got_subcommand(sim)) return run_cases(sim_args, false, false);
    if (app.got_subcommand(exp)) {
      if (exp_args.out.empty()) throw ConfigError("experiment needs --out for the csv");
      return run_cases(exp_args, false, true);
    }
    if (app.got_subcommand(trk)) {
      const ExperimentConfig cfg = parse_config(trk_args.config);
      RunOptions ro;
      ro.threads = std::max(trk_args.threads, 1);
      ro.seed_override = trk_args.seed;
      const auto rows = run_tracking_experiment(cfg, ro);
      if (!trk_args.out.empty()) {
        write_tracking_csv(trk_args.out, rows);
        std::cout << "wrote " << rows.size() << " rows to " << trk_args.out << "\n";
      } else {
        std::cout << "L,mean_sup_gap,ci_low,ci_high,reps\n";
        for (const auto& r : rows)
          std::cout << r.L << "," << r.mean_sup_gap << "," << r.ci_lo << "," << r.ci_hi
                    << "," << r.reps << "\n";
      }
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const AuditError& e) {
    std::cerr << "invariant audit failure: " << e.what() << "\n";
    return 4;
  } catch (const SolverError& e) {
    std::cerr << "solver error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
