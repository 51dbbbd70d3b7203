// Command-line driver: generate instances, run batch experiments, plan from
// saved estimates, audit artifacts, and render reports.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "sweet/functional.hpp"
#include "sweet/harness.hpp"
#include "sweet/serialize.hpp"
#include "sweet/solver.hpp"

namespace fs = std::filesystem;
using namespace sweet;

namespace {

harness::ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path + ": cannot open config");
  return harness::parse_config(in, path);
}

int cmd_gen_env(const std::string& config_path, const std::string& out_dir,
                int seed) {
  harness::ExperimentConfig cfg = load_config(config_path);
  harness::Environment env = harness::gen_env(cfg, seed);
  fs::create_directories(out_dir);
  save_file(out_dir + "/env.txt", env.mdp,
            [](std::ostream& o, const TabularMdp& m) { write_mdp(o, m); });
  save_file(out_dir + "/cost.txt", env.cost,
            [](std::ostream& o, const Utility& u) { write_utility(o, u); });
  save_file(out_dir + "/baseline.txt", env.baseline,
            [](std::ostream& o, const MarkovPolicy& p) { write_policy(o, p); });
  std::ofstream meta(out_dir + "/meta.txt");
  meta << "# generated instance metadata\n";
  meta << "safety_margin " << format_double(env.safety_margin) << "\n";
  meta << "delta_min " << format_double(env.delta_min) << "\n";
  std::cout << "instance written to " << out_dir << " (Delta="
            << format_double(env.safety_margin)
            << ", Delta_min=" << format_double(env.delta_min) << ")\n";
  return 0;
}

int cmd_run(const std::string& config_path, const std::string& out_override,
            const std::vector<int>& seed_override, int worker_override) {
  harness::ExperimentConfig cfg = load_config(config_path);
  if (!out_override.empty()) cfg.out_dir = out_override;
  if (!seed_override.empty()) cfg.seeds = seed_override;
  if (worker_override > 0) cfg.workers = worker_override;
  harness::ReportSummary summary = harness::run_experiment(cfg);
  for (const auto& s : summary.seeds) {
    std::cout << "seed " << s.seed << ": ";
    if (!s.completed) {
      std::cout << "FAILED (" << s.error << ")\n";
      continue;
    }
    std::cout << s.episodes << " episodes, "
              << (s.terminated ? "terminated" : "cap reached") << ", "
              << s.violations << " violations\n";
  }
  std::cout << "max violations: " << summary.max_violations
            << ", median episodes: " << summary.median_episodes << "\n";
  bool ok = summary.all_completed && summary.all_audits_pass;
  std::cout << (ok ? "OK" : "FAILED") << "\n";
  return ok ? 0 : 1;
}

int cmd_plan(const std::string& model_path, const std::string& bonus_path,
             const std::string& reward_path, const std::string& cost_path,
             double tau_star, double alpha, double offset, bool sqrt_form,
             const std::string& out_path) {
  TabularMdp model = load_file(model_path, [](std::istream& i, const std::string& n) {
    return read_mdp(i, n);
  });
  SaTable bonus = load_file(bonus_path, [](std::istream& i, const std::string& n) {
    return read_sa_table(i, n, "sweet/sa_table");
  });
  Utility reward = load_file(reward_path, [](std::istream& i, const std::string& n) {
    return read_utility(i, n);
  });
  Utility cost = load_file(cost_path, [](std::istream& i, const std::string& n) {
    return read_utility(i, n);
  });
  TruncatedValueUncertainty ufun(
      bonus, alpha,
      sqrt_form ? TruncatedValueUncertainty::Form::Sqrt
                : TruncatedValueUncertainty::Form::Linear,
      sqrt_form ? 4.0 : 1.0, offset);
  SolveResult sol = plan(model, reward, cost, tau_star, ufun);
  std::cout << "status " << to_string(sol.status) << " objective "
            << format_double(sol.objective) << " constraint "
            << format_double(sol.constraint_value) << " residual "
            << format_double(sol.residual) << "\n";
  if (!out_path.empty())
    save_file(out_path, sol.markov,
              [](std::ostream& o, const MarkovPolicy& p) { write_policy(o, p); });
  return sol.residual <= 1e-6 ? 0 : 1;
}

int cmd_audit(const std::string& run_dir) {
  std::ifstream cin(run_dir + "/config.txt");
  if (!cin) throw ParseError(run_dir + "/config.txt: cannot open");
  harness::ExperimentConfig cfg =
      harness::parse_config(cin, run_dir + "/config.txt");
  int total_violations = 0;
  int audited = 0;
  for (const auto& entry : fs::directory_iterator(run_dir)) {
    if (!entry.is_directory()) continue;
    std::string name = entry.path().filename().string();
    if (name.rfind("seed_", 0) != 0) continue;
    int v = harness::audit_artifacts(entry.path(), cfg.mode, cfg.tau, cfg.kappa);
    std::cout << name << ": " << v << " violations\n";
    total_violations += v;
    ++audited;
  }
  if (audited == 0) throw ParseError(run_dir + ": no seed_* directories");
  std::cout << "total violations: " << total_violations << "\n";
  return total_violations == 0 ? 0 : 1;
}

int cmd_report(const std::string& run_dir) {
  std::ostringstream table;
  harness::report(run_dir, table);
  std::cout << table.str();
  std::ofstream out(fs::path(run_dir) / "report.txt");
  out << table.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"safe reward-free exploration toolkit"};
  app.require_subcommand(1);

  std::string config_path, out_dir, run_dir;
  std::vector<int> seeds;
  int seed = 1;
  int workers = 0;

  auto* gen = app.add_subcommand("gen-env", "generate one instance");
  gen->add_option("--config", config_path, "config file")->required();
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->add_option("--seed", seed, "instance seed");

  auto* run = app.add_subcommand("run", "run the batch experiment");
  run->add_option("--config", config_path, "config file")->required();
  run->add_option("--out", out_dir, "output directory override");
  run->add_option("--seeds", seeds, "seed list override");
  run->add_option("--workers", workers, "worker count override");

  std::string model_path, bonus_path, reward_path, cost_path, policy_out;
  double tau_star = 0.5, alpha = 1.0, offset = 0.0;
  bool sqrt_form = false;
  auto* planc = app.add_subcommand("plan", "plan from a saved estimate");
  planc->add_option("--model", model_path, "estimated model file")->required();
  planc->add_option("--bonus", bonus_path, "bonus table file")->required();
  planc->add_option("--reward", reward_path, "reward utility file")->required();
  planc->add_option("--cost", cost_path, "cost utility file")->required();
  planc->add_option("--tau-star", tau_star, "planning threshold")->required();
  planc->add_option("--alpha", alpha, "truncated recursion alpha");
  planc->add_option("--offset", offset, "additive uncertainty offset");
  planc->add_flag("--sqrt", sqrt_form, "use 4*sqrt(Vbar) uncertainty");
  planc->add_option("--out", policy_out, "write the planned policy here");

  auto* audit = app.add_subcommand("audit", "re-audit saved run artifacts");
  audit->add_option("--run", run_dir, "run directory")->required();

  auto* rep = app.add_subcommand("report", "tables and plot data from a run");
  rep->add_option("--run", run_dir, "run directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_env(config_path, out_dir, seed);
    if (run->parsed()) return cmd_run(config_path, out_dir, seeds, workers);
    if (planc->parsed())
      return cmd_plan(model_path, bonus_path, reward_path, cost_path, tau_star,
                      alpha, offset, sqrt_form, policy_out);
    if (audit->parsed()) return cmd_audit(run_dir);
    if (rep->parsed()) return cmd_report(run_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
