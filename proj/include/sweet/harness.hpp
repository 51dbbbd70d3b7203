#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "sweet/lowrank.hpp"
#include "sweet/mdp_ops.hpp"
#include "sweet/oracle.hpp"
#include "sweet/prng.hpp"
#include "sweet/serialize.hpp"
#include "sweet/solver.hpp"
#include "sweet/tabular_sweet.hpp"

// Batch experiment driver: instance generation, end-to-end exploration runs,
// exact safety auditing against the true kernel, planning-vs-oracle
// comparisons, and artifact emission. Only this module ever holds both the
// true kernel and the learner's outputs.
namespace sweet::harness {

namespace fs = std::filesystem;

struct PlanningTaskSpec {
  double tau_star = 0.5;
  bool reuse_exploration_cost = true;
  std::uint64_t reward_tag = 1;
  std::uint64_t cost_tag = 0;
};

struct ExperimentConfig {
  int version = 1;
  std::string mode = "tabular";  // tabular | lowrank
  int num_states = 5;
  int num_actions = 3;
  int horizon = 4;
  int dim = 2;
  int class_size = 4;
  std::uint64_t gen_seed = 20240901ull;
  double epsilon = 0.1;
  double delta = 0.1;
  double tau = 0.5;
  double kappa = 0.1;
  int episode_cap = 5000;
  int iteration_cap = 2000;
  double beta3 = 1.0;
  bool zero_cost = false;  // constraint-free degeneration
  int workers = 1;
  std::string out_dir = "out";
  std::vector<int> seeds = {1};
  std::vector<PlanningTaskSpec> tasks;

  void validate() const {
    if (mode != "tabular" && mode != "lowrank")
      throw ParameterError("ExperimentConfig: unknown mode '" + mode + "'");
    if (tau <= 0.0 || tau > 1.0)
      throw ParameterError("ExperimentConfig: tau outside (0,1]");
    if (kappa <= 0.0 || kappa >= tau)
      throw ParameterError("ExperimentConfig: kappa outside (0,tau)");
    for (const auto& t : tasks)
      if (t.tau_star <= 0.0 || t.tau_star > 1.0)
        throw ParameterError("ExperimentConfig: task tau_star outside (0,1]");
    if (seeds.empty()) throw ParameterError("ExperimentConfig: no seeds");
    if (workers < 1) throw ParameterError("ExperimentConfig: workers < 1");
  }

  static std::vector<PlanningTaskSpec> default_tasks(double tau) {
    // One task reuses the exploration constraint; the others change both the
    // cost function and the threshold.
    return {{tau, true, 1, 0}, {0.7, false, 2, 1}, {0.6, false, 3, 2}};
  }
};

// ---- config file ----

inline void write_config(std::ostream& out, const ExperimentConfig& c) {
  out << "# sweet experiment config; 'key value' per line\n";
  out << "version " << c.version << "\n";
  out << "mode " << c.mode << "\n";
  out << "S " << c.num_states << "\n";
  out << "A " << c.num_actions << "\n";
  out << "H " << c.horizon << "\n";
  out << "d " << c.dim << "\n";
  out << "class_size " << c.class_size << "\n";
  out << "gen_seed " << c.gen_seed << "\n";
  out << "epsilon " << format_double(c.epsilon) << "\n";
  out << "delta " << format_double(c.delta) << "\n";
  out << "tau " << format_double(c.tau) << "\n";
  out << "kappa " << format_double(c.kappa) << "\n";
  out << "episode_cap " << c.episode_cap << "\n";
  out << "iteration_cap " << c.iteration_cap << "\n";
  out << "beta3 " << format_double(c.beta3) << "\n";
  out << "zero_cost " << (c.zero_cost ? 1 : 0) << "\n";
  out << "workers " << c.workers << "\n";
  out << "out_dir " << c.out_dir << "\n";
  out << "seeds";
  for (int s : c.seeds) out << " " << s;
  out << "\n";
  for (const auto& t : c.tasks)
    out << "task tau_star=" << format_double(t.tau_star) << " cost="
        << (t.reuse_exploration_cost ? "same" : "fresh")
        << " reward_tag=" << t.reward_tag << " cost_tag=" << t.cost_tag << "\n";
}

inline ExperimentConfig parse_config(std::istream& in,
                                     const std::string& name) {
  ExperimentConfig c;
  c.tasks.clear();
  c.seeds.clear();
  LineReader r(in, name);
  std::vector<std::string> t;
  bool saw_version = false;
  while (r.next(t)) {
    const std::string& key = t[0];
    auto need = [&](std::size_t n) {
      if (t.size() != n) r.fail("key '" + key + "' expects " +
                                std::to_string(n - 1) + " value(s)");
    };
    if (key == "version") {
      need(2);
      c.version = static_cast<int>(parse_int(t[1], r.where()));
      if (c.version != 1) r.fail("unsupported config version");
      saw_version = true;
    } else if (key == "mode") {
      need(2);
      c.mode = t[1];
    } else if (key == "S") {
      need(2);
      c.num_states = static_cast<int>(parse_int(t[1], r.where()));
    } else if (key == "A") {
      need(2);
      c.num_actions = static_cast<int>(parse_int(t[1], r.where()));
    } else if (key == "H") {
      need(2);
      c.horizon = static_cast<int>(parse_int(t[1], r.where()));
    } else if (key == "d") {
      need(2);
      c.dim = static_cast<int>(parse_int(t[1], r.where()));
    } else if (key == "class_size") {
      need(2);
      c.class_size = static_cast<int>(parse_int(t[1], r.where()));
    } else if (key == "gen_seed") {
      need(2);
      c.gen_seed = static_cast<std::uint64_t>(parse_int(t[1], r.where()));
    } else if (key == "epsilon") {
      need(2);
      c.epsilon = parse_double(t[1], r.where());
    } else if (key == "delta") {
      need(2);
      c.delta = parse_double(t[1], r.where());
    } else if (key == "tau") {
      need(2);
      c.tau = parse_double(t[1], r.where());
    } else if (key == "kappa") {
      need(2);
      c.kappa = parse_double(t[1], r.where());
    } else if (key == "episode_cap") {
      need(2);
      c.episode_cap = static_cast<int>(parse_int(t[1], r.where()));
    } else if (key == "iteration_cap") {
      need(2);
      c.iteration_cap = static_cast<int>(parse_int(t[1], r.where()));
    } else if (key == "beta3") {
      need(2);
      c.beta3 = parse_double(t[1], r.where());
    } else if (key == "zero_cost") {
      need(2);
      c.zero_cost = parse_int(t[1], r.where()) != 0;
    } else if (key == "workers") {
      need(2);
      c.workers = static_cast<int>(parse_int(t[1], r.where()));
    } else if (key == "out_dir") {
      need(2);
      c.out_dir = t[1];
    } else if (key == "seeds") {
      for (std::size_t i = 1; i < t.size(); ++i)
        c.seeds.push_back(static_cast<int>(parse_int(t[i], r.where())));
    } else if (key == "task") {
      PlanningTaskSpec task;
      for (std::size_t i = 1; i < t.size(); ++i) {
        auto eq = t[i].find('=');
        if (eq == std::string::npos) r.fail("task expects k=v entries");
        std::string k = t[i].substr(0, eq), v = t[i].substr(eq + 1);
        if (k == "tau_star") task.tau_star = parse_double(v, r.where());
        else if (k == "cost") task.reuse_exploration_cost = (v == "same");
        else if (k == "reward_tag") task.reward_tag = parse_int(v, r.where());
        else if (k == "cost_tag") task.cost_tag = parse_int(v, r.where());
        else r.fail("unknown task key '" + k + "'");
      }
      c.tasks.push_back(task);
    } else {
      r.fail("unknown config key '" + key + "'");
    }
  }
  if (!saw_version) throw ParseError(name + ": missing 'version'");
  if (c.tasks.empty()) c.tasks = ExperimentConfig::default_tasks(c.tau);
  if (c.seeds.empty()) c.seeds = {1};
  c.validate();
  return c;
}

// ---- instance generation ----

struct Environment {
  TabularMdp mdp;
  Utility cost;
  MarkovPolicy baseline;
  double safety_margin = 0.0;  // Delta(c, tau)
  double delta_min = 0.0;      // over exploration and all planning tasks
  std::optional<ModelClass> model_class;
  std::vector<Utility> task_rewards;
  std::vector<Utility> task_costs;
  std::vector<double> task_margins;
};

namespace env_detail {

inline void dirichlet_row(double* out, int n, Prng& rng) {
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    out[i] = rng.next_exponential();
    sum += out[i];
  }
  for (int i = 0; i < n; ++i) out[i] /= sum;
}

inline TabularMdp random_kernel(int S, int A, int H, Prng& rng) {
  TabularMdp m(S, A, H, 0);
  for (int h = 0; h < H; ++h)
    for (int s = 0; s < S; ++s)
      for (int a = 0; a < A; ++a)
        dirichlet_row(&m.kernel[m.idx(h, s, a, 0)], S, rng);
  return m;
}

// Draws a utility and rescales so the best trajectory sum is at most 1; the
// scaling factor also supplies the normalization certificate.
inline Utility random_normalized_utility(const TabularMdp& m, Prng& rng) {
  Utility u(m.horizon, m.num_states, m.num_actions, 0.0);
  for (double& v : u.values) v = rng.next_double();
  double peak = max_trajectory_utility(m, u);
  if (peak > 1.0)
    for (double& v : u.values) v /= peak;
  u.normalized = true;
  return u;
}

inline LowRankModel random_lowrank_truth(int S, int A, int H, int d,
                                         Prng& rng) {
  LowRankModel m(d, S, A, H);
  std::vector<double> row(std::max(S, d), 0.0);
  for (int h = 0; h < H; ++h) {
    for (int s = 0; s < S; ++s)
      for (int a = 0; a < A; ++a) {
        dirichlet_row(row.data(), d, rng);
        for (int k = 0; k < d; ++k) m.phi_at(h, s, a, k) = row[k];
      }
    // One next-state distribution per latent dimension keeps the induced
    // rows stochastic and the feature norms inside the unit ball.
    for (int k = 0; k < d; ++k) {
      dirichlet_row(row.data(), S, rng);
      for (int s2 = 0; s2 < S; ++s2) m.mu_at(h, s2, k) = row[s2];
    }
  }
  return m;
}

inline double max_row_tv(const LowRankModel& a, const LowRankModel& b) {
  double best = 0.0;
  for (int h = 0; h < a.horizon; ++h)
    for (int s = 0; s < a.num_states; ++s)
      for (int ac = 0; ac < a.num_actions; ++ac) {
        double tv = 0.0;
        for (int s2 = 0; s2 < a.num_states; ++s2)
          tv += std::abs(a.kernel(h, s, ac, s2) - b.kernel(h, s, ac, s2));
        best = std::max(best, 0.5 * tv);
      }
  return best;
}

}  // namespace env_detail

inline Environment gen_env(const ExperimentConfig& cfg, int seed) {
  const int S = cfg.num_states, A = cfg.num_actions, H = cfg.horizon;
  Prng base = Prng(cfg.gen_seed).fork(static_cast<std::uint64_t>(seed));

  for (int attempt = 0; attempt < 100; ++attempt) {
    Prng rng = base.fork(1000 + attempt);
    Environment env;

    if (cfg.mode == "lowrank") {
      LowRankModel truth =
          env_detail::random_lowrank_truth(S, A, H, cfg.dim, rng);
      ModelClass mc;
      int truth_pos = rng.next_below(cfg.class_size);
      for (int k = 0; k < cfg.class_size; ++k) {
        if (k == truth_pos) {
          mc.candidates.push_back(truth);
          continue;
        }
        LowRankModel decoy;
        int guard = 0;
        do {
          decoy = env_detail::random_lowrank_truth(S, A, H, cfg.dim, rng);
        } while (env_detail::max_row_tv(decoy, truth) < 0.1 && ++guard < 200);
        if (guard >= 200)
          throw GenerationError("gen_env: could not separate a decoy model");
        mc.candidates.push_back(std::move(decoy));
      }
      mc.truth_index = truth_pos;
      env.model_class = std::move(mc);
      env.mdp = truth.to_tabular(0);
    } else {
      env.mdp = env_detail::random_kernel(S, A, H, rng);
    }

    if (cfg.zero_cost) {
      env.cost = Utility(H, S, A, 0.0);
      env.cost.normalized = true;
    } else {
      env.cost = env_detail::random_normalized_utility(env.mdp, rng);
    }

    MinCostResult mc = min_cost_value(env.mdp, env.cost);
    if (mc.value > cfg.tau - cfg.kappa) continue;  // no safe baseline, resample
    env.safety_margin = cfg.tau - mc.value;

    // Baseline: min-cost policy pushed toward uniform as far as the safety
    // slack allows (bisection on the mixing weight).
    MarkovPolicy uniform = MarkovPolicy::uniform(H, S, A);
    auto mix_policy = [&](double w) {
      MarkovPolicy pi(H, S, A, 0.0);
      for (std::size_t k = 0; k < pi.probs.size(); ++k)
        pi.probs[k] = (1.0 - w) * mc.policy.probs[k] + w * uniform.probs[k];
      return pi;
    };
    double threshold = cfg.tau - cfg.kappa;
    if (value_of(env.mdp, uniform, env.cost) <= threshold) {
      env.baseline = uniform;
    } else {
      double lo = 0.0, hi = 1.0;
      for (int i = 0; i < 60; ++i) {
        double mid = 0.5 * (lo + hi);
        if (value_of(env.mdp, mix_policy(mid), env.cost) <= threshold)
          lo = mid;
        else
          hi = mid;
      }
      env.baseline = mix_policy(lo);
    }

    // Planning tasks; each needs headroom between the minimal achievable
    // cost and its threshold.
    bool tasks_ok = true;
    env.delta_min = env.safety_margin;
    for (std::size_t i = 0; i < cfg.tasks.size(); ++i) {
      const PlanningTaskSpec& spec = cfg.tasks[i];
      Prng task_rng = rng.fork(0xAB00 + i);
      env.task_rewards.push_back(
          env_detail::random_normalized_utility(env.mdp, task_rng));
      Utility cstar = env.cost;
      if (!spec.reuse_exploration_cost) {
        bool found = false;
        for (int k = 0; k < 100; ++k) {
          Prng cost_rng = task_rng.fork(0xC0DE + k);
          cstar = env_detail::random_normalized_utility(env.mdp, cost_rng);
          if (min_cost_value(env.mdp, cstar).value <= spec.tau_star - 0.05) {
            found = true;
            break;
          }
        }
        if (!found) {
          tasks_ok = false;
          break;
        }
      }
      double margin = spec.tau_star - min_cost_value(env.mdp, cstar).value;
      if (margin <= 0.0) {
        tasks_ok = false;
        break;
      }
      env.task_costs.push_back(std::move(cstar));
      env.task_margins.push_back(margin);
      env.delta_min = std::min(env.delta_min, margin);
    }
    if (!tasks_ok) continue;
    return env;
  }
  throw GenerationError("gen_env: exhausted 100 attempts for seed " +
                        std::to_string(seed));
}

// ---- per-seed experiment ----

struct TaskOutcome {
  SolveStatus status = SolveStatus::Optimal;
  bool feasible_empirical = false;
  double objective_hat = 0.0;
  double residual = 0.0;
  double true_reward = 0.0;
  double true_cost = 0.0;
  double oracle_value = 0.0;
  double gap = std::numeric_limits<double>::infinity();
  bool safe_true = false;
  bool within_epsilon = false;
};

struct SeedSummary {
  int seed = 0;
  bool completed = false;
  std::string error;
  int episodes = 0;
  bool terminated = false;
  int violations = 0;
  double theoretical_cap = 0.0;
  std::vector<TaskOutcome> tasks;
};

struct ReportSummary {
  std::vector<SeedSummary> seeds;
  int max_violations = 0;
  double max_gap = 0.0;
  double median_episodes = 0.0;
  bool all_completed = false;
  bool all_audits_pass = false;
};

namespace run_detail {

inline std::string csv_bool(bool b) { return b ? "1" : "0"; }

inline const char* mode_name(SafeSetMode m) {
  return m == SafeSetMode::BaselineOnly ? "baseline_only" : "relaxed";
}

inline void write_episode_csv(std::ostream& out, const RunLog& log,
                              const std::string& mode, int H) {
  out << "#schema=sweet.episodes.v1 mode=" << mode << "\n";
  out << "episode,mode,u_value,exact_cost,solver_status,solver_residual,"
         "terminated,policy_id";
  if (mode == "lowrank")
    for (int h = 0; h < H; ++h)
      out << ",mle_index_h" << h << ",min_eig_h" << h;
  out << "\n";
  for (const auto& rec : log.records) {
    out << rec.episode << "," << mode_name(rec.mode) << ","
        << format_double(rec.u_value) << "," << format_double(rec.exact_cost)
        << "," << to_string(rec.solver_status) << ","
        << format_double(rec.solver_residual) << "," << csv_bool(rec.terminated)
        << "," << rec.policy_id;
    if (mode == "lowrank")
      for (int h = 0; h < H; ++h)
        out << "," << rec.mle_index[h] << "," << format_double(rec.min_eig[h]);
    out << "\n";
  }
}

inline void write_policy_pool(std::ostream& out,
                              const std::vector<MarkovPolicy>& pool) {
  out << "sweet/policy_pool 1\n";
  out << "count " << pool.size() << "\n";
  for (const auto& p : pool) write_policy(out, p);
  out << "end\n";
}

inline std::vector<MarkovPolicy> read_policy_pool(std::istream& in,
                                                  const std::string& name) {
  LineReader r(in, name);
  expect_header(r, "sweet/policy_pool");
  std::vector<std::string> t;
  if (!r.next(t) || t.size() != 2 || t[0] != "count")
    r.fail("expected 'count <n>'");
  int n = static_cast<int>(parse_int(t[1], r.where()));
  std::vector<MarkovPolicy> pool;
  for (int i = 0; i < n; ++i) pool.push_back(read_policy(in, name));
  if (!r.next(t) || t[0] != "end") r.fail("expected 'end'");
  return pool;
}

}  // namespace run_detail

// Exact safety audit: recompute the constraint value of every executed
// policy under the true kernel, fill the exact_cost column, and count
// violations of tau. For low-rank runs the executed policies are the
// two-step greedy versions of the logged reference policy.
inline int audit_run(const Environment& env, const ExperimentConfig& cfg,
                     RunLog& log) {
  int violations = 0;
  const double tol = 1e-12;
  for (auto& rec : log.records) {
    const MarkovPolicy& ref = log.policy_pool[rec.policy_id];
    double exact = 0.0;
    if (cfg.mode == "lowrank") {
      double eps0 = cfg.kappa / 6.0;
      for (int h = 0; h < cfg.horizon; ++h) {
        std::vector<int> steps;
        if (h >= 1) steps.push_back(h - 1);
        steps.push_back(h);
        MarkovPolicy behavior = greedy_version(ref, eps0, steps);
        exact = std::max(exact, value_of(env.mdp, behavior, env.cost));
      }
    } else {
      exact = value_of(env.mdp, ref, env.cost);
    }
    rec.exact_cost = exact;
    if (exact > cfg.tau + tol) ++violations;
  }
  return violations;
}

inline SeedSummary run_seed(const ExperimentConfig& cfg, int seed,
                            const fs::path& seed_dir) {
  SeedSummary summary;
  summary.seed = seed;

  Environment env = gen_env(cfg, seed);
  TrueModelSampler sampler(env.mdp);
  Prng episode_rng = Prng(cfg.gen_seed).fork(seed).fork(0xE9);

  SolverOptions solver_opts;
  solver_opts.seed = Prng(cfg.gen_seed).fork(seed).next_u64();

  RunLog* log = nullptr;
  TabularMdp p_hat;
  std::unique_ptr<UncertaintyFunctional> planning_u;
  SaTable bonus;

  TabularExplorationResult tab_res;
  LowRankExplorationResult low_res;
  if (cfg.mode == "lowrank") {
    LowRankConfig lr = compute_lowrank_constants(
        cfg.num_states, cfg.num_actions, cfg.horizon, cfg.dim, cfg.class_size,
        cfg.delta, cfg.tau, cfg.kappa, env.safety_margin, env.delta_min,
        cfg.epsilon, cfg.beta3);
    summary.theoretical_cap = lr.n_max_theoretical;
    low_res = run_exploration_lowrank(sampler, *env.model_class, env.cost,
                                      env.baseline, lr, cfg.iteration_cap,
                                      episode_rng, solver_opts);
    log = &low_res.log;
    p_hat = low_res.p_hat;
    bonus = low_res.bonus;
    planning_u = std::make_unique<TruncatedValueUncertainty>(
        low_res.bonus, 1.0, TruncatedValueUncertainty::Form::Linear, 1.0,
        low_res.final_offset);
  } else {
    TabularConfig tc = compute_tabular_constants(
        cfg.num_states, cfg.num_actions, cfg.horizon, cfg.delta, cfg.tau,
        cfg.kappa, env.safety_margin, env.delta_min, cfg.epsilon);
    summary.theoretical_cap = tc.n_max_theoretical;
    tab_res = run_exploration(sampler, env.cost, env.baseline, tc,
                              cfg.episode_cap, episode_rng, solver_opts);
    log = &tab_res.log;
    p_hat = tab_res.p_hat;
    bonus = tab_res.bonus;
    planning_u = std::make_unique<TruncatedValueUncertainty>(
        tab_res.bonus, tc.alpha_h, TruncatedValueUncertainty::Form::Sqrt, 4.0);
  }

  summary.episodes = log->final_episode;
  summary.terminated = log->terminated;
  summary.violations = audit_run(env, cfg, *log);

  // Planning tasks: solve on the learned model, audit on the true one.
  for (std::size_t i = 0; i < cfg.tasks.size(); ++i) {
    TaskOutcome out;
    const double tau_star = cfg.tasks[i].tau_star;
    SolverOptions plan_opts = solver_opts;
    plan_opts.seed = solver_opts.seed ^ (0xFACE0000ull + i);
    SolveResult sol = plan(p_hat, env.task_rewards[i], env.task_costs[i],
                           tau_star, *planning_u, plan_opts);
    out.status = sol.status;
    out.objective_hat = sol.objective;
    out.residual = sol.residual;
    out.feasible_empirical = sol.residual <= 1e-6;
    out.true_reward = value_of(env.mdp, sol.markov, env.task_rewards[i]);
    out.true_cost = value_of(env.mdp, sol.markov, env.task_costs[i]);
    oracle::OracleResult opt = oracle::cmdp_optimal(
        env.mdp, env.task_rewards[i], env.task_costs[i], tau_star);
    out.oracle_value = opt.value;
    out.gap = opt.value - out.true_reward;
    out.safe_true = out.true_cost <= tau_star + 1e-6;
    out.within_epsilon = out.gap <= cfg.epsilon;
    summary.tasks.push_back(out);
  }

  // Artifacts.
  fs::create_directories(seed_dir);
  save_file((seed_dir / "env.txt").string(), env.mdp,
            [](std::ostream& o, const TabularMdp& m) { write_mdp(o, m); });
  save_file((seed_dir / "cost.txt").string(), env.cost,
            [](std::ostream& o, const Utility& u) { write_utility(o, u); });
  save_file((seed_dir / "baseline.txt").string(), env.baseline,
            [](std::ostream& o, const MarkovPolicy& p) { write_policy(o, p); });
  save_file((seed_dir / "p_hat.txt").string(), p_hat,
            [](std::ostream& o, const TabularMdp& m) { write_mdp(o, m); });
  save_file((seed_dir / "bonus.txt").string(), bonus,
            [](std::ostream& o, const SaTable& t) {
              write_sa_table(o, t, "sweet/sa_table");
            });
  {
    std::ofstream out(seed_dir / "episodes.csv");
    run_detail::write_episode_csv(out, *log, cfg.mode, cfg.horizon);
  }
  {
    std::ofstream out(seed_dir / "policies.txt");
    run_detail::write_policy_pool(out, log->policy_pool);
  }

  nlohmann::json j;
  j["seed"] = seed;
  j["mode"] = cfg.mode;
  j["episodes"] = summary.episodes;
  j["terminated"] = summary.terminated;
  j["violations"] = summary.violations;
  j["theoretical_cap"] = summary.theoretical_cap;
  j["safety_margin"] = env.safety_margin;
  j["delta_min"] = env.delta_min;
  nlohmann::json jt = nlohmann::json::array();
  for (const auto& t : summary.tasks) {
    nlohmann::json e;
    e["status"] = to_string(t.status);
    e["feasible_empirical"] = t.feasible_empirical;
    e["objective_hat"] = t.objective_hat;
    e["residual"] = t.residual;
    e["true_reward"] = t.true_reward;
    e["true_cost"] = t.true_cost;
    e["oracle_value"] = t.oracle_value;
    e["gap"] = t.gap;
    e["safe_true"] = t.safe_true;
    e["within_epsilon"] = t.within_epsilon;
    jt.push_back(e);
  }
  j["tasks"] = jt;
  {
    std::ofstream out(seed_dir / "summary.json");
    out << j.dump(2) << "\n";
  }

  summary.completed = true;
  return summary;
}

inline ReportSummary run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  fs::path out_dir(cfg.out_dir);
  fs::create_directories(out_dir);
  {
    std::ofstream cfg_echo(out_dir / "config.txt");
    write_config(cfg_echo, cfg);
  }

  ReportSummary report;
  report.seeds.resize(cfg.seeds.size());

  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    while (true) {
      std::size_t i = next.fetch_add(1);
      if (i >= cfg.seeds.size()) break;
      int seed = cfg.seeds[i];
      fs::path seed_dir = out_dir / ("seed_" + std::to_string(seed));
      try {
        report.seeds[i] = run_seed(cfg, seed, seed_dir);
      } catch (const std::exception& e) {
        report.seeds[i].seed = seed;
        report.seeds[i].completed = false;
        report.seeds[i].error = e.what();
      }
    }
  };
  int n_workers = std::min<int>(cfg.workers, static_cast<int>(cfg.seeds.size()));
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (int i = 0; i < n_workers; ++i) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }

  report.all_completed = true;
  report.all_audits_pass = true;
  std::vector<double> eps_counts;
  for (const auto& s : report.seeds) {
    if (!s.completed) {
      report.all_completed = false;
      report.all_audits_pass = false;
      continue;
    }
    report.max_violations = std::max(report.max_violations, s.violations);
    if (s.violations > 0) report.all_audits_pass = false;
    for (const auto& t : s.tasks)
      if (std::isfinite(t.gap)) report.max_gap = std::max(report.max_gap, t.gap);
    eps_counts.push_back(static_cast<double>(s.episodes));
  }
  if (!eps_counts.empty()) {
    std::sort(eps_counts.begin(), eps_counts.end());
    std::size_t m = eps_counts.size();
    report.median_episodes = (m % 2 == 1)
                                 ? eps_counts[m / 2]
                                 : 0.5 * (eps_counts[m / 2 - 1] + eps_counts[m / 2]);
  }

  nlohmann::json j;
  j["max_violations"] = report.max_violations;
  j["max_gap"] = report.max_gap;
  j["median_episodes"] = report.median_episodes;
  j["all_completed"] = report.all_completed;
  j["all_audits_pass"] = report.all_audits_pass;
  nlohmann::json js = nlohmann::json::array();
  for (const auto& s : report.seeds) {
    nlohmann::json e;
    e["seed"] = s.seed;
    e["completed"] = s.completed;
    if (!s.error.empty()) e["error"] = s.error;
    e["episodes"] = s.episodes;
    e["terminated"] = s.terminated;
    e["violations"] = s.violations;
    js.push_back(e);
  }
  j["seeds"] = js;
  {
    std::ofstream out(out_dir / "aggregate.json");
    out << j.dump(2) << "\n";
  }
  return report;
}

// ---- artifact-level audit and reporting ----

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline CsvTable read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string() + ": cannot open");
  CsvTable table;
  std::string line;
  int line_no = 0;
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
      if (c == ',') {
        out.push_back(cur);
        cur.clear();
      } else {
        cur.push_back(c);
      }
    }
    out.push_back(cur);
    return out;
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') continue;
    auto cells = split(line);
    if (table.header.empty()) {
      table.header = cells;
    } else {
      if (cells.size() != table.header.size())
        throw ParseError(path.string() + ":" + std::to_string(line_no) +
                         ": column count mismatch");
      table.rows.push_back(cells);
    }
  }
  if (table.header.empty())
    throw ParseError(path.string() + ": empty CSV");
  return table;
}

inline int csv_column(const CsvTable& t, const std::string& name,
                      const std::string& file) {
  for (std::size_t i = 0; i < t.header.size(); ++i)
    if (t.header[i] == name) return static_cast<int>(i);
  throw ParseError(file + ": missing column '" + name + "'");
}

// Re-audits saved artifacts: recomputes every executed policy's exact cost
// from the stored true kernel and compares with the CSV. Returns the number
// of safety violations found.
inline int audit_artifacts(const fs::path& seed_dir, const std::string& mode,
                           double tau, double kappa) {
  TabularMdp truth = load_file((seed_dir / "env.txt").string(),
                               [](std::istream& i, const std::string& n) {
                                 return read_mdp(i, n);
                               });
  Utility cost = load_file((seed_dir / "cost.txt").string(),
                           [](std::istream& i, const std::string& n) {
                             return read_utility(i, n);
                           });
  std::vector<MarkovPolicy> pool =
      load_file((seed_dir / "policies.txt").string(),
                [](std::istream& i, const std::string& n) {
                  return run_detail::read_policy_pool(i, n);
                });
  CsvTable csv = read_csv(seed_dir / "episodes.csv");
  const std::string file = (seed_dir / "episodes.csv").string();
  int c_policy = csv_column(csv, "policy_id", file);
  int c_exact = csv_column(csv, "exact_cost", file);

  int violations = 0;
  for (const auto& row : csv.rows) {
    int pid = static_cast<int>(parse_int(row[c_policy], file));
    if (pid < 0 || pid >= static_cast<int>(pool.size()))
      throw ParseError(file + ": policy id out of range");
    double logged = parse_double(row[c_exact], file);
    double exact = 0.0;
    if (mode == "lowrank") {
      double eps0 = kappa / 6.0;
      for (int h = 0; h < truth.horizon; ++h) {
        std::vector<int> steps;
        if (h >= 1) steps.push_back(h - 1);
        steps.push_back(h);
        exact = std::max(exact,
                         value_of(truth, greedy_version(pool[pid], eps0, steps),
                                  cost));
      }
    } else {
      exact = value_of(truth, pool[pid], cost);
    }
    if (std::abs(exact - logged) > 1e-9)
      throw ParseError(file + ": exact_cost mismatch against recomputation");
    if (exact > tau + 1e-12) ++violations;
  }
  return violations;
}

// Human-readable table plus two-column plot data per seed.
inline void report(const fs::path& run_dir, std::ostream& text_out) {
  if (!fs::exists(run_dir))
    throw ParseError(run_dir.string() + ": run directory does not exist");
  std::vector<fs::path> seed_dirs;
  for (const auto& entry : fs::directory_iterator(run_dir))
    if (entry.is_directory() &&
        entry.path().filename().string().rfind("seed_", 0) == 0)
      seed_dirs.push_back(entry.path());
  if (seed_dirs.empty())
    throw ParseError(run_dir.string() + ": no seed_* directories");
  std::sort(seed_dirs.begin(), seed_dirs.end());

  text_out << "seed      episodes  terminated  violations  max_gap\n";
  for (const auto& dir : seed_dirs) {
    std::ifstream jin(dir / "summary.json");
    if (!jin) throw ParseError((dir / "summary.json").string() + ": cannot open");
    nlohmann::json j = nlohmann::json::parse(jin, nullptr, true, true);
    double max_gap = 0.0;
    bool any = false;
    for (const auto& t : j["tasks"]) {
      double g = t["gap"].get<double>();
      if (std::isfinite(g)) {
        max_gap = std::max(max_gap, g);
        any = true;
      }
    }
    std::ostringstream row;
    row.setf(std::ios::left);
    row.width(10);
    row << j["seed"].get<long long>();
    row.width(10);
    row << j["episodes"].get<long long>();
    row.width(12);
    row << (j["terminated"].get<bool>() ? "yes" : "no");
    row.width(12);
    row << j["violations"].get<long long>();
    row << (any ? format_double(max_gap) : std::string("n/a"));
    text_out << row.str() << "\n";

    CsvTable csv = read_csv(dir / "episodes.csv");
    const std::string file = (dir / "episodes.csv").string();
    int c_ep = csv_column(csv, "episode", file);
    int c_u = csv_column(csv, "u_value", file);
    int c_exact = csv_column(csv, "exact_cost", file);
    double tau_margin_acc = 0.0;

    std::ofstream uplot(dir / "plot_u_vs_n.dat");
    std::ofstream mplot(dir / "plot_safety_margin.dat");
    uplot << "# n u_value\n";
    mplot << "# n cumulative_safety_margin\n";
    double tau = j.contains("tau") ? j["tau"].get<double>() : 0.0;
    // tau is recoverable from the run config; fall back to the config echo.
    if (tau == 0.0) {
      std::ifstream cin(run_dir / "config.txt");
      if (cin) {
        ExperimentConfig cfg = parse_config(cin, (run_dir / "config.txt").string());
        tau = cfg.tau;
      }
    }
    for (const auto& rowcells : csv.rows) {
      long long n = parse_int(rowcells[c_ep], file);
      uplot << n << " " << rowcells[c_u] << "\n";
      double exact = parse_double(rowcells[c_exact], file);
      tau_margin_acc += tau - exact;
      mplot << n << " " << format_double(tau_margin_acc) << "\n";
    }
  }
}

}  // namespace sweet::harness
