#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

#include "sweet/counts.hpp"
#include "sweet/functional.hpp"
#include "sweet/mdp_ops.hpp"
#include "sweet/prng.hpp"
#include "sweet/run_log.hpp"
#include "sweet/solver.hpp"
#include "sweet/types.hpp"

namespace sweet {

// The only surface of the true environment visible to a learner: sampling.
// The kernel itself stays on the harness side.
class EnvSampler {
 public:
  virtual ~EnvSampler() = default;
  virtual int num_states() const = 0;
  virtual int num_actions() const = 0;
  virtual int horizon() const = 0;
  virtual int initial_state() const = 0;
  virtual int sample_next(int h, int s, int a, Prng& rng) const = 0;
};

class TrueModelSampler final : public EnvSampler {
 public:
  explicit TrueModelSampler(TabularMdp mdp) : mdp_(std::move(mdp)) {
    mdp_.validate();
  }
  int num_states() const override { return mdp_.num_states; }
  int num_actions() const override { return mdp_.num_actions; }
  int horizon() const override { return mdp_.horizon; }
  int initial_state() const override { return mdp_.initial_state; }
  int sample_next(int h, int s, int a, Prng& rng) const override {
    double x = rng.next_double();
    double acc = 0.0;
    for (int s2 = 0; s2 < mdp_.num_states; ++s2) {
      acc += mdp_.p(h, s, a, s2);
      if (x < acc) return s2;
    }
    return mdp_.num_states - 1;
  }

 private:
  TabularMdp mdp_;
};

inline Trajectory roll_episode(const EnvSampler& env, const MarkovPolicy& pi,
                               Prng& rng) {
  Trajectory traj;
  const int H = env.horizon(), A = env.num_actions();
  int s = env.initial_state();
  traj.states.push_back(s);
  for (int h = 0; h < H; ++h) {
    double x = rng.next_double();
    int a = A - 1;
    double acc = 0.0;
    for (int cand = 0; cand < A; ++cand) {
      acc += pi.at(h, s, cand);
      if (x < acc) {
        a = cand;
        break;
      }
    }
    traj.actions.push_back(a);
    s = env.sample_next(h, s, a, rng);
    traj.states.push_back(s);
  }
  return traj;
}

// Positive solution of n = C * log(n + 1), iterated to relative 1e-10.
inline double solve_log_fixed_point(double coefficient) {
  if (!(coefficient > 0.0))
    throw ParameterError("solve_log_fixed_point: coefficient must be positive");
  double n = coefficient;
  for (int i = 0; i < 100000; ++i) {
    double next = coefficient * std::log(n + 1.0);
    if (std::abs(next - n) <= 1e-10 * std::max(1.0, std::abs(next)))
      return next;
    n = next;
  }
  return n;
}

struct TabularConfig {
  int num_states = 0;
  int num_actions = 0;
  int horizon = 0;
  double epsilon = 0.0;
  double delta = 0.0;
  double tau = 0.0;
  double kappa = 0.0;
  double safety_margin = 0.0;  // Delta(c, tau) of the exploration constraint
  double delta_min = 0.0;      // lower bound over all constraints in play

  // Derived constants.
  double frak_u = 0.0;
  double termination_threshold = 0.0;  // T
  double alpha_h = 0.0;
  double kappa_tilde = 0.0;
  double epsilon0 = 0.0;
  int t = 0;
  double beta = 0.0;
  double beta0 = 0.0;
  double n_max_theoretical = 0.0;
};

// Confidence width entering the bonus; evaluated with the episode budget N.
inline double tabular_beta(int S, int A, int H, double delta, double n_max) {
  return std::log(3.0 * S * A * H / delta) +
         S * std::log(8.0 * std::exp(1.0) * (1.0 + n_max));
}

inline TabularConfig compute_tabular_constants(int S, int A, int H,
                                               double delta, double tau,
                                               double kappa, double Delta,
                                               double Delta_min,
                                               double epsilon) {
  if (S <= 0 || A <= 0 || H <= 0)
    throw ParameterError("compute_tabular_constants: S, A, H must be positive");
  if (epsilon <= 0.0 || epsilon >= 1.0)
    throw ParameterError("compute_tabular_constants: epsilon outside (0,1)");
  if (delta <= 0.0 || delta >= 1.0)
    throw ParameterError("compute_tabular_constants: delta outside (0,1)");
  if (tau <= 0.0 || tau > 1.0)
    throw ParameterError("compute_tabular_constants: tau outside (0,1]");
  if (kappa <= 0.0 || kappa >= tau)
    throw ParameterError("compute_tabular_constants: kappa outside (0,tau)");
  if (!(Delta_min > 0.0) || Delta < Delta_min)
    throw ParameterError(
        "compute_tabular_constants: need Delta >= Delta_min > 0");

  TabularConfig cfg;
  cfg.num_states = S;
  cfg.num_actions = A;
  cfg.horizon = H;
  cfg.epsilon = epsilon;
  cfg.delta = delta;
  cfg.tau = tau;
  cfg.kappa = kappa;
  cfg.safety_margin = Delta;
  cfg.delta_min = Delta_min;

  cfg.frak_u = std::min({epsilon / 2.0, Delta_min / 2.0,
                         epsilon * Delta_min / 5.0, tau / 4.0, kappa / 16.0});
  cfg.termination_threshold = Delta * cfg.frak_u / 2.0;
  cfg.alpha_h = 1.0 + 1.0 / H;
  cfg.kappa_tilde = kappa / 2.0;
  cfg.epsilon0 = 0.0;
  cfg.t = 0;

  // Episode budget: n = C(beta) * log(n+1) with the two coefficient blocks,
  // beta re-evaluated at the running budget until the joint point is stable.
  const double e3 = std::exp(3.0);
  double n = 1.0;
  for (int round = 0; round < 200; ++round) {
    double beta = tabular_beta(S, A, H, delta, n);
    double coeff =
        std::pow(2.0, 10) * e3 * 900.0 * beta * H * S * A /
            (Delta * Delta * cfg.frak_u * cfg.frak_u) +
        std::pow(2.0, 15) * e3 * beta * H * S * A / (kappa * kappa);
    double next = solve_log_fixed_point(coeff);
    if (std::abs(next - n) <= 1e-10 * std::max(1.0, next)) {
      n = next;
      break;
    }
    n = next;
  }
  cfg.n_max_theoretical = n;
  cfg.beta = tabular_beta(S, A, H, delta, n);
  cfg.beta0 = 8.0 * cfg.beta;
  return cfg;
}

struct TabularExplorationResult {
  TabularMdp p_hat;
  SaTable bonus;
  Counts counts;
  RunLog log;
};

// Count-based safe exploration: execute the previous reference policy, refit
// the empirical kernel and bonus, gate the empirical safe set, and pick the
// next reference policy as the in-set uncertainty maximizer. Stops when the
// relaxed set is available and the maximized uncertainty falls below the
// termination threshold, or at episode_cap.
inline TabularExplorationResult run_exploration(
    const EnvSampler& env, const Utility& cost, const MarkovPolicy& baseline,
    const TabularConfig& cfg, int episode_cap, Prng& rng,
    const SolverOptions& solver_opts = {}) {
  const int S = env.num_states(), A = env.num_actions(), H = env.horizon();
  if (cfg.num_states != S || cfg.num_actions != A || cfg.horizon != H)
    throw ShapeError("run_exploration: config does not match environment");
  if (cost.horizon != H || cost.num_states != S || cost.num_actions != A)
    throw ShapeError("run_exploration: cost shape mismatch");
  baseline.validate();
  cost.validate_range();
  if (!cost.normalized)
    throw PreconditionError("run_exploration: cost must carry the normalization certificate");
  if (episode_cap <= 0)
    throw ParameterError("run_exploration: episode_cap must be positive");

  TabularExplorationResult out;
  out.counts = Counts(H, S, A);
  out.log.policy_pool.push_back(baseline);

  SafeSetSpec spec;
  spec.tau = cfg.tau;
  spec.epsilon0 = cfg.epsilon0;
  spec.t = cfg.t;
  spec.kappa_tilde = cfg.kappa_tilde;
  spec.baseline = baseline;
  spec.validate(cfg.kappa);

  MarkovPolicy pi_ref = baseline;
  int pi_ref_id = 0;

  for (int n = 1; n <= episode_cap; ++n) {
    Trajectory traj = roll_episode(env, pi_ref, rng);
    out.counts = update_counts(std::move(out.counts), traj);
    out.p_hat = estimate_model(out.counts, env.initial_state());
    out.bonus = bonus_table(out.counts, cfg.beta0, H);
    TruncatedValueUncertainty ufun(out.bonus, cfg.alpha_h,
                                   TruncatedValueUncertainty::Form::Sqrt, 4.0);

    EpisodeRecord rec;
    rec.episode = n;
    rec.policy_id = pi_ref_id;

    SafeSetMode mode = safe_set_gate(out.p_hat, cost, ufun, spec);
    rec.mode = mode;
    if (mode == SafeSetMode::BaselineOnly) {
      pi_ref = baseline;
      pi_ref_id = 0;
      rec.u_value = ufun.value(out.p_hat, baseline);
      rec.solver_status = SolveStatus::BaselineOnly;
      rec.solver_residual = 0.0;
    } else {
      SolverOptions opts = solver_opts;
      opts.seed = solver_opts.seed ^ (0x9e3779b97f4a7c15ull * n);
      SolveResult sol = max_uncertainty_safe(out.p_hat, cost, ufun,
                                             spec.relaxed_budget(), baseline,
                                             opts);
      pi_ref = sol.markov;
      pi_ref_id = out.log.push_policy(pi_ref);
      rec.u_value = sol.objective;
      rec.solver_status = sol.status;
      rec.solver_residual = sol.residual;
      if (rec.u_value <= cfg.termination_threshold) rec.terminated = true;
    }

    out.log.records.push_back(rec);
    out.log.final_episode = n;
    if (rec.terminated) {
      out.log.terminated = true;
      break;
    }
  }
  return out;
}

}  // namespace sweet
