#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "sweet/functional.hpp"
#include "sweet/mdp_ops.hpp"
#include "sweet/run_log.hpp"
#include "sweet/solver.hpp"
#include "sweet/tabular_sweet.hpp"
#include "sweet/types.hpp"

namespace sweet {

// Factored transition model: P_h(s'|s,a) = <phi_h(s,a), mu_h(s')>. The state
// space stays finite so exact evaluation remains available; the low-rank
// structure enters through the feature-driven bonus and the model class.
struct LowRankModel {
  int dim = 0;
  int num_states = 0;
  int num_actions = 0;
  int horizon = 0;
  std::vector<double> phi;  // (h, s, a, k)
  std::vector<double> mu;   // (h, s2, k)

  LowRankModel() = default;
  LowRankModel(int d, int S, int A, int H)
      : dim(d),
        num_states(S),
        num_actions(A),
        horizon(H),
        phi(static_cast<std::size_t>(H) * S * A * d, 0.0),
        mu(static_cast<std::size_t>(H) * S * d, 0.0) {}

  double& phi_at(int h, int s, int a, int k) {
    return phi[((static_cast<std::size_t>(h) * num_states + s) * num_actions +
                a) *
                   dim +
               k];
  }
  double phi_at(int h, int s, int a, int k) const {
    return phi[((static_cast<std::size_t>(h) * num_states + s) * num_actions +
                a) *
                   dim +
               k];
  }
  double& mu_at(int h, int s2, int k) {
    return mu[(static_cast<std::size_t>(h) * num_states + s2) * dim + k];
  }
  double mu_at(int h, int s2, int k) const {
    return mu[(static_cast<std::size_t>(h) * num_states + s2) * dim + k];
  }

  double kernel(int h, int s, int a, int s2) const {
    double dot = 0.0;
    for (int k = 0; k < dim; ++k) dot += phi_at(h, s, a, k) * mu_at(h, s2, k);
    return dot;
  }

  TabularMdp to_tabular(int initial_state) const {
    TabularMdp m(num_states, num_actions, horizon, initial_state);
    for (int h = 0; h < horizon; ++h)
      for (int s = 0; s < num_states; ++s)
        for (int a = 0; a < num_actions; ++a) {
          double sum = 0.0;
          for (int s2 = 0; s2 < num_states; ++s2) {
            double v = kernel(h, s, a, s2);
            m.p(h, s, a, s2) = v;
            sum += v;
          }
          if (std::abs(sum - 1.0) > 1e-10)
            throw ShapeError("LowRankModel: induced row is not a distribution");
          for (int s2 = 0; s2 < num_states; ++s2) m.p(h, s, a, s2) /= sum;
        }
    return m;
  }

  void validate() const {
    for (int h = 0; h < horizon; ++h)
      for (int s = 0; s < num_states; ++s)
        for (int a = 0; a < num_actions; ++a) {
          double norm2 = 0.0;
          for (int k = 0; k < dim; ++k) {
            double v = phi_at(h, s, a, k);
            norm2 += v * v;
          }
          if (norm2 > 1.0 + 1e-10)
            throw ShapeError("LowRankModel: feature norm exceeds 1");
          double sum = 0.0;
          for (int s2 = 0; s2 < num_states; ++s2) {
            double v = kernel(h, s, a, s2);
            if (v < -1e-12)
              throw ShapeError("LowRankModel: negative induced probability");
            sum += v;
          }
          if (std::abs(sum - 1.0) > 1e-10)
            throw ShapeError("LowRankModel: induced row sum deviates from 1");
        }
  }
};

struct ModelClass {
  std::vector<LowRankModel> candidates;
  // Harness-side knowledge only; the learner never reads it.
  std::optional<int> truth_index;

  void validate() const {
    if (candidates.empty()) throw ShapeError("ModelClass: empty class");
    for (const auto& c : candidates) c.validate();
    if (truth_index &&
        (*truth_index < 0 ||
         *truth_index >= static_cast<int>(candidates.size())))
      throw ShapeError("ModelClass: truth index out of range");
  }
  int size() const { return static_cast<int>(candidates.size()); }
};

// One transition observation for a fixed step h.
struct StepTriple {
  int s = 0;
  int a = 0;
  int s2 = 0;
};

struct MleResult {
  int index = 0;
  double log_likelihood = 0.0;
};

// Exact maximizer of the transition log-likelihood over the finite class;
// ties (including the empty dataset) go to the lowest candidate index.
inline MleResult mle(const std::vector<StepTriple>& dataset,
                     const ModelClass& model_class, int h) {
  const int K = model_class.size();
  if (K == 0) throw ShapeError("mle: empty model class");
  MleResult best{0, -std::numeric_limits<double>::infinity()};
  bool any_finite = false;
  for (int k = 0; k < K; ++k) {
    double ll = 0.0;
    for (const StepTriple& tr : dataset) {
      double p = model_class.candidates[k].kernel(h, tr.s, tr.a, tr.s2);
      if (p <= 0.0) {
        ll = -std::numeric_limits<double>::infinity();
        break;
      }
      ll += std::log(p);
    }
    if (std::isfinite(ll)) {
      any_finite = true;
      if (ll > best.log_likelihood) best = {k, ll};
    }
  }
  if (!dataset.empty() && !any_finite)
    throw DegenerateDataError(
        "mle: every candidate assigns zero likelihood to some observation");
  if (dataset.empty()) return {0, 0.0};
  return best;
}

struct CovMatrix {
  Eigen::MatrixXd u;

  double min_eigenvalue() const {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(u);
    return es.eigenvalues().minCoeff();
  }
  double condition_number() const {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(u);
    double lo = es.eigenvalues().minCoeff();
    double hi = es.eigenvalues().maxCoeff();
    return lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
  }
  void validate(double lambda_floor) const {
    if (u.rows() != u.cols()) throw ShapeError("CovMatrix: not square");
    if ((u - u.transpose()).cwiseAbs().maxCoeff() > 1e-12)
      throw ShapeError("CovMatrix: not symmetric");
    if (min_eigenvalue() < lambda_floor - 1e-9)
      throw ShapeError("CovMatrix: eigenvalue below the regularizer");
  }
};

// Gram matrix of the current features over all stored pairs plus the ridge
// term. Rebuilt from scratch every iteration because the feature estimate
// changes with the MLE pick.
inline CovMatrix update_covariance(const LowRankModel& feature_model, int h,
                                   const std::vector<std::array<int, 2>>& pairs,
                                   double lambda_n) {
  if (lambda_n <= 0.0)
    throw ParameterError("update_covariance: lambda_n must be positive");
  const int d = feature_model.dim;
  CovMatrix cov;
  cov.u = lambda_n * Eigen::MatrixXd::Identity(d, d);
  Eigen::VectorXd x(d);
  for (const auto& pr : pairs) {
    for (int k = 0; k < d; ++k) x(k) = feature_model.phi_at(h, pr[0], pr[1], k);
    cov.u += x * x.transpose();
  }
  return cov;
}

// min{ alpha_hat * ||phi(s,a)||_{U^-1}, 1 } for every (s,a) at step h. The
// inverse norm goes through a Cholesky solve; ill-conditioned matrices are
// refused.
inline std::vector<double> elliptic_bonus(const LowRankModel& feature_model,
                                          int h, const CovMatrix& cov,
                                          double alpha_hat) {
  const int d = feature_model.dim;
  const int S = feature_model.num_states, A = feature_model.num_actions;
  if (cov.condition_number() > 1e12)
    throw NumericError("elliptic_bonus: covariance condition number > 1e12");
  Eigen::LLT<Eigen::MatrixXd> llt(cov.u);
  if (llt.info() != Eigen::Success)
    throw NumericError("elliptic_bonus: covariance is not positive definite");
  std::vector<double> out(static_cast<std::size_t>(S) * A, 0.0);
  Eigen::VectorXd x(d);
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) {
      for (int k = 0; k < d; ++k) x(k) = feature_model.phi_at(h, s, a, k);
      Eigen::VectorXd y = llt.matrixL().solve(x);
      double norm = std::sqrt(y.squaredNorm());
      out[static_cast<std::size_t>(s) * A + a] = std::min(alpha_hat * norm, 1.0);
    }
  return out;
}

struct LowRankConfig {
  int num_states = 0;
  int num_actions = 0;
  int horizon = 0;
  int dim = 0;
  int class_size = 0;
  double epsilon = 0.0;
  double delta = 0.0;
  double tau = 0.0;
  double kappa = 0.0;
  double safety_margin = 0.0;
  double delta_min = 0.0;
  double beta3 = 1.0;

  double epsilon0 = 0.0;
  int t = 2;
  double kappa_tilde = 0.0;
  double a_tilde = 0.0;
  double zeta = 0.0;
  double alpha_hat = 0.0;
  double lambda_n = 0.0;
  double frak_u = 0.0;
  double termination_threshold = 0.0;
  double n_max_theoretical = 0.0;
};

inline LowRankConfig compute_lowrank_constants(int S, int A, int H, int d,
                                               int class_size, double delta,
                                               double tau, double kappa,
                                               double Delta, double Delta_min,
                                               double epsilon,
                                               double beta3 = 1.0) {
  if (S <= 0 || A <= 0 || H <= 0 || d <= 0 || class_size <= 0)
    throw ParameterError("compute_lowrank_constants: sizes must be positive");
  if (epsilon <= 0.0 || epsilon >= 1.0 || delta <= 0.0 || delta >= 1.0)
    throw ParameterError("compute_lowrank_constants: epsilon/delta outside (0,1)");
  if (tau <= 0.0 || tau > 1.0 || kappa <= 0.0 || kappa >= tau)
    throw ParameterError("compute_lowrank_constants: tau/kappa out of range");
  if (!(Delta_min > 0.0) || Delta < Delta_min)
    throw ParameterError("compute_lowrank_constants: need Delta >= Delta_min > 0");
  if (beta3 <= 0.0)
    throw ParameterError("compute_lowrank_constants: beta3 must be positive");

  LowRankConfig cfg;
  cfg.num_states = S;
  cfg.num_actions = A;
  cfg.horizon = H;
  cfg.dim = d;
  cfg.class_size = class_size;
  cfg.epsilon = epsilon;
  cfg.delta = delta;
  cfg.tau = tau;
  cfg.kappa = kappa;
  cfg.safety_margin = Delta;
  cfg.delta_min = Delta_min;
  cfg.beta3 = beta3;

  cfg.epsilon0 = kappa / 6.0;
  cfg.t = 2;
  cfg.kappa_tilde = kappa / 3.0;
  cfg.a_tilde = A / cfg.epsilon0;
  cfg.frak_u = std::min({epsilon / 2.0, Delta_min / 2.0,
                         epsilon * Delta_min / 5.0, tau / 6.0, kappa / 24.0});
  cfg.termination_threshold = Delta * cfg.frak_u / 3.0;

  // Iteration budget and the log terms that depend on it.
  const double phi_psi = static_cast<double>(class_size) * class_size;
  const double h2d4a2 = std::pow(static_cast<double>(H), 2) *
                        std::pow(static_cast<double>(d), 4) *
                        std::pow(static_cast<double>(A), 2);
  const double tt = cfg.termination_threshold;
  double n = 1.0;
  for (int round = 0; round < 100000; ++round) {
    double zeta = std::log(2.0 * phi_psi * n * H / delta);
    double next = std::pow(2.0, 10) * beta3 * h2d4a2 * zeta * zeta /
                      (kappa * kappa * tt * tt) +
                  std::pow(2.0, 12) * 9.0 * beta3 * h2d4a2 * zeta * zeta /
                      std::pow(kappa, 4);
    if (std::abs(next - n) <= 1e-10 * std::max(1.0, next)) {
      n = next;
      break;
    }
    n = next;
  }
  cfg.n_max_theoretical = n;
  cfg.zeta = std::log(2.0 * phi_psi * n * H / delta);
  cfg.lambda_n = beta3 * d * std::log(2.0 * n * H * class_size / delta);
  cfg.alpha_hat = 5.0 * std::sqrt(beta3 * cfg.zeta * (cfg.a_tilde + d * d));
  return cfg;
}

struct LowRankExplorationResult {
  TabularMdp p_hat;
  SaTable bonus;
  RunLog log;
  std::vector<int> final_mle_index;  // per step
  double final_offset = 0.0;         // sqrt(A_tilde * zeta / n) at stop time
};

// Feature-based safe exploration. Every iteration runs one episode per step
// h under the two-step greedy version of the reference policy (randomizing
// at h-1 and h; step h = 0 randomizes only at 0), refits the MLE model per
// step, rebuilds covariances, and maximizes the uncertainty over the safe
// set. Uncertainty is the clipped bonus value plus sqrt(A_tilde * zeta / n).
inline LowRankExplorationResult run_exploration_lowrank(
    const EnvSampler& env, const ModelClass& model_class, const Utility& cost,
    const MarkovPolicy& baseline, const LowRankConfig& cfg, int iteration_cap,
    Prng& rng, const SolverOptions& solver_opts = {}) {
  const int S = env.num_states(), A = env.num_actions(), H = env.horizon();
  if (cfg.num_states != S || cfg.num_actions != A || cfg.horizon != H)
    throw ShapeError("run_exploration_lowrank: config does not match environment");
  model_class.validate();
  baseline.validate();
  cost.validate_range();
  if (!cost.normalized)
    throw PreconditionError(
        "run_exploration_lowrank: cost must carry the normalization certificate");
  if (iteration_cap <= 0)
    throw ParameterError("run_exploration_lowrank: iteration_cap must be positive");

  LowRankExplorationResult out;
  out.log.policy_pool.push_back(baseline);

  SafeSetSpec spec;
  spec.tau = cfg.tau;
  spec.epsilon0 = cfg.epsilon0;
  spec.t = cfg.t;
  spec.kappa_tilde = cfg.kappa_tilde;
  spec.baseline = baseline;
  spec.validate(cfg.kappa);

  std::vector<std::vector<StepTriple>> datasets(H);
  std::vector<std::vector<std::array<int, 2>>> cov_pairs(H);

  MarkovPolicy pi_ref = baseline;
  int pi_ref_id = 0;

  for (int n = 1; n <= iteration_cap; ++n) {
    for (int h = 0; h < H; ++h) {
      std::vector<int> steps;
      if (h >= 1) steps.push_back(h - 1);
      steps.push_back(h);
      MarkovPolicy behavior = greedy_version(pi_ref, cfg.epsilon0, steps);
      Trajectory traj = roll_episode(env, behavior, rng);
      datasets[h].push_back(
          {traj.states[h], traj.actions[h], traj.states[h + 1]});
      // Pairs feeding the step-(h-1) covariance: the state is untouched by
      // the randomization, the action is greedy. The last step reuses its
      // own episode, the only one whose final action is greedy.
      if (h >= 1)
        cov_pairs[h - 1].push_back({traj.states[h - 1], traj.actions[h - 1]});
      if (h == H - 1)
        cov_pairs[H - 1].push_back({traj.states[H - 1], traj.actions[H - 1]});
    }

    std::vector<int> mle_idx(H, 0);
    std::vector<double> min_eigs(H, 0.0);
    SaTable bonus(H, S, A, 0.0);
    TabularMdp p_hat(S, A, H, env.initial_state());
    for (int h = 0; h < H; ++h) {
      mle_idx[h] = mle(datasets[h], model_class, h).index;
      const LowRankModel& pick = model_class.candidates[mle_idx[h]];
      for (int s = 0; s < S; ++s)
        for (int a = 0; a < A; ++a) {
          double sum = 0.0;
          for (int s2 = 0; s2 < S; ++s2) {
            double v = pick.kernel(h, s, a, s2);
            p_hat.p(h, s, a, s2) = v;
            sum += v;
          }
          for (int s2 = 0; s2 < S; ++s2) p_hat.p(h, s, a, s2) /= sum;
        }
      CovMatrix cov = update_covariance(pick, h, cov_pairs[h], cfg.lambda_n);
      min_eigs[h] = cov.min_eigenvalue();
      std::vector<double> step_bonus =
          elliptic_bonus(pick, h, cov, cfg.alpha_hat);
      for (int s = 0; s < S; ++s)
        for (int a = 0; a < A; ++a)
          bonus.at(h, s, a) = step_bonus[static_cast<std::size_t>(s) * A + a];
    }

    double offset = std::sqrt(cfg.a_tilde * cfg.zeta / n);
    TruncatedValueUncertainty ufun(
        bonus, 1.0, TruncatedValueUncertainty::Form::Linear, 1.0, offset);

    EpisodeRecord rec;
    rec.episode = n;
    rec.policy_id = pi_ref_id;
    rec.mle_index = mle_idx;
    rec.min_eig = min_eigs;

    SafeSetMode mode = safe_set_gate(p_hat, cost, ufun, spec);
    rec.mode = mode;
    if (mode == SafeSetMode::BaselineOnly) {
      pi_ref = baseline;
      pi_ref_id = 0;
      rec.u_value = ufun.value(p_hat, baseline);
      rec.solver_status = SolveStatus::BaselineOnly;
    } else {
      SolverOptions opts = solver_opts;
      opts.seed = solver_opts.seed ^ (0xd1342543de82ef95ull * n);
      SolveResult sol = max_uncertainty_safe(p_hat, cost, ufun,
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
    out.p_hat = p_hat;
    out.bonus = bonus;
    out.final_mle_index = mle_idx;
    out.final_offset = offset;
    if (rec.terminated) {
      out.log.terminated = true;
      break;
    }
  }
  return out;
}

}  // namespace sweet
