#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sweet/functional.hpp"
#include "sweet/mdp_ops.hpp"
#include "sweet/prng.hpp"
#include "sweet/types.hpp"

// Constrained policy optimization over the mixture-convex policy space.
//
// Both solver entry points face the same geometry: the feasible set
// { V_c + U <= budget } has a concave left-hand side, so it is not convex,
// and no single convex program is exact. The scheme here is exact-penalty
// Frank-Wolfe over mixtures of deterministic vertices (linearization from
// the truncated-value supergradient, linear oracle by backward induction),
// multi-start, and a final feasibility repair along the mixture segment
// toward a strictly feasible anchor. Results are validated against the
// oracle module in the test suite.
namespace sweet {

enum class SafeSetMode { BaselineOnly, Relaxed };
enum class SolveStatus { Optimal, BaselineOnly, MaxIterations };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Optimal: return "optimal";
    case SolveStatus::BaselineOnly: return "baseline_only";
    case SolveStatus::MaxIterations: return "max_iterations";
  }
  return "?";
}

struct SafeSetSpec {
  double tau = 0.0;
  double epsilon0 = 0.0;
  int t = 0;
  double kappa_tilde = 0.0;
  MarkovPolicy baseline;

  void validate(double kappa) const {
    if (tau <= 0.0 || tau > 1.0)
      throw ParameterError("SafeSetSpec: tau outside (0,1]");
    if (epsilon0 < 0.0 || t < 0 || kappa_tilde <= 0.0)
      throw ParameterError("SafeSetSpec: nonpositive slack parameters");
    if (epsilon0 * t + kappa_tilde >= kappa)
      throw ParameterError(
          "SafeSetSpec: epsilon0*t + kappa_tilde must stay below kappa");
  }

  double baseline_threshold() const { return tau - epsilon0 * t - kappa_tilde; }
  double relaxed_budget() const { return tau - epsilon0 * t; }
};

struct SolveResult {
  MixturePolicy mixture;
  MarkovPolicy markov;
  double objective = 0.0;
  double constraint_value = 0.0;
  SolveStatus status = SolveStatus::Optimal;
  double residual = 0.0;
};

struct SolverOptions {
  int fw_max_iters = 500;
  int random_starts = 8;
  double constraint_tol = 1e-6;
  double penalty_max = 1e6;
  double prune_tol = 1e-9;
  std::uint64_t seed = 0x5eedu;
};

// Exact backward-induction maximizer of the unclipped alpha-weighted value
// of an arbitrary per-step reward; ties broken by lowest action index.
inline MarkovPolicy dp_best_response(const TabularMdp& model,
                                     const SaTable& reward, double alpha) {
  require_same_shape(model, reward, "dp_best_response");
  const int H = model.horizon, S = model.num_states, A = model.num_actions;
  std::vector<double> vnext(S, 0.0), vcur(S, 0.0);
  MarkovPolicy pol(H, S, A, 0.0);
  for (int h = H - 1; h >= 0; --h) {
    for (int s = 0; s < S; ++s) {
      double best = -std::numeric_limits<double>::infinity();
      int best_a = 0;
      for (int a = 0; a < A; ++a) {
        double pv = 0.0;
        for (int s2 = 0; s2 < S; ++s2) pv += model.p(h, s, a, s2) * vnext[s2];
        double q = reward.at(h, s, a) + alpha * pv;
        if (q > best) {
          best = q;
          best_a = a;
        }
      }
      vcur[s] = best;
      pol.at(h, s, best_a) = 1.0;
    }
    vnext = vcur;
  }
  return pol;
}

// Empirical safe-set gate: the baseline is the whole set while the model is
// too uncertain on it, otherwise the constraint is relaxed to the budget.
inline SafeSetMode safe_set_gate(const TabularMdp& model, const Utility& cost,
                                 const UncertaintyFunctional& ufun,
                                 const SafeSetSpec& spec) {
  double vc = evaluate_linear(model, spec.baseline, cost, 1.0).at_initial;
  double u = ufun.value(model, spec.baseline);
  return (vc + u >= spec.baseline_threshold()) ? SafeSetMode::BaselineOnly
                                               : SafeSetMode::Relaxed;
}

namespace solver_detail {

struct Evaluation {
  double objective = 0.0;
  double uval = 0.0;
  double vcost = 0.0;
  double violation = 0.0;
};

// One constrained maximization instance. The objective is
// u_weight * U + V_{linear_objective}; either piece may be absent.
struct Problem {
  const TabularMdp& model;
  const Utility& cost;
  const UncertaintyFunctional& ufun;
  double budget;
  const SaTable* linear_objective = nullptr;
  double u_weight = 1.0;
  // +1 keeps the load below the budget; -1 keeps it above (used by the
  // convex boundary subproblem).
  int constraint_sign = +1;

  Evaluation evaluate(const MarkovPolicy& pi) const {
    Evaluation e;
    e.uval = ufun.value(model, pi);
    e.vcost = evaluate_linear(model, pi, cost, 1.0).at_initial;
    e.objective = u_weight * e.uval;
    if (linear_objective)
      e.objective +=
          evaluate_linear(model, pi, *linear_objective, 1.0).at_initial;
    e.violation =
        std::max(0.0, constraint_sign * (e.vcost + e.uval - budget));
    return e;
  }

  double penalized(const Evaluation& e, double rho) const {
    return e.objective - rho * e.violation;
  }
};

struct Iterate {
  MixturePolicy mixture;
  MarkovPolicy markov;
  Evaluation eval;
};

inline Iterate make_iterate(const Problem& prob, const MarkovPolicy& start) {
  Iterate it;
  it.mixture = MixturePolicy(start);
  it.markov = start;
  it.eval = prob.evaluate(start);
  return it;
}

// Weights of the first-order expansion of the penalized objective along a
// mixture step toward another policy. For any candidate vertex v the
// directional derivative equals <occupancy(v), w>, and <occupancy(x), w> = 0,
// so the linear-oracle value is exactly the Frank-Wolfe gap.
inline SaTable direction_weights(const Problem& prob, const Iterate& x,
                                 double rho) {
  const TabularMdp& m = prob.model;
  const int H = m.horizon, S = m.num_states, A = m.num_actions;

  SaTable grad(H, S, A, 0.0);
  bool violated = x.eval.violation > 0.0;

  OccupancyMeasure occ = occupancy(m, x.markov);

  // Linear pieces contribute rho_h(s) * Q(h,s,a).
  auto add_linear = [&](const SaTable& reward, double coeff) {
    ValueTables tab = evaluate_linear(m, x.markov, reward, 1.0);
    for (int h = 0; h < H; ++h)
      for (int s = 0; s < S; ++s) {
        double rs = occ.state_marginal(h, s);
        if (rs == 0.0) continue;
        for (int a = 0; a < A; ++a)
          grad.at(h, s, a) += coeff * rs * tab.qvalue(h, s, a);
      }
  };

  if (prob.linear_objective) add_linear(*prob.linear_objective, 1.0);
  double pen = violated ? -rho * prob.constraint_sign : 0.0;
  if (pen != 0.0) add_linear(prob.cost, pen);

  double u_coeff = prob.u_weight + pen;
  if (u_coeff != 0.0 && !prob.ufun.is_zero()) {
    SaTable ug = prob.ufun.policy_gradient(m, x.markov);
    for (std::size_t k = 0; k < grad.values.size(); ++k)
      grad.values[k] += u_coeff * ug.values[k];
  }

  SaTable w(H, S, A, 0.0);
  for (int h = 0; h < H; ++h)
    for (int s = 0; s < S; ++s) {
      double rs = occ.state_marginal(h, s);
      if (rs <= 0.0) continue;
      double avg = 0.0;
      for (int a = 0; a < A; ++a) avg += x.markov.at(h, s, a) * grad.at(h, s, a);
      for (int a = 0; a < A; ++a)
        w.at(h, s, a) = (grad.at(h, s, a) - avg) / rs;
    }
  return w;
}

inline Iterate blend(const Problem& prob, const Iterate& x,
                     const MarkovPolicy& vertex, double gamma,
                     double prune_tol) {
  Iterate out;
  out.mixture = x.mixture;
  for (double& wgt : out.mixture.weights) wgt *= (1.0 - gamma);
  out.mixture.vertices.push_back(vertex);
  out.mixture.weights.push_back(gamma);

  // Prune negligible vertices and renormalize.
  MixturePolicy pruned;
  double total = 0.0;
  for (std::size_t i = 0; i < out.mixture.vertices.size(); ++i) {
    if (out.mixture.weights[i] < prune_tol) continue;
    pruned.vertices.push_back(out.mixture.vertices[i]);
    pruned.weights.push_back(out.mixture.weights[i]);
    total += out.mixture.weights[i];
  }
  for (double& wgt : pruned.weights) wgt /= total;
  out.mixture = std::move(pruned);
  out.markov = mixture_to_markov(prob.model, out.mixture);
  out.eval = prob.evaluate(out.markov);
  return out;
}

struct FwOutcome {
  Iterate last;
  std::optional<Iterate> best_feasible;
  bool hit_cap = false;
};

inline void track_feasible(const Problem&, double tol, const Iterate& it,
                           std::optional<Iterate>& best) {
  if (it.eval.violation <= tol &&
      (!best || it.eval.objective > best->eval.objective))
    best = it;
}

inline FwOutcome frank_wolfe(const Problem& prob, Iterate start, double rho,
                             const SolverOptions& opts) {
  FwOutcome out;
  Iterate x = std::move(start);
  track_feasible(prob, opts.constraint_tol, x, out.best_feasible);

  const double gap_tol = 1e-11;
  int k = 0;
  for (; k < opts.fw_max_iters; ++k) {
    SaTable w = direction_weights(prob, x, rho);
    MarkovPolicy v = dp_best_response(prob.model, w, 1.0);
    double gap = evaluate_linear(prob.model, v, w, 1.0).at_initial;
    if (gap <= gap_tol) break;

    double cur = prob.penalized(x.eval, rho);
    double default_step = 2.0 / (k + 2.0);
    double grid[] = {default_step, 1.0,  0.5,  0.25, 0.125, 0.0625,
                     0.03125,      0.01, 3e-3, 1e-3, 3e-4,  1e-4};
    Iterate best_cand;
    double best_val = cur;
    bool improved = false;
    for (double gamma : grid) {
      if (gamma <= 0.0 || gamma > 1.0) continue;
      Iterate cand = blend(prob, x, v, gamma, opts.prune_tol);
      double val = prob.penalized(cand.eval, rho);
      track_feasible(prob, opts.constraint_tol, cand, out.best_feasible);
      if (val > best_val + 1e-14) {
        best_val = val;
        best_cand = std::move(cand);
        improved = true;
      }
    }
    if (!improved) break;
    x = std::move(best_cand);
  }
  out.hit_cap = (k >= opts.fw_max_iters);
  out.last = std::move(x);
  return out;
}

// Largest mixture weight on `x` such that blending with the feasible anchor
// satisfies the constraint: the constraint load is concave along the
// segment, so bisection lands on the crossing and drives the residual to 0.
inline Iterate repair_toward(const Problem& prob, const Iterate& x,
                             const MarkovPolicy& anchor,
                             const SolverOptions& opts) {
  auto blend_point = [&](double beta) {
    Iterate it;
    it.mixture = MixturePolicy({anchor}, {1.0 - beta});
    for (std::size_t i = 0; i < x.mixture.vertices.size(); ++i) {
      it.mixture.vertices.push_back(x.mixture.vertices[i]);
      it.mixture.weights.push_back(beta * x.mixture.weights[i]);
    }
    it.markov = mixture_to_markov(prob.model, it.mixture);
    it.eval = prob.evaluate(it.markov);
    return it;
  };

  double lo = 0.0, hi = 1.0;
  Iterate best = blend_point(0.0);
  if (best.eval.violation > opts.constraint_tol) return best;  // anchor broken
  for (int i = 0; i < 60; ++i) {
    double mid = 0.5 * (lo + hi);
    Iterate cand = blend_point(mid);
    if (cand.eval.violation <= opts.constraint_tol) {
      lo = mid;
      best = std::move(cand);
    } else {
      hi = mid;
    }
  }
  return best;
}

// Euclidean projection of one action row onto the probability simplex.
inline void project_row_to_simplex(double* row, int n) {
  // Sort-free variant: iteratively shift and clip.
  double shift = 0.0;
  for (int it = 0; it < 60; ++it) {
    double sum = 0.0;
    int active = 0;
    for (int i = 0; i < n; ++i) {
      double v = row[i] - shift;
      if (v > 0.0) {
        sum += v;
        ++active;
      }
    }
    if (active == 0) {
      shift -= 1.0 / n;
      continue;
    }
    double delta = (sum - 1.0) / active;
    if (std::abs(delta) < 1e-15) break;
    shift += delta;
  }
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    row[i] = std::max(0.0, row[i] - shift);
    total += row[i];
  }
  if (total <= 0.0) {
    for (int i = 0; i < n; ++i) row[i] = 1.0 / n;
  } else {
    for (int i = 0; i < n; ++i) row[i] /= total;
  }
}

// Projected ascent along the constraint boundary. Away from the boundary the
// direction is the plain objective gradient; on it, the load-gradient
// component is removed so the step trades cost against uncertainty while the
// constraint stays active. Candidates that overshoot are blended back.
inline Iterate boundary_ascent(const Problem& prob, Iterate best,
                               const SolverOptions& opts) {
  if (best.eval.violation > opts.constraint_tol) return best;
  const int H = prob.model.horizon, S = prob.model.num_states,
            A = prob.model.num_actions;
  const double slack_band = 1e-7;

  auto gradients = [&](const MarkovPolicy& pi, SaTable& g_obj,
                       SaTable& g_load) {
    OccupancyMeasure occ = occupancy(prob.model, pi);
    ValueTables ct = evaluate_linear(prob.model, pi, prob.cost, 1.0);
    SaTable ug = prob.ufun.is_zero()
                     ? SaTable(H, S, A, 0.0)
                     : prob.ufun.policy_gradient(prob.model, pi);
    g_obj = SaTable(H, S, A, 0.0);
    g_load = SaTable(H, S, A, 0.0);
    for (int h = 0; h < H; ++h)
      for (int s = 0; s < S; ++s) {
        double rs = occ.state_marginal(h, s);
        for (int a = 0; a < A; ++a) {
          double lin = rs * ct.qvalue(h, s, a);
          g_load.at(h, s, a) = lin + ug.at(h, s, a);
          g_obj.at(h, s, a) = prob.u_weight * ug.at(h, s, a);
        }
      }
    if (prob.linear_objective) {
      ValueTables rt = evaluate_linear(prob.model, pi, *prob.linear_objective, 1.0);
      for (int h = 0; h < H; ++h)
        for (int s = 0; s < S; ++s) {
          double rs = occ.state_marginal(h, s);
          for (int a = 0; a < A; ++a)
            g_obj.at(h, s, a) += rs * rt.qvalue(h, s, a);
        }
    }
  };

  for (int iter = 0; iter < 400; ++iter) {
    SaTable g_obj, g_load;
    gradients(best.markov, g_obj, g_load);
    SaTable dir = g_obj;
    double slack = prob.constraint_sign *
                   (prob.budget - (best.eval.vcost + best.eval.uval));
    bool active = best.eval.violation > 0.0 || slack < slack_band;
    if (active) {
      double num = 0.0, den = 0.0;
      for (std::size_t k = 0; k < dir.values.size(); ++k) {
        num += g_obj.values[k] * g_load.values[k];
        den += g_load.values[k] * g_load.values[k];
      }
      if (den > 0.0) {
        double theta = num / den;
        for (std::size_t k = 0; k < dir.values.size(); ++k)
          dir.values[k] -= theta * g_load.values[k];
      }
    }

    bool improved = false;
    for (double eta : {0.5, 0.2, 0.08, 0.03, 0.01, 0.003, 0.001, 3e-4, 1e-4}) {
      MarkovPolicy cand = best.markov;
      for (int h = 0; h < H; ++h)
        for (int s = 0; s < S; ++s) {
          double* row = &cand.probs[cand.idx(h, s, 0)];
          for (int a = 0; a < A; ++a) row[a] += eta * dir.at(h, s, a);
          project_row_to_simplex(row, A);
        }
      Evaluation e = prob.evaluate(cand);
      if (e.violation > opts.constraint_tol) {
        // Pull back toward the current feasible point.
        double lo = 0.0, hi = 1.0;
        MarkovPolicy kept = best.markov;
        Evaluation kept_eval = best.eval;
        for (int it2 = 0; it2 < 25; ++it2) {
          double mid = 0.5 * (lo + hi);
          MarkovPolicy blend(H, S, A, 0.0);
          for (std::size_t k = 0; k < blend.probs.size(); ++k)
            blend.probs[k] =
                mid * cand.probs[k] + (1.0 - mid) * best.markov.probs[k];
          Evaluation be = prob.evaluate(blend);
          if (be.violation <= opts.constraint_tol) {
            lo = mid;
            kept = std::move(blend);
            kept_eval = be;
          } else {
            hi = mid;
          }
        }
        cand = std::move(kept);
        e = kept_eval;
      }
      if (e.objective > best.eval.objective + 1e-13) {
        best.markov = std::move(cand);
        best.eval = e;
        improved = true;
        break;
      }
    }
    if (!improved) break;
  }
  best.mixture = MixturePolicy(best.markov);
  return best;
}

// Deterministic coordinate polish inside the feasible set. The penalized
// Frank-Wolfe pass can stall slightly off the constrained optimum because
// the feasible region is reverse-convex; greedy row moves with a decaying
// step recover the remaining gap. Only feasible improvements are accepted,
// and the result is repackaged as a single-vertex mixture.
inline Iterate polish_feasible(const Problem& prob, Iterate best,
                               const SolverOptions& opts) {
  if (best.eval.violation > opts.constraint_tol) return best;
  const int H = prob.model.horizon, S = prob.model.num_states,
            A = prob.model.num_actions;

  // A move that leaves the feasible set is pulled back to the boundary by
  // blending toward the current (feasible) point.
  auto repaired = [&](MarkovPolicy cand) {
    Evaluation e = prob.evaluate(cand);
    if (e.violation <= opts.constraint_tol)
      return std::pair<MarkovPolicy, Evaluation>(std::move(cand), e);
    double lo = 0.0, hi = 1.0;  // blend weight on the candidate
    MarkovPolicy kept = best.markov;
    Evaluation kept_eval = best.eval;
    for (int it = 0; it < 30; ++it) {
      double mid = 0.5 * (lo + hi);
      MarkovPolicy blend(H, S, A, 0.0);
      for (std::size_t k = 0; k < blend.probs.size(); ++k)
        blend.probs[k] =
            mid * cand.probs[k] + (1.0 - mid) * best.markov.probs[k];
      Evaluation be = prob.evaluate(blend);
      if (be.violation <= opts.constraint_tol) {
        lo = mid;
        kept = std::move(blend);
        kept_eval = be;
      } else {
        hi = mid;
      }
    }
    return std::pair<MarkovPolicy, Evaluation>(std::move(kept), kept_eval);
  };

  double eta = 0.25;
  for (int sweep = 0; sweep < 18; ++sweep) {
    bool improved = false;
    for (int h = 0; h < H; ++h)
      for (int s = 0; s < S; ++s)
        for (int a = 0; a < A; ++a) {
          MarkovPolicy cand = best.markov;
          for (int other = 0; other < A; ++other)
            cand.at(h, s, other) *= (1.0 - eta);
          cand.at(h, s, a) += eta;
          auto [fixed, e] = repaired(std::move(cand));
          if (e.violation <= opts.constraint_tol &&
              e.objective > best.eval.objective + 1e-13) {
            best.markov = std::move(fixed);
            best.eval = e;
            improved = true;
          }
        }
    if (!improved) eta *= 0.5;
    if (eta < 1e-4) break;
  }
  best.mixture = MixturePolicy(best.markov);
  return best;
}

inline MarkovPolicy random_policy(int H, int S, int A, Prng& rng) {
  MarkovPolicy pi(H, S, A, 0.0);
  for (int h = 0; h < H; ++h)
    for (int s = 0; s < S; ++s) {
      double sum = 0.0;
      for (int a = 0; a < A; ++a) {
        double e = rng.next_exponential();
        pi.at(h, s, a) = e;
        sum += e;
      }
      for (int a = 0; a < A; ++a) pi.at(h, s, a) /= sum;
    }
  return pi;
}

// Multiplier-sweep starts. For weights in [0, 1) the blend
// (1 - lam) * U - lam * V_c is concave, so plain Frank-Wolfe finds its global
// maximizer; sweeping lam traces different faces of the constraint boundary
// and seeds the constrained solve with globally informed points.
inline std::vector<MarkovPolicy> uncertainty_sweep_starts(
    const TabularMdp& model, const Utility& cost,
    const UncertaintyFunctional& ufun, const SolverOptions& opts) {
  const int H = model.horizon, S = model.num_states, A = model.num_actions;
  std::vector<MarkovPolicy> out;
  for (double lam : {0.0, 0.2, 0.4, 0.6, 0.8, 0.92}) {
    SaTable neg_cost(H, S, A, 0.0);
    for (std::size_t k = 0; k < neg_cost.values.size(); ++k)
      neg_cost.values[k] = -lam * cost.values[k];
    Problem free_prob{model,
                      cost,
                      ufun,
                      std::numeric_limits<double>::infinity(),
                      &neg_cost,
                      1.0 - lam};
    Iterate x = make_iterate(free_prob, MarkovPolicy::uniform(H, S, A));
    FwOutcome fw = frank_wolfe(free_prob, std::move(x), 0.0, opts);
    out.push_back(fw.last.markov);
  }
  return out;
}

// Same idea for a linear objective against the concave load: the blend is
// convex, so its maximum sits at a vertex; iterated linearization jumps are
// monotone and land on a strong vertex per multiplier.
inline std::vector<MarkovPolicy> reward_sweep_starts(
    const TabularMdp& model, const SaTable& reward, const Utility& cost,
    const UncertaintyFunctional& ufun) {
  const int H = model.horizon, S = model.num_states, A = model.num_actions;
  std::vector<MarkovPolicy> out;
  Problem load_prob{model, cost, ufun, std::numeric_limits<double>::infinity(),
                    nullptr, 1.0};
  for (double lam : {0.25, 0.5, 1.0, 2.0, 4.0}) {
    Iterate x = make_iterate(load_prob, dp_best_response(model, reward, 1.0));
    auto blend_value = [&](const Iterate& it) {
      return evaluate_linear(model, it.markov, reward, 1.0).at_initial -
             lam * (it.eval.vcost + it.eval.uval);
    };
    for (int iter = 0; iter < 40; ++iter) {
      SaTable w = direction_weights(load_prob, x, 0.0);  // advantage of U
      ValueTables rt = evaluate_linear(model, x.markov, reward, 1.0);
      ValueTables ct = evaluate_linear(model, x.markov, cost, 1.0);
      for (int h = 0; h < H; ++h)
        for (int s = 0; s < S; ++s) {
          double vr = 0.0, vc = 0.0;
          for (int a = 0; a < A; ++a) {
            vr += x.markov.at(h, s, a) * rt.qvalue(h, s, a);
            vc += x.markov.at(h, s, a) * ct.qvalue(h, s, a);
          }
          for (int a = 0; a < A; ++a)
            w.at(h, s, a) = (rt.qvalue(h, s, a) - vr) -
                            lam * ((ct.qvalue(h, s, a) - vc) + w.at(h, s, a));
        }
      MarkovPolicy vtx = dp_best_response(model, w, 1.0);
      Iterate cand = make_iterate(load_prob, vtx);
      if (blend_value(cand) > blend_value(x) + 1e-13) {
        x = std::move(cand);
      } else {
        break;
      }
    }
    out.push_back(x.markov);
  }
  return out;
}

// Dense sampled starts: random policies, each pulled back to feasibility
// along the segment toward the anchor, ranked by repaired objective. This is
// the global safety net for boundary optima that neither the multiplier
// sweep nor penalty descent reaches.
inline std::vector<MarkovPolicy> sampled_starts(const Problem& prob,
                                                const MarkovPolicy& anchor,
                                                int count, int keep,
                                                Prng& rng) {
  const int H = prob.model.horizon, S = prob.model.num_states,
            A = prob.model.num_actions;
  struct Scored {
    MarkovPolicy pi;
    double obj;
  };
  std::vector<Scored> top;
  Evaluation anchor_eval = prob.evaluate(anchor);
  bool anchor_ok = anchor_eval.violation <= 0.0;
  for (int i = 0; i < count; ++i) {
    MarkovPolicy pi = random_policy(H, S, A, rng);
    Evaluation e = prob.evaluate(pi);
    if (e.violation > 0.0) {
      if (!anchor_ok) continue;
      double lo = 0.0, hi = 1.0;  // weight on the random draw
      MarkovPolicy kept = anchor;
      Evaluation kept_eval = anchor_eval;
      for (int it = 0; it < 22; ++it) {
        double mid = 0.5 * (lo + hi);
        MarkovPolicy blend(H, S, A, 0.0);
        for (std::size_t k = 0; k < blend.probs.size(); ++k)
          blend.probs[k] =
              mid * pi.probs[k] + (1.0 - mid) * anchor.probs[k];
        Evaluation be = prob.evaluate(blend);
        if (be.violation <= 0.0) {
          lo = mid;
          kept = std::move(blend);
          kept_eval = be;
        } else {
          hi = mid;
        }
      }
      pi = std::move(kept);
      e = kept_eval;
    }
    if (static_cast<int>(top.size()) < keep) {
      top.push_back({std::move(pi), e.objective});
    } else {
      std::size_t worst = 0;
      for (std::size_t k = 1; k < top.size(); ++k)
        if (top[k].obj < top[worst].obj) worst = k;
      if (e.objective > top[worst].obj) top[worst] = {std::move(pi), e.objective};
    }
  }
  std::vector<MarkovPolicy> out;
  for (auto& s : top) out.push_back(std::move(s.pi));
  return out;
}

// Exact route for the boundary case of the uncertainty maximization. On the
// active boundary U equals budget - V_c, so the best boundary point solves a
// convex program: minimize the linear V_c over {V_c + U >= budget}. Its
// Lagrangian inner problems max omega * U - (1 - omega) * V_c are concave,
// hence globally solvable by plain Frank-Wolfe; bisection on omega brackets
// the boundary and a final mixture crossing lands on it from the feasible
// side.
inline MarkovPolicy explore_boundary_candidate(const TabularMdp& model,
                                               const Utility& cost,
                                               const UncertaintyFunctional& ufun,
                                               double budget,
                                               const SolverOptions& opts) {
  const int H = model.horizon, S = model.num_states, A = model.num_actions;
  auto inner = [&](double omega) {
    SaTable scaled(H, S, A, 0.0);
    for (std::size_t k = 0; k < scaled.values.size(); ++k)
      scaled.values[k] = -(1.0 - omega) * cost.values[k];
    Problem p{model, cost, ufun, std::numeric_limits<double>::infinity(),
              &scaled, omega};
    Iterate x = frank_wolfe(p, make_iterate(p, MarkovPolicy::uniform(H, S, A)),
                            0.0, opts)
                    .last;
    // The evaluations are reused through load only.
    return x;
  };
  auto load_of = [](const Iterate& it) {
    return it.eval.vcost + it.eval.uval;
  };

  Iterate low = inner(0.0), high = inner(1.0);
  if (load_of(high) <= budget) return high.markov;  // everything feasible
  if (load_of(low) >= budget) return low.markov;    // no crossing to find
  double lo = 0.0, hi = 1.0;
  for (int i = 0; i < 50; ++i) {
    double mid = 0.5 * (lo + hi);
    Iterate cand = inner(mid);
    if (load_of(cand) >= budget) {
      hi = mid;
      high = std::move(cand);
    } else {
      lo = mid;
      low = std::move(cand);
    }
  }

  // Mixture crossing: the load is concave in the mixing weight and brackets
  // the budget, so the largest feasible weight sits on the boundary.
  TabularMdp const& m = model;
  double glo = 0.0, ghi = 1.0;
  MarkovPolicy best = low.markov;
  for (int i = 0; i < 50; ++i) {
    double gamma = 0.5 * (glo + ghi);
    MarkovPolicy mix = mixture_to_markov(
        m, MixturePolicy({low.markov, high.markov}, {1.0 - gamma, gamma}));
    double l = evaluate_linear(m, mix, cost, 1.0).at_initial +
               ufun.value(m, mix);
    if (l <= budget) {
      glo = gamma;
      best = std::move(mix);
    } else {
      ghi = gamma;
    }
  }
  return best;
}

// Boundary candidate for a linear reward objective on enumerable instances:
// a multiplier bisection over the deterministic vertices brackets the budget
// and the bracketing pair is mixed onto the boundary from the feasible side.
inline std::optional<MarkovPolicy> plan_boundary_candidate(
    const TabularMdp& model, const SaTable& reward, const Utility& cost,
    const UncertaintyFunctional& ufun, double budget,
    const std::vector<MarkovPolicy>& vertices) {
  if (vertices.empty()) return std::nullopt;
  std::vector<double> vr, vload;
  for (const auto& v : vertices) {
    vr.push_back(evaluate_linear(model, v, reward, 1.0).at_initial);
    vload.push_back(evaluate_linear(model, v, cost, 1.0).at_initial +
                    ufun.value(model, v));
  }
  auto argmax_at = [&](double omega) {
    std::size_t best = 0;
    double best_val = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < vertices.size(); ++k) {
      double val = vr[k] - omega * vload[k];
      if (val > best_val) {
        best_val = val;
        best = k;
      }
    }
    return best;
  };
  std::size_t k0 = argmax_at(0.0);
  if (vload[k0] <= budget) return vertices[k0];
  double lo = 0.0, hi = 1.0;
  std::size_t k_hi = argmax_at(hi);
  int guard = 0;
  while (vload[k_hi] > budget && guard++ < 60) {
    lo = hi;
    hi *= 2.0;
    k_hi = argmax_at(hi);
  }
  if (vload[k_hi] > budget) return std::nullopt;
  std::size_t k_lo = k0;
  for (int i = 0; i < 80; ++i) {
    double mid = 0.5 * (lo + hi);
    std::size_t km = argmax_at(mid);
    if (vload[km] > budget)
      k_lo = km, lo = mid;
    else
      k_hi = km, hi = mid;
  }
  // Mix the bracketing vertices down to the boundary.
  double glo = 0.0, ghi = 1.0;  // weight on the infeasible-side vertex
  MarkovPolicy best = vertices[k_hi];
  for (int i = 0; i < 50; ++i) {
    double gamma = 0.5 * (glo + ghi);
    MarkovPolicy mix = mixture_to_markov(
        model, MixturePolicy({vertices[k_lo], vertices[k_hi]},
                             {gamma, 1.0 - gamma}));
    double l = evaluate_linear(model, mix, cost, 1.0).at_initial +
               ufun.value(model, mix);
    if (l <= budget) {
      glo = gamma;
      best = std::move(mix);
    } else {
      ghi = gamma;
    }
  }
  return best;
}

// Vertex candidates for small instances: every deterministic policy when the
// count is manageable.
inline std::vector<MarkovPolicy> vertex_starts(int H, int S, int A) {
  std::vector<MarkovPolicy> out;
  double count = std::pow(static_cast<double>(A), H * S);
  if (count > 1024.0) return out;
  long long total = static_cast<long long>(count + 0.5);
  for (long long code = 0; code < total; ++code) {
    MarkovPolicy pi(H, S, A, 0.0);
    long long rem = code;
    for (int h = 0; h < H; ++h)
      for (int s = 0; s < S; ++s) {
        pi.at(h, s, static_cast<int>(rem % A)) = 1.0;
        rem /= A;
      }
    out.push_back(std::move(pi));
  }
  return out;
}

// Penalty continuation from one start; returns the best feasible point found
// (repaired if needed) plus a cap flag.
inline std::pair<std::optional<Iterate>, bool> solve_from(
    const Problem& prob, const MarkovPolicy& start,
    const MarkovPolicy* repair_anchor, const SolverOptions& opts) {
  Iterate x = make_iterate(prob, start);
  std::optional<Iterate> best_feasible;
  track_feasible(prob, opts.constraint_tol, x, best_feasible);
  bool capped = false;

  double rho = 1.0;
  while (true) {
    FwOutcome fw = frank_wolfe(prob, x, rho, opts);
    if (fw.best_feasible)
      track_feasible(prob, opts.constraint_tol, *fw.best_feasible,
                     best_feasible);
    x = fw.last;
    capped = capped || fw.hit_cap;
    if (x.eval.violation <= opts.constraint_tol) break;
    rho *= 2.0;
    if (rho > opts.penalty_max) {
      capped = true;
      break;
    }
  }

  if (x.eval.violation > opts.constraint_tol && repair_anchor != nullptr) {
    Iterate repaired = repair_toward(prob, x, *repair_anchor, opts);
    track_feasible(prob, opts.constraint_tol, repaired, best_feasible);
  }
  track_feasible(prob, opts.constraint_tol, x, best_feasible);
  if (!best_feasible) return {std::nullopt, capped};
  return {best_feasible, capped};
}

inline SolveResult pack_result(const Problem& prob, const Iterate& it,
                               SolveStatus status) {
  SolveResult r;
  r.mixture = it.mixture;
  r.markov = it.markov;
  r.objective = it.eval.objective;
  r.constraint_value = it.eval.vcost + it.eval.uval;
  r.status = status;
  r.residual = std::max(0.0, r.constraint_value - prob.budget);
  return r;
}

// Exact single-constraint solve used when the uncertainty functional is
// identically zero: bisection on the Lagrange multiplier with backward
// induction inner solves, then a two-policy mix to meet a binding
// constraint with equality.
inline SolveResult exact_cmdp(const TabularMdp& model, const SaTable& reward,
                              const Utility& cost, double budget) {
  const int H = model.horizon, S = model.num_states, A = model.num_actions;
  auto value_of_table = [&](const MarkovPolicy& pi, const SaTable& u) {
    return evaluate_linear(model, pi, u, 1.0).at_initial;
  };
  auto inner = [&](double lambda) {
    SaTable w(H, S, A, 0.0);
    for (std::size_t k = 0; k < w.values.size(); ++k)
      w.values[k] = reward.values[k] - lambda * cost.values[k];
    return dp_best_response(model, w, 1.0);
  };

  SolveResult r;
  MinCostResult mc = min_cost_value(model, cost);
  if (mc.value > budget + 1e-12) {
    r.mixture = MixturePolicy(mc.policy);
    r.markov = mc.policy;
    r.objective = value_of_table(mc.policy, reward);
    r.constraint_value = mc.value;
    r.residual = mc.value - budget;
    r.status = SolveStatus::MaxIterations;
    return r;
  }

  MarkovPolicy p0 = inner(0.0);
  double c0 = value_of_table(p0, cost);
  if (c0 <= budget + 1e-12) {
    r.mixture = MixturePolicy(p0);
    r.markov = p0;
    r.objective = value_of_table(p0, reward);
    r.constraint_value = c0;
    r.residual = 0.0;
    r.status = SolveStatus::Optimal;
    return r;
  }

  double lo = 0.0, hi = 1.0;
  MarkovPolicy p_lo = p0, p_hi = inner(hi);
  int guard = 0;
  while (value_of_table(p_hi, cost) > budget && guard++ < 120) {
    lo = hi;
    p_lo = p_hi;
    hi *= 2.0;
    p_hi = inner(hi);
  }
  for (int i = 0; i < 240 && (hi - lo) > 0.0; ++i) {
    double mid = 0.5 * (lo + hi);
    MarkovPolicy pm = inner(mid);
    if (value_of_table(pm, cost) > budget) {
      lo = mid;
      p_lo = pm;
    } else {
      hi = mid;
      p_hi = pm;
    }
  }
  double c_lo = value_of_table(p_lo, cost);
  double c_hi = value_of_table(p_hi, cost);
  double gamma =
      c_lo > c_hi ? std::clamp((budget - c_hi) / (c_lo - c_hi), 0.0, 1.0) : 0.0;
  r.mixture = MixturePolicy({p_lo, p_hi}, {gamma, 1.0 - gamma});
  r.markov = mixture_to_markov(model, r.mixture);
  r.objective =
      gamma * value_of_table(p_lo, reward) + (1.0 - gamma) * value_of_table(p_hi, reward);
  r.constraint_value = gamma * c_lo + (1.0 - gamma) * c_hi;
  r.residual = std::max(0.0, r.constraint_value - budget);
  r.status = SolveStatus::Optimal;
  return r;
}

// Local vertex descent for minimizing the concave load V_c + U: jumping to
// the vertex that minimizes the linearization can only decrease a concave
// function, and the global minimum over the occupancy polytope sits at a
// vertex.
inline Iterate minimize_load(const Problem& prob, const MarkovPolicy& start) {
  Iterate x = make_iterate(prob, start);
  auto load = [](const Iterate& it) { return it.eval.vcost + it.eval.uval; };
  for (int iter = 0; iter < 60; ++iter) {
    // Gradient of the load, advantage-transformed like direction_weights.
    SaTable w = direction_weights(
        Problem{prob.model, prob.cost, prob.ufun, prob.budget, nullptr}, x,
        0.0);
    // w linearizes U (the objective part); add the cost advantage.
    ValueTables ct = evaluate_linear(prob.model, x.markov, prob.cost, 1.0);
    for (int h = 0; h < prob.model.horizon; ++h)
      for (int s = 0; s < prob.model.num_states; ++s) {
        double vs = 0.0;
        for (int a = 0; a < prob.model.num_actions; ++a)
          vs += x.markov.at(h, s, a) * ct.qvalue(h, s, a);
        for (int a = 0; a < prob.model.num_actions; ++a)
          w.at(h, s, a) += ct.qvalue(h, s, a) - vs;
      }
    for (double& v : w.values) v = -v;  // descend
    MarkovPolicy vtx = dp_best_response(prob.model, w, 1.0);
    Iterate cand = make_iterate(prob, vtx);
    if (load(cand) < load(x) - 1e-13) {
      x = std::move(cand);
    } else {
      break;
    }
  }
  return x;
}

}  // namespace solver_detail

// Maximize U over the relaxed empirical safe set {V_c + U <= budget}.
// The baseline must be strictly feasible.
inline SolveResult max_uncertainty_safe(const TabularMdp& model,
                                        const Utility& cost,
                                        const UncertaintyFunctional& ufun,
                                        double budget,
                                        const MarkovPolicy& baseline,
                                        const SolverOptions& opts = {}) {
  require_same_shape(model, cost, "max_uncertainty_safe");
  require_same_shape(model, baseline, "max_uncertainty_safe");
  solver_detail::Problem prob{model, cost, ufun, budget, nullptr};

  solver_detail::Evaluation base_eval = prob.evaluate(baseline);
  if (base_eval.vcost + base_eval.uval >= budget)
    throw PreconditionError(
        "max_uncertainty_safe: baseline is not strictly feasible");

  if (ufun.is_zero()) {
    // Constant objective; the baseline is as good as anything feasible.
    solver_detail::Iterate it = solver_detail::make_iterate(prob, baseline);
    return solver_detail::pack_result(prob, it, SolveStatus::Optimal);
  }

  const int H = model.horizon, S = model.num_states, A = model.num_actions;
  Prng rng(opts.seed);
  std::vector<MarkovPolicy> starts;
  starts.push_back(baseline);
  starts.push_back(MarkovPolicy::uniform(H, S, A));
  for (const auto& s :
       solver_detail::uncertainty_sweep_starts(model, cost, ufun, opts))
    starts.push_back(s);
  starts.push_back(solver_detail::explore_boundary_candidate(
      model, cost, ufun, budget, opts));
  for (const auto& s :
       solver_detail::sampled_starts(prob, baseline, 1024, 8, rng))
    starts.push_back(s);
  for (int i = 0; i < opts.random_starts; ++i)
    starts.push_back(solver_detail::random_policy(H, S, A, rng));

  std::vector<solver_detail::Iterate> finalists;
  bool capped = false;
  for (const auto& start : starts) {
    auto [found, cap] = solver_detail::solve_from(prob, start, &baseline, opts);
    capped = capped || cap;
    if (found) finalists.push_back(std::move(*found));
  }
  // The strictly feasible baseline guarantees at least one feasible point.
  if (finalists.empty())
    finalists.push_back(solver_detail::make_iterate(prob, baseline));
  std::sort(finalists.begin(), finalists.end(),
            [](const auto& a, const auto& b) {
              return a.eval.objective > b.eval.objective;
            });
  solver_detail::Iterate best = finalists.front();
  for (std::size_t i = 0; i < finalists.size() && i < 8; ++i) {
    solver_detail::Iterate polished = solver_detail::polish_feasible(
        prob,
        solver_detail::boundary_ascent(prob, std::move(finalists[i]), opts),
        opts);
    if (polished.eval.objective > best.eval.objective) best = polished;
  }
  return solver_detail::pack_result(
      prob, best, capped ? SolveStatus::MaxIterations : SolveStatus::Optimal);
}

// Planning: maximize the linear value of `reward` subject to
// V_{c*} + U <= tau_star.
inline SolveResult plan(const TabularMdp& model, const Utility& reward,
                        const Utility& cost_star, double tau_star,
                        const UncertaintyFunctional& ufun,
                        const SolverOptions& opts = {}) {
  require_same_shape(model, reward, "plan");
  require_same_shape(model, cost_star, "plan");
  if (ufun.is_zero())
    return solver_detail::exact_cmdp(model, reward, cost_star, tau_star);

  solver_detail::Problem prob{model, cost_star, ufun, tau_star, &reward, 0.0};
  const int H = model.horizon, S = model.num_states, A = model.num_actions;

  // Feasibility phase: hunt for a strictly feasible anchor.
  MinCostResult mc = min_cost_value(model, cost_star);
  Prng rng(opts.seed ^ 0x9e3779b97f4a7c15ull);
  std::vector<MarkovPolicy> probe_starts;
  probe_starts.push_back(mc.policy);
  probe_starts.push_back(MarkovPolicy::uniform(H, S, A));
  for (int i = 0; i < 4; ++i)
    probe_starts.push_back(solver_detail::random_policy(H, S, A, rng));

  std::optional<solver_detail::Iterate> anchor;
  double least_load = std::numeric_limits<double>::infinity();
  solver_detail::Iterate least_point;
  for (const auto& start : probe_starts) {
    solver_detail::Iterate it = solver_detail::minimize_load(prob, start);
    double load = it.eval.vcost + it.eval.uval;
    if (load < least_load) {
      least_load = load;
      least_point = it;
    }
    if (load < tau_star && (!anchor || load < anchor->eval.vcost + anchor->eval.uval))
      anchor = it;
  }
  if (!anchor) {
    // No feasible point found within budgeted search: surface infeasibility.
    SolveResult r = solver_detail::pack_result(prob, least_point,
                                               SolveStatus::MaxIterations);
    return r;
  }

  const MarkovPolicy anchor_pi = anchor->markov;
  std::vector<MarkovPolicy> starts;
  starts.push_back(anchor_pi);
  starts.push_back(MarkovPolicy::uniform(H, S, A));
  starts.push_back(dp_best_response(model, reward, 1.0));
  for (const auto& s :
       solver_detail::reward_sweep_starts(model, reward, cost_star, ufun))
    starts.push_back(s);
  std::vector<MarkovPolicy> vertices = solver_detail::vertex_starts(H, S, A);
  for (const auto& s : vertices) starts.push_back(s);
  if (auto cand = solver_detail::plan_boundary_candidate(
          model, reward, cost_star, ufun, tau_star, vertices))
    starts.push_back(*cand);
  for (const auto& s :
       solver_detail::sampled_starts(prob, anchor_pi, 1024, 8, rng))
    starts.push_back(s);
  for (int i = 0; i < opts.random_starts; ++i)
    starts.push_back(solver_detail::random_policy(H, S, A, rng));

  std::vector<solver_detail::Iterate> finalists;
  bool capped = false;
  for (const auto& start : starts) {
    auto [found, cap] = solver_detail::solve_from(prob, start, &anchor_pi, opts);
    capped = capped || cap;
    if (found) finalists.push_back(std::move(*found));
  }
  if (finalists.empty()) finalists.push_back(*anchor);
  std::sort(finalists.begin(), finalists.end(),
            [](const auto& a, const auto& b) {
              return a.eval.objective > b.eval.objective;
            });
  solver_detail::Iterate best = finalists.front();
  for (std::size_t i = 0; i < finalists.size() && i < 8; ++i) {
    solver_detail::Iterate polished = solver_detail::polish_feasible(
        prob,
        solver_detail::boundary_ascent(prob, std::move(finalists[i]), opts),
        opts);
    if (polished.eval.objective > best.eval.objective) best = polished;
  }
  return solver_detail::pack_result(
      prob, best, capped ? SolveStatus::MaxIterations : SolveStatus::Optimal);
}

}  // namespace sweet
