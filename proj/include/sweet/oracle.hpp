#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "sweet/mdp_ops.hpp"
#include "sweet/prng.hpp"
#include "sweet/types.hpp"

// Ground-truth solvers used to validate the main optimizer. Everything here
// is written for trust at desk scale, not for speed, and is kept independent
// of the solver module.
namespace sweet::oracle {

enum class OracleStatus { Ok, Infeasible, NoFeasiblePoint };

struct OracleResult {
  OracleStatus status = OracleStatus::Ok;
  double value = 0.0;
  MixturePolicy policy;
  // Certificate of the Lagrangian route; meaningless for brute force.
  bool has_certificate = false;
  double lambda_star = 0.0;
  double duality_gap = 0.0;
  // Brute-force runs carry their sampling budget instead.
  long long sampling_budget = 0;
};

namespace detail {

// Deterministic maximizer of E[sum_h w_h(s_h,a_h)] by backward induction,
// ties to the lowest action index.
inline MarkovPolicy argmax_policy(const TabularMdp& m,
                                  const std::vector<double>& w) {
  const int H = m.horizon, S = m.num_states, A = m.num_actions;
  std::vector<double> vnext(S, 0.0), vcur(S, 0.0);
  MarkovPolicy pol(H, S, A, 0.0);
  for (int h = H - 1; h >= 0; --h) {
    for (int s = 0; s < S; ++s) {
      double best = -std::numeric_limits<double>::infinity();
      int best_a = 0;
      for (int a = 0; a < A; ++a) {
        double q = w[(static_cast<std::size_t>(h) * S + s) * A + a];
        for (int s2 = 0; s2 < S; ++s2) q += m.p(h, s, a, s2) * vnext[s2];
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

inline double scalar_value(const TabularMdp& m, const MarkovPolicy& pi,
                           const Utility& u) {
  return evaluate_linear(m, pi, u, 1.0).at_initial;
}

}  // namespace detail

// Exact optimum of max V_r s.t. V_c <= tau via bisection on the Lagrange
// multiplier. One linear constraint over occupancy measures admits an
// optimal mixture of at most two deterministic policies; the final mixing
// step meets the constraint with equality when it binds.
inline OracleResult cmdp_optimal(const TabularMdp& trueP, const Utility& reward,
                                 const Utility& cost, double tau) {
  require_same_shape(trueP, reward, "cmdp_optimal");
  require_same_shape(trueP, cost, "cmdp_optimal");
  const int H = trueP.horizon, S = trueP.num_states, A = trueP.num_actions;
  const std::size_t n = static_cast<std::size_t>(H) * S * A;

  OracleResult out;
  MinCostResult mc = min_cost_value(trueP, cost);
  if (mc.value > tau + 1e-12) {
    out.status = OracleStatus::Infeasible;
    out.value = mc.value;
    out.policy = MixturePolicy(mc.policy);
    return out;
  }

  auto lagrangian_policy = [&](double lambda) {
    std::vector<double> w(n);
    for (std::size_t k = 0; k < n; ++k)
      w[k] = reward.values[k] - lambda * cost.values[k];
    return detail::argmax_policy(trueP, w);
  };

  MarkovPolicy p0 = lagrangian_policy(0.0);
  double r0 = detail::scalar_value(trueP, p0, reward);
  double c0 = detail::scalar_value(trueP, p0, cost);
  if (c0 <= tau + 1e-12) {
    out.value = r0;
    out.policy = MixturePolicy(p0);
    out.has_certificate = true;
    out.lambda_star = 0.0;
    out.duality_gap = 0.0;
    return out;
  }

  // Bracket: cost at lambda_hi must drop to tau or below. Values live in
  // [0,1], so a finite multiplier always exists for strictly feasible
  // instances.
  double lo = 0.0, hi = 1.0;
  MarkovPolicy p_lo = p0, p_hi = lagrangian_policy(hi);
  double c_hi = detail::scalar_value(trueP, p_hi, cost);
  int guard = 0;
  while (c_hi > tau && guard++ < 120) {
    lo = hi;
    p_lo = p_hi;
    hi *= 2.0;
    p_hi = lagrangian_policy(hi);
    c_hi = detail::scalar_value(trueP, p_hi, cost);
  }

  for (int iter = 0; iter < 200; ++iter) {
    double mid = 0.5 * (lo + hi);
    MarkovPolicy pm = lagrangian_policy(mid);
    double cm = detail::scalar_value(trueP, pm, cost);
    if (cm > tau) {
      lo = mid;
      p_lo = pm;
    } else {
      hi = mid;
      p_hi = pm;
    }
  }

  double c_lo = detail::scalar_value(trueP, p_lo, cost);
  c_hi = detail::scalar_value(trueP, p_hi, cost);
  double r_lo = detail::scalar_value(trueP, p_lo, reward);
  double r_hi = detail::scalar_value(trueP, p_hi, reward);

  double gamma = 0.0;  // weight on the infeasible-side policy
  if (c_lo > c_hi) gamma = std::clamp((tau - c_hi) / (c_lo - c_hi), 0.0, 1.0);
  out.value = gamma * r_lo + (1.0 - gamma) * r_hi;
  out.policy = MixturePolicy({p_lo, p_hi}, {gamma, 1.0 - gamma});
  out.has_certificate = true;
  out.lambda_star = hi;
  double dual_hi = r_hi - hi * (c_hi - tau);
  double dual_lo = r_lo - lo * (c_lo - tau);
  out.duality_gap = std::min(dual_hi, dual_lo) - out.value;
  return out;
}

using PolicyFunctional = std::function<double(const MarkovPolicy&)>;

// Best feasible value over a large sampled candidate set plus all
// deterministic policies (when enumerable), with local ascent refinement.
// The result is a certified LOWER bound on the constrained optimum.
inline OracleResult brute_force_constrained(const TabularMdp& model,
                                            const PolicyFunctional& objective,
                                            const PolicyFunctional& constraint,
                                            double budget,
                                            long long sampling_budget,
                                            std::uint64_t seed = 20240501ull) {
  const int H = model.horizon, S = model.num_states, A = model.num_actions;
  Prng rng(seed);

  auto feasible = [&](double c) { return c <= budget + 1e-12; };

  struct Candidate {
    MarkovPolicy pi;
    double obj;
    double con;
  };
  auto make_candidate = [&](MarkovPolicy pi) {
    double o = objective(pi);
    double c = constraint(pi);
    return Candidate{std::move(pi), o, c};
  };

  std::vector<Candidate> pool;

  // All deterministic policies when the count is manageable.
  double det_count = std::pow(static_cast<double>(A), S * H);
  if (det_count <= 4096.0) {
    long long total = static_cast<long long>(det_count + 0.5);
    for (long long code = 0; code < total; ++code) {
      MarkovPolicy pi(H, S, A, 0.0);
      long long rem = code;
      for (int h = 0; h < H; ++h)
        for (int s = 0; s < S; ++s) {
          pi.at(h, s, static_cast<int>(rem % A)) = 1.0;
          rem /= A;
        }
      pool.push_back(make_candidate(std::move(pi)));
    }
  }

  Candidate best{MarkovPolicy(), -std::numeric_limits<double>::infinity(), 0.0};
  bool have_best = false;
  Candidate best_feasible_anchor = best;  // most-slack point, repair target
  double most_slack = std::numeric_limits<double>::infinity();

  auto consider = [&](const Candidate& c) {
    if (feasible(c.con)) {
      if (!have_best || c.obj > best.obj) {
        best = c;
        have_best = true;
      }
      if (c.con < most_slack) {
        most_slack = c.con;
        best_feasible_anchor = c;
      }
    }
  };
  for (const auto& c : pool) consider(c);

  auto random_policy = [&]() {
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
  };

  // Dense sampling pass; only the strongest few candidates get refined.
  std::vector<Candidate> top;
  const std::size_t keep = 56;
  for (long long i = 0; i < sampling_budget; ++i) {
    Candidate c = make_candidate(random_policy());
    consider(c);
    if (top.size() < keep) {
      top.push_back(c);
    } else {
      std::size_t worst = 0;
      for (std::size_t k = 1; k < top.size(); ++k)
        if (top[k].obj < top[worst].obj) worst = k;
      if (c.obj > top[worst].obj) top[worst] = c;
    }
  }
  for (const auto& c : pool) top.push_back(c);
  if (have_best) top.push_back(best);

  // Blend toward the anchor until the constraint holds again.
  auto repair = [&](const MarkovPolicy& pi) -> Candidate {
    Candidate c = make_candidate(pi);
    if (feasible(c.con) || most_slack == std::numeric_limits<double>::infinity())
      return c;
    double lo = 0.0, hi = 1.0;  // hi = anchor weight
    for (int it = 0; it < 40; ++it) {
      double mid = 0.5 * (lo + hi);
      MarkovPolicy blend(H, S, A, 0.0);
      for (std::size_t k = 0; k < blend.probs.size(); ++k)
        blend.probs[k] = (1.0 - mid) * pi.probs[k] +
                         mid * best_feasible_anchor.pi.probs[k];
      Candidate bc = make_candidate(std::move(blend));
      if (feasible(bc.con)) {
        hi = mid;
        c = bc;
      } else {
        lo = mid;
      }
    }
    return c;
  };

  // Pattern-search refinement: single-row moves plus paired-row moves (one
  // row buys objective, the other buys back feasibility), with repair.
  auto nudge_row = [&](MarkovPolicy& pi, int h, int s, int a, double eta) {
    for (int other = 0; other < A; ++other) pi.at(h, s, other) *= (1.0 - eta);
    pi.at(h, s, a) += eta;
  };
  for (auto& start : top) {
    Candidate cur = feasible(start.con) ? start : repair(start.pi);
    if (!feasible(cur.con)) continue;
    // Infeasible proposals are pulled back toward the walk's current point,
    // which keeps the search on the local boundary patch.
    auto pull_back = [&](const MarkovPolicy& pi) -> Candidate {
      double lo = 0.0, hi = 1.0;
      Candidate kept = cur;
      for (int it = 0; it < 30; ++it) {
        double mid = 0.5 * (lo + hi);
        MarkovPolicy blend(H, S, A, 0.0);
        for (std::size_t k = 0; k < blend.probs.size(); ++k)
          blend.probs[k] = mid * pi.probs[k] + (1.0 - mid) * cur.pi.probs[k];
        Candidate bc = make_candidate(std::move(blend));
        if (feasible(bc.con)) {
          lo = mid;
          kept = bc;
        } else {
          hi = mid;
        }
      }
      return kept;
    };
    double eta = 0.35;
    for (int step = 0; step < 1400; ++step) {
      MarkovPolicy cand = cur.pi;
      nudge_row(cand, rng.next_below(H), rng.next_below(S), rng.next_below(A),
                eta);
      if (step % 2 == 1)
        nudge_row(cand, rng.next_below(H), rng.next_below(S),
                  rng.next_below(A), eta);
      Candidate cc = make_candidate(std::move(cand));
      if (!feasible(cc.con)) {
        Candidate local = pull_back(cc.pi);
        Candidate global = repair(cc.pi);
        cc = (feasible(global.con) && global.obj > local.obj) ? global : local;
      }
      if (feasible(cc.con) && cc.obj > cur.obj) cur = cc;
      eta *= 0.991;
    }
    consider(cur);
  }

  OracleResult out;
  out.sampling_budget = sampling_budget;
  if (!have_best) {
    out.status = OracleStatus::NoFeasiblePoint;
    return out;
  }
  out.value = best.obj;
  out.policy = MixturePolicy(best.pi);
  return out;
}

}  // namespace sweet::oracle
