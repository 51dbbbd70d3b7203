#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "sweet/prng.hpp"
#include "sweet/types.hpp"

namespace sweet {

// V indexed by (h, s) for h = 0..H (row H is the terminal zero row),
// Q by (h, s, a) for h = 0..H-1. at_initial is V[0][s1].
struct ValueTables {
  int horizon = 0;
  int num_states = 0;
  int num_actions = 0;
  std::vector<double> v;
  std::vector<double> q;
  double at_initial = 0.0;

  double value(int h, int s) const {
    return v[static_cast<std::size_t>(h) * num_states + s];
  }
  double& value(int h, int s) {
    return v[static_cast<std::size_t>(h) * num_states + s];
  }
  double qvalue(int h, int s, int a) const {
    return q[(static_cast<std::size_t>(h) * num_states + s) * num_actions + a];
  }
  double& qvalue(int h, int s, int a) {
    return q[(static_cast<std::size_t>(h) * num_states + s) * num_actions + a];
  }
};

// Backward induction for arbitrary per-step rewards (negative entries are
// fine; used for subgradient-weighted evaluations as well as utilities).
// Q_h = u + alpha * P_h V_{h+1}, V_h = E_pi Q_h, no clipping.
inline ValueTables evaluate_linear(const TabularMdp& mdp,
                                   const MarkovPolicy& policy,
                                   const SaTable& reward, double alpha = 1.0) {
  require_same_shape(mdp, policy, "evaluate_linear");
  require_same_shape(mdp, reward, "evaluate_linear");
  const int H = mdp.horizon, S = mdp.num_states, A = mdp.num_actions;
  ValueTables out;
  out.horizon = H;
  out.num_states = S;
  out.num_actions = A;
  out.v.assign(static_cast<std::size_t>(H + 1) * S, 0.0);
  out.q.assign(static_cast<std::size_t>(H) * S * A, 0.0);
  for (int h = H - 1; h >= 0; --h) {
    for (int s = 0; s < S; ++s) {
      double vs = 0.0;
      for (int a = 0; a < A; ++a) {
        double pv = 0.0;
        for (int s2 = 0; s2 < S; ++s2)
          pv += mdp.p(h, s, a, s2) * out.value(h + 1, s2);
        double qa = reward.at(h, s, a) + alpha * pv;
        out.qvalue(h, s, a) = qa;
        vs += policy.at(h, s, a) * qa;
      }
      out.value(h, s) = vs;
    }
  }
  out.at_initial = out.value(0, mdp.initial_state);
  return out;
}

// Policy evaluation for a [0,1] utility. alpha >= 1 weights each transition.
inline ValueTables evaluate_value(const TabularMdp& mdp,
                                  const MarkovPolicy& policy,
                                  const Utility& utility, double alpha = 1.0) {
  if (alpha < 1.0) throw ParameterError("evaluate_value: alpha must be >= 1");
  return evaluate_linear(mdp, policy, utility, alpha);
}

// Forward flow recursion for the marginal visit probabilities.
inline OccupancyMeasure occupancy(const TabularMdp& mdp,
                                  const MarkovPolicy& policy) {
  require_same_shape(mdp, policy, "occupancy");
  const int H = mdp.horizon, S = mdp.num_states, A = mdp.num_actions;
  OccupancyMeasure out;
  out.rho = SaTable(H, S, A, 0.0);
  std::vector<double> state(S, 0.0), next(S, 0.0);
  state[mdp.initial_state] = 1.0;
  for (int h = 0; h < H; ++h) {
    std::fill(next.begin(), next.end(), 0.0);
    for (int s = 0; s < S; ++s) {
      if (state[s] == 0.0) continue;
      for (int a = 0; a < A; ++a) {
        double r = state[s] * policy.at(h, s, a);
        out.rho.at(h, s, a) = r;
        if (r == 0.0) continue;
        for (int s2 = 0; s2 < S; ++s2) next[s2] += r * mdp.p(h, s, a, s2);
      }
    }
    state.swap(next);
  }
  return out;
}

// Markov policy equivalent to a mixture: action rule is the ratio of the
// mixed state-action occupancy to the mixed state marginal. Where the mixed
// marginal is zero the ratio is undefined and the first vertex's rule is
// copied, which preserves occupancy equivalence.
inline MarkovPolicy mixture_to_markov(const TabularMdp& mdp,
                                      const MixturePolicy& mix) {
  mix.validate();
  require_same_shape(mdp, mix.vertices[0], "mixture_to_markov");
  const int H = mdp.horizon, S = mdp.num_states, A = mdp.num_actions;
  // A mixture supported on one vertex is that vertex, bit for bit.
  {
    int support = -1, count = 0;
    for (std::size_t i = 0; i < mix.weights.size(); ++i)
      if (mix.weights[i] > 0.0) {
        support = static_cast<int>(i);
        ++count;
      }
    if (count == 1) return mix.vertices[support];
  }
  SaTable mixed(H, S, A, 0.0);
  for (std::size_t i = 0; i < mix.vertices.size(); ++i) {
    if (mix.weights[i] == 0.0) continue;
    OccupancyMeasure occ = occupancy(mdp, mix.vertices[i]);
    for (std::size_t k = 0; k < mixed.values.size(); ++k)
      mixed.values[k] += mix.weights[i] * occ.rho.values[k];
  }
  MarkovPolicy out(H, S, A, 0.0);
  for (int h = 0; h < H; ++h)
    for (int s = 0; s < S; ++s) {
      double marginal = 0.0;
      for (int a = 0; a < A; ++a) marginal += mixed.at(h, s, a);
      if (marginal > 0.0) {
        for (int a = 0; a < A; ++a) out.at(h, s, a) = mixed.at(h, s, a) / marginal;
      } else {
        for (int a = 0; a < A; ++a) out.at(h, s, a) = mix.vertices[0].at(h, s, a);
      }
    }
  return out;
}

// Mixes the policy with uniform action selection (weight epsilon0) at the
// listed steps and leaves the rest untouched.
inline MarkovPolicy greedy_version(const MarkovPolicy& policy, double epsilon0,
                                   const std::vector<int>& steps) {
  if (epsilon0 < 0.0 || epsilon0 > 1.0)
    throw ParameterError("greedy_version: epsilon0 outside [0,1]");
  for (int h : steps)
    if (h < 0 || h >= policy.horizon)
      throw ParameterError("greedy_version: step index out of range");
  MarkovPolicy out = policy;
  const double u = epsilon0 / policy.num_actions;
  for (int h : steps)
    for (int s = 0; s < policy.num_states; ++s)
      for (int a = 0; a < policy.num_actions; ++a)
        out.at(h, s, a) = (1.0 - epsilon0) * policy.at(h, s, a) + u;
  return out;
}

inline Trajectory sample_trajectory(const TabularMdp& mdp,
                                    const MarkovPolicy& policy, Prng& rng) {
  require_same_shape(mdp, policy, "sample_trajectory");
  const int H = mdp.horizon, S = mdp.num_states, A = mdp.num_actions;
  Trajectory traj;
  traj.states.reserve(H + 1);
  traj.actions.reserve(H);
  int s = mdp.initial_state;
  traj.states.push_back(s);
  for (int h = 0; h < H; ++h) {
    double x = rng.next_double();
    int a = A - 1;
    double acc = 0.0;
    for (int cand = 0; cand < A; ++cand) {
      acc += policy.at(h, s, cand);
      if (x < acc) {
        a = cand;
        break;
      }
    }
    traj.actions.push_back(a);
    double y = rng.next_double();
    int s2 = S - 1;
    acc = 0.0;
    for (int cand = 0; cand < S; ++cand) {
      acc += mdp.p(h, s, a, cand);
      if (y < acc) {
        s2 = cand;
        break;
      }
    }
    traj.states.push_back(s2);
    s = s2;
  }
  return traj;
}

// A mixture draws its vertex once and follows it for the whole episode.
inline Trajectory sample_trajectory(const TabularMdp& mdp,
                                    const MixturePolicy& mix, Prng& rng) {
  mix.validate();
  int v = rng.next_weighted(mix.weights);
  return sample_trajectory(mdp, mix.vertices[v], rng);
}

struct MinCostResult {
  double value = 0.0;
  MarkovPolicy policy;
};

// Backward-induction minimization of the expected cumulative cost. Ties go
// to the lowest action index.
inline MinCostResult min_cost_value(const TabularMdp& mdp,
                                    const Utility& cost) {
  require_same_shape(mdp, cost, "min_cost_value");
  const int H = mdp.horizon, S = mdp.num_states, A = mdp.num_actions;
  std::vector<double> vnext(S, 0.0), vcur(S, 0.0);
  MarkovPolicy pol(H, S, A, 0.0);
  for (int h = H - 1; h >= 0; --h) {
    for (int s = 0; s < S; ++s) {
      double best = 0.0;
      int best_a = 0;
      for (int a = 0; a < A; ++a) {
        double pv = 0.0;
        for (int s2 = 0; s2 < S; ++s2) pv += mdp.p(h, s, a, s2) * vnext[s2];
        double q = cost.at(h, s, a) + pv;
        if (a == 0 || q < best) {
          best = q;
          best_a = a;
        }
      }
      vcur[s] = best;
      pol.at(h, s, best_a) = 1.0;
    }
    vnext = vcur;
  }
  return {vnext[mdp.initial_state], std::move(pol)};
}

// Maximum of the cumulative utility over trajectories that have positive
// probability; certifies the normalization flag.
inline double max_trajectory_utility(const TabularMdp& mdp,
                                     const Utility& utility) {
  require_same_shape(mdp, utility, "max_trajectory_utility");
  const int H = mdp.horizon, S = mdp.num_states, A = mdp.num_actions;
  std::vector<double> mnext(S, 0.0), mcur(S, 0.0);
  for (int h = H - 1; h >= 0; --h) {
    for (int s = 0; s < S; ++s) {
      double best_total = -1.0;
      for (int a = 0; a < A; ++a) {
        double best_succ = 0.0;
        bool any = false;
        for (int s2 = 0; s2 < S; ++s2) {
          if (mdp.p(h, s, a, s2) <= 0.0) continue;
          if (!any || mnext[s2] > best_succ) best_succ = mnext[s2];
          any = true;
        }
        double total = utility.at(h, s, a) + (any ? best_succ : 0.0);
        if (total > best_total) best_total = total;
      }
      mcur[s] = best_total;
    }
    mnext = mcur;
  }
  return mnext[mdp.initial_state];
}

// Convenience: scalar value of a policy for a [0,1] utility.
inline double value_of(const TabularMdp& mdp, const MarkovPolicy& policy,
                       const Utility& utility, double alpha = 1.0) {
  return evaluate_value(mdp, policy, utility, alpha).at_initial;
}

}  // namespace sweet
