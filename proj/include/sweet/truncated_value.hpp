#pragma once

#include <cmath>
#include <vector>

#include "sweet/mdp_ops.hpp"
#include "sweet/types.hpp"

namespace sweet {

inline constexpr double kClipTol = 1e-12;

// Clipped value recursion:
//   Qbar_h = u + alpha * P_h Vbar_{h+1},  Vbar_h = min{1, E_pi Qbar_h}.
// The clip happens at the value level, never at the Q level. clip_mask is
// true where the pre-clip expectation reaches 1 within kClipTol; ties count
// as clipped.
struct TruncatedEval {
  int horizon = 0;
  int num_states = 0;
  int num_actions = 0;
  double alpha = 1.0;
  std::vector<double> vbar;        // (H+1) x S
  std::vector<double> qbar;        // H x S x A
  std::vector<double> preclip;     // H x S, E_pi Qbar before the min
  std::vector<unsigned char> clip_mask;  // H x S

  double value(int h, int s) const {
    return vbar[static_cast<std::size_t>(h) * num_states + s];
  }
  double qvalue(int h, int s, int a) const {
    return qbar[(static_cast<std::size_t>(h) * num_states + s) * num_actions + a];
  }
  double preclip_value(int h, int s) const {
    return preclip[static_cast<std::size_t>(h) * num_states + s];
  }
  bool clipped(int h, int s) const {
    return clip_mask[static_cast<std::size_t>(h) * num_states + s] != 0;
  }
  double at_initial = 0.0;
};

inline TruncatedEval truncated_evaluate(const TabularMdp& model,
                                        const MarkovPolicy& policy,
                                        const SaTable& utility, double alpha) {
  require_same_shape(model, policy, "truncated_evaluate");
  require_same_shape(model, utility, "truncated_evaluate");
  if (alpha < 1.0)
    throw ParameterError("truncated_evaluate: alpha must be >= 1");
  for (double v : utility.values)
    if (v < 0.0)
      throw ParameterError("truncated_evaluate: utility must be nonnegative");

  const int H = model.horizon, S = model.num_states, A = model.num_actions;
  TruncatedEval out;
  out.horizon = H;
  out.num_states = S;
  out.num_actions = A;
  out.alpha = alpha;
  out.vbar.assign(static_cast<std::size_t>(H + 1) * S, 0.0);
  out.qbar.assign(static_cast<std::size_t>(H) * S * A, 0.0);
  out.preclip.assign(static_cast<std::size_t>(H) * S, 0.0);
  out.clip_mask.assign(static_cast<std::size_t>(H) * S, 0);

  for (int h = H - 1; h >= 0; --h) {
    for (int s = 0; s < S; ++s) {
      double expectation = 0.0;
      for (int a = 0; a < A; ++a) {
        double pv = 0.0;
        for (int s2 = 0; s2 < S; ++s2)
          pv += model.p(h, s, a, s2) *
                out.vbar[static_cast<std::size_t>(h + 1) * S + s2];
        double q = utility.at(h, s, a) + alpha * pv;
        out.qbar[(static_cast<std::size_t>(h) * S + s) * A + a] = q;
        expectation += policy.at(h, s, a) * q;
      }
      out.preclip[static_cast<std::size_t>(h) * S + s] = expectation;
      bool clip = expectation >= 1.0 - kClipTol;
      out.clip_mask[static_cast<std::size_t>(h) * S + s] = clip ? 1 : 0;
      out.vbar[static_cast<std::size_t>(h) * S + s] =
          expectation < 1.0 ? expectation : 1.0;
    }
  }
  out.at_initial = out.value(0, model.initial_state);
  return out;
}

// Supergradient of Vbar at the initial state with respect to the raw policy
// entries. A forward pass accumulates "effective reach" weights: the product
// of alpha * P * pi factors along paths that traverse only unclipped states.
// Clipped states are locally constant at 1, so they propagate nothing and
// contribute nothing; g(h,s,a) = reach(h,s) * Qbar(h,s,a) elsewhere.
// g(h,s,a) is zero wherever the state is unreachable under the policy or the
// clip mask cuts all upstream flow.
using PolicySubgradient = SaTable;

inline PolicySubgradient truncated_subgradient(const TabularMdp& model,
                                     const MarkovPolicy& policy,
                                     const SaTable& utility, double alpha,
                                     const TruncatedEval* precomputed = nullptr) {
  TruncatedEval local;
  const TruncatedEval* ev = precomputed;
  if (ev == nullptr) {
    local = truncated_evaluate(model, policy, utility, alpha);
    ev = &local;
  }
  const int H = model.horizon, S = model.num_states, A = model.num_actions;
  SaTable g(H, S, A, 0.0);
  std::vector<double> reach(S, 0.0), next(S, 0.0);
  reach[model.initial_state] = 1.0;
  for (int h = 0; h < H; ++h) {
    std::fill(next.begin(), next.end(), 0.0);
    for (int s = 0; s < S; ++s) {
      if (reach[s] == 0.0 || ev->clipped(h, s)) continue;
      for (int a = 0; a < A; ++a) {
        g.at(h, s, a) = reach[s] * ev->qvalue(h, s, a);
        double flow = reach[s] * alpha * policy.at(h, s, a);
        if (flow == 0.0) continue;
        for (int s2 = 0; s2 < S; ++s2) next[s2] += flow * model.p(h, s, a, s2);
      }
    }
    reach.swap(next);
  }
  return g;
}

}  // namespace sweet
