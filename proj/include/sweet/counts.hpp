#pragma once

#include <cstdint>
#include <vector>

#include "sweet/types.hpp"

namespace sweet {

// Visitation counters N_h(s,a) and N_h(s,a,s').
struct Counts {
  int horizon = 0;
  int num_states = 0;
  int num_actions = 0;
  std::vector<std::int64_t> n_sa;
  std::vector<std::int64_t> n_sas;

  Counts() = default;
  Counts(int H, int S, int A)
      : horizon(H),
        num_states(S),
        num_actions(A),
        n_sa(static_cast<std::size_t>(H) * S * A, 0),
        n_sas(static_cast<std::size_t>(H) * S * A * S, 0) {}

  std::int64_t sa(int h, int s, int a) const {
    return n_sa[(static_cast<std::size_t>(h) * num_states + s) * num_actions + a];
  }
  std::int64_t sas(int h, int s, int a, int s2) const {
    return n_sas[((static_cast<std::size_t>(h) * num_states + s) * num_actions +
                  a) *
                     num_states +
                 s2];
  }

  void add(int h, int s, int a, int s2) {
    ++n_sa[(static_cast<std::size_t>(h) * num_states + s) * num_actions + a];
    ++n_sas[((static_cast<std::size_t>(h) * num_states + s) * num_actions + a) *
                num_states +
            s2];
  }
};

inline Counts update_counts(Counts counts, const Trajectory& traj) {
  traj.validate(counts.num_states, counts.num_actions, counts.horizon);
  for (int h = 0; h < counts.horizon; ++h)
    counts.add(h, traj.states[h], traj.actions[h], traj.states[h + 1]);
  return counts;
}

// Empirical kernel: the count ratio once a pair has been seen more than
// once, uniform otherwise.
inline TabularMdp estimate_model(const Counts& counts, int initial_state) {
  const int H = counts.horizon, S = counts.num_states, A = counts.num_actions;
  TabularMdp m(S, A, H, initial_state);
  const double unif = 1.0 / S;
  for (int h = 0; h < H; ++h)
    for (int s = 0; s < S; ++s)
      for (int a = 0; a < A; ++a) {
        std::int64_t n = counts.sa(h, s, a);
        if (n > 1) {
          for (int s2 = 0; s2 < S; ++s2)
            m.p(h, s, a, s2) = static_cast<double>(counts.sas(h, s, a, s2)) / n;
        } else {
          for (int s2 = 0; s2 < S; ++s2) m.p(h, s, a, s2) = unif;
        }
      }
  return m;
}

// Count-driven virtual reward beta0 * H / max(N, 1). The pseudo-count floor
// handles unvisited pairs; entries may exceed 1 and are consumed unclipped
// by the truncated value recursion.
inline SaTable bonus_table(const Counts& counts, double beta0, int horizon) {
  if (beta0 <= 0.0) throw ParameterError("bonus_table: beta0 must be positive");
  const int H = counts.horizon, S = counts.num_states, A = counts.num_actions;
  SaTable b(H, S, A, 0.0);
  for (int h = 0; h < H; ++h)
    for (int s = 0; s < S; ++s)
      for (int a = 0; a < A; ++a) {
        std::int64_t n = counts.sa(h, s, a);
        b.at(h, s, a) = beta0 * horizon / static_cast<double>(n > 1 ? n : 1);
      }
  return b;
}

}  // namespace sweet
