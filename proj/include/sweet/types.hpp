#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "sweet/errors.hpp"

namespace sweet {

inline constexpr double kRowSumTol = 1e-12;

// Generic per-(step, state, action) table of reals. Utilities, exploration
// bonuses and policy gradients all share this layout. Step indices run
// 0..H-1, states 0..S-1, actions 0..A-1.
struct SaTable {
  int horizon = 0;
  int num_states = 0;
  int num_actions = 0;
  std::vector<double> values;

  SaTable() = default;
  SaTable(int H, int S, int A, double fill = 0.0)
      : horizon(H),
        num_states(S),
        num_actions(A),
        values(static_cast<std::size_t>(H) * S * A, fill) {}

  std::size_t idx(int h, int s, int a) const {
    return (static_cast<std::size_t>(h) * num_states + s) * num_actions + a;
  }
  double& at(int h, int s, int a) { return values[idx(h, s, a)]; }
  double at(int h, int s, int a) const { return values[idx(h, s, a)]; }

  bool same_shape(const SaTable& o) const {
    return horizon == o.horizon && num_states == o.num_states &&
           num_actions == o.num_actions;
  }
};

// Finite-horizon MDP with a fixed initial state. kernel is indexed by
// (h, s, a, s') and every (h, s, a) row is a probability distribution.
struct TabularMdp {
  int num_states = 0;
  int num_actions = 0;
  int horizon = 0;
  int initial_state = 0;
  std::vector<double> kernel;

  TabularMdp() = default;
  TabularMdp(int S, int A, int H, int s1)
      : num_states(S),
        num_actions(A),
        horizon(H),
        initial_state(s1),
        kernel(static_cast<std::size_t>(H) * S * A * S, 0.0) {}

  std::size_t idx(int h, int s, int a, int s2) const {
    return ((static_cast<std::size_t>(h) * num_states + s) * num_actions + a) *
               num_states +
           s2;
  }
  double& p(int h, int s, int a, int s2) { return kernel[idx(h, s, a, s2)]; }
  double p(int h, int s, int a, int s2) const { return kernel[idx(h, s, a, s2)]; }

  void validate() const {
    if (num_states <= 0 || num_actions <= 0 || horizon <= 0)
      throw ShapeError("TabularMdp: S, A, H must be positive");
    if (initial_state < 0 || initial_state >= num_states)
      throw ShapeError("TabularMdp: initial state out of range");
    if (kernel.size() != static_cast<std::size_t>(horizon) * num_states *
                             num_actions * num_states)
      throw ShapeError("TabularMdp: kernel size mismatch");
    for (int h = 0; h < horizon; ++h)
      for (int s = 0; s < num_states; ++s)
        for (int a = 0; a < num_actions; ++a) {
          double sum = 0.0;
          for (int s2 = 0; s2 < num_states; ++s2) {
            double v = p(h, s, a, s2);
            if (v < 0.0)
              throw ShapeError("TabularMdp: negative transition probability");
            sum += v;
          }
          if (std::abs(sum - 1.0) > kRowSumTol)
            throw ShapeError("TabularMdp: kernel row (" + std::to_string(h) +
                             "," + std::to_string(s) + "," + std::to_string(a) +
                             ") sums to " + std::to_string(sum));
        }
  }
};

// Per-step utility in [0, 1]. `normalized` certifies that the sum along every
// positive-probability trajectory is at most 1; the certificate is produced
// by max_trajectory_utility, not assumed.
struct Utility : SaTable {
  bool normalized = false;

  Utility() = default;
  Utility(int H, int S, int A, double fill = 0.0) : SaTable(H, S, A, fill) {}

  void validate_range() const {
    for (double v : values)
      if (v < 0.0 || v > 1.0)
        throw ParameterError("Utility: entry outside [0,1]");
  }
};

// Per-step stochastic action rule; probs indexed by (h, s, a).
struct MarkovPolicy {
  int horizon = 0;
  int num_states = 0;
  int num_actions = 0;
  std::vector<double> probs;

  MarkovPolicy() = default;
  MarkovPolicy(int H, int S, int A, double fill = 0.0)
      : horizon(H),
        num_states(S),
        num_actions(A),
        probs(static_cast<std::size_t>(H) * S * A, fill) {}

  static MarkovPolicy uniform(int H, int S, int A) {
    return MarkovPolicy(H, S, A, 1.0 / A);
  }

  std::size_t idx(int h, int s, int a) const {
    return (static_cast<std::size_t>(h) * num_states + s) * num_actions + a;
  }
  double& at(int h, int s, int a) { return probs[idx(h, s, a)]; }
  double at(int h, int s, int a) const { return probs[idx(h, s, a)]; }

  void validate() const {
    if (horizon <= 0 || num_states <= 0 || num_actions <= 0)
      throw ShapeError("MarkovPolicy: H, S, A must be positive");
    if (probs.size() !=
        static_cast<std::size_t>(horizon) * num_states * num_actions)
      throw ShapeError("MarkovPolicy: table size mismatch");
    for (int h = 0; h < horizon; ++h)
      for (int s = 0; s < num_states; ++s) {
        double sum = 0.0;
        for (int a = 0; a < num_actions; ++a) {
          double v = at(h, s, a);
          if (v < 0.0) throw ShapeError("MarkovPolicy: negative probability");
          sum += v;
        }
        if (std::abs(sum - 1.0) > kRowSumTol)
          throw ShapeError("MarkovPolicy: row (" + std::to_string(h) + "," +
                           std::to_string(s) + ") sums to " +
                           std::to_string(sum));
      }
  }
};

// Episode-level randomization over Markov policies: one vertex is drawn at
// the start of an episode and used throughout.
struct MixturePolicy {
  std::vector<MarkovPolicy> vertices;
  std::vector<double> weights;

  MixturePolicy() = default;
  explicit MixturePolicy(MarkovPolicy single)
      : vertices{std::move(single)}, weights{1.0} {}
  MixturePolicy(std::vector<MarkovPolicy> v, std::vector<double> w)
      : vertices(std::move(v)), weights(std::move(w)) {}

  void validate() const {
    if (vertices.empty()) throw ShapeError("MixturePolicy: no vertices");
    if (vertices.size() != weights.size())
      throw ShapeError("MixturePolicy: vertex/weight count mismatch");
    double sum = 0.0;
    for (double w : weights) {
      if (w < 0.0) throw ShapeError("MixturePolicy: negative weight");
      sum += w;
    }
    if (std::abs(sum - 1.0) > kRowSumTol)
      throw ShapeError("MixturePolicy: weights sum to " + std::to_string(sum));
    for (const auto& v : vertices) {
      if (v.horizon != vertices[0].horizon ||
          v.num_states != vertices[0].num_states ||
          v.num_actions != vertices[0].num_actions)
        throw ShapeError("MixturePolicy: vertices disagree on shape");
    }
  }
};

// Marginal visit probabilities rho(h, s, a) of a policy under a kernel.
struct OccupancyMeasure {
  SaTable rho;

  double at(int h, int s, int a) const { return rho.at(h, s, a); }
  double state_marginal(int h, int s) const {
    double sum = 0.0;
    for (int a = 0; a < rho.num_actions; ++a) sum += rho.at(h, s, a);
    return sum;
  }
};

// One episode: states[0..H] (terminal state included) and actions[0..H-1].
struct Trajectory {
  std::vector<int> states;
  std::vector<int> actions;

  int horizon() const { return static_cast<int>(actions.size()); }

  void validate(int S, int A, int H) const {
    if (static_cast<int>(actions.size()) != H ||
        static_cast<int>(states.size()) != H + 1)
      throw ShapeError("Trajectory: length mismatch");
    for (int s : states)
      if (s < 0 || s >= S) throw ShapeError("Trajectory: state out of range");
    for (int a : actions)
      if (a < 0 || a >= A) throw ShapeError("Trajectory: action out of range");
  }
};

inline void require_same_shape(const TabularMdp& mdp, const SaTable& t,
                               const char* what) {
  if (t.horizon != mdp.horizon || t.num_states != mdp.num_states ||
      t.num_actions != mdp.num_actions)
    throw ShapeError(std::string(what) + ": shape does not match MDP");
}

inline void require_same_shape(const TabularMdp& mdp, const MarkovPolicy& pi,
                               const char* what) {
  if (pi.horizon != mdp.horizon || pi.num_states != mdp.num_states ||
      pi.num_actions != mdp.num_actions)
    throw ShapeError(std::string(what) + ": policy shape does not match MDP");
}

}  // namespace sweet
