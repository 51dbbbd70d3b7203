#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "sweet/solver.hpp"
#include "sweet/types.hpp"

namespace sweet {

// One exploration episode (tabular) or iteration (low-rank). exact_cost is
// the constraint value of the executed policy under the true kernel; the
// learner cannot compute it, so it stays NaN until the harness audits the
// run.
struct EpisodeRecord {
  int episode = 0;
  SafeSetMode mode = SafeSetMode::BaselineOnly;
  double u_value = 0.0;
  double exact_cost = std::numeric_limits<double>::quiet_NaN();
  SolveStatus solver_status = SolveStatus::BaselineOnly;
  double solver_residual = 0.0;
  bool terminated = false;
  int policy_id = 0;  // executed/reference policy in the pool
  // Low-rank extras; empty for tabular runs.
  std::vector<int> mle_index;
  std::vector<double> min_eig;
};

struct RunLog {
  std::vector<EpisodeRecord> records;
  // Deduplicated policies; records reference them by index. For low-rank
  // runs the entry is the reference policy and the executed behavior
  // policies are its two-step greedy versions.
  std::vector<MarkovPolicy> policy_pool;
  int final_episode = 0;
  bool terminated = false;

  int push_policy(const MarkovPolicy& pi) {
    if (!policy_pool.empty()) {
      const MarkovPolicy& last = policy_pool.back();
      if (last.probs == pi.probs)
        return static_cast<int>(policy_pool.size()) - 1;
    }
    policy_pool.push_back(pi);
    return static_cast<int>(policy_pool.size()) - 1;
  }
};

}  // namespace sweet
