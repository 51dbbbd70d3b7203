#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "sweet/oracle.hpp"
#include "test_helpers.hpp"

using namespace sweet;
using test_util::all_deterministic_policies;
using test_util::random_mdp;
using test_util::random_policy;
using test_util::random_utility;

TEST_CASE("cmdp_optimal with slack constraint is the unconstrained optimum") {
  for (std::uint64_t seed = 1; seed < 5; ++seed) {
    TabularMdp m = random_mdp(3, 2, 3, seed);
    Utility r = random_utility(m, seed + 10, true);
    Utility c = random_utility(m, seed + 20, true);
    double best = 0.0;
    for (const auto& det : all_deterministic_policies(3, 3, 2))
      best = std::max(best, evaluate_value(m, det, r, 1.0).at_initial);
    oracle::OracleResult res = oracle::cmdp_optimal(m, r, c, 1.0);
    REQUIRE(res.status == oracle::OracleStatus::Ok);
    REQUIRE(res.value == Catch::Approx(best).margin(1e-9));
  }
}

TEST_CASE("cmdp_optimal with reward equal to cost saturates the threshold") {
  for (std::uint64_t seed = 31; seed < 35; ++seed) {
    TabularMdp m = random_mdp(3, 2, 3, seed);
    Utility c = random_utility(m, seed + 5, true);
    double lo = min_cost_value(m, c).value;
    double hi = 0.0;
    for (const auto& det : all_deterministic_policies(3, 3, 2))
      hi = std::max(hi, evaluate_value(m, det, c, 1.0).at_initial);
    if (hi - lo < 0.05) continue;
    double tau = 0.5 * (lo + hi);  // binding for reward = cost
    oracle::OracleResult res = oracle::cmdp_optimal(m, c, c, tau);
    REQUIRE(res.status == oracle::OracleStatus::Ok);
    REQUIRE(res.value == Catch::Approx(tau).margin(1e-9));
  }
}

TEST_CASE("cmdp_optimal matches pairwise-mixture grid enumeration") {
  for (std::uint64_t seed = 51; seed < 54; ++seed) {
    TabularMdp m = random_mdp(3, 2, 3, seed);
    Utility r = random_utility(m, seed + 7, true);
    Utility c = random_utility(m, seed + 9, true);
    double lo = min_cost_value(m, c).value;
    double tau = lo + 0.15;

    auto dets = all_deterministic_policies(3, 3, 2);
    std::vector<double> rv, cv;
    for (const auto& det : dets) {
      rv.push_back(evaluate_value(m, det, r, 1.0).at_initial);
      cv.push_back(evaluate_value(m, det, c, 1.0).at_initial);
    }
    // Mixtures of all pairs on a fine weight grid; value and cost are both
    // linear in the mixing weight.
    double best = -1.0;
    for (std::size_t i = 0; i < dets.size(); ++i)
      for (std::size_t j = i; j < dets.size(); ++j)
        for (int k = 0; k <= 1000; ++k) {
          double w = k / 1000.0;
          double cost = w * cv[i] + (1 - w) * cv[j];
          if (cost > tau) continue;
          best = std::max(best, w * rv[i] + (1 - w) * rv[j]);
        }

    oracle::OracleResult res = oracle::cmdp_optimal(m, r, c, tau);
    REQUIRE(res.status == oracle::OracleStatus::Ok);
    REQUIRE(res.value == Catch::Approx(best).margin(1e-3));
    REQUIRE(res.value >= best - 1e-9);
    REQUIRE(res.duality_gap <= 1e-9);

    // The returned mixture respects the constraint exactly.
    MarkovPolicy eq = mixture_to_markov(m, res.policy);
    REQUIRE(evaluate_value(m, eq, c, 1.0).at_initial <= tau + 1e-9);
  }
}

TEST_CASE("cmdp_optimal flags infeasible thresholds") {
  TabularMdp m = random_mdp(3, 2, 3, 61);
  Utility c = random_utility(m, 62, true);
  double lo = min_cost_value(m, c).value;
  if (lo > 0.0) {
    oracle::OracleResult res = oracle::cmdp_optimal(m, c, c, lo * 0.5);
    REQUIRE(res.status == oracle::OracleStatus::Infeasible);
  }
}

TEST_CASE("brute force with constant objective returns any feasible value") {
  TabularMdp m = random_mdp(2, 2, 2, 71);
  auto obj = [](const MarkovPolicy&) { return 0.75; };
  Utility c = random_utility(m, 72, true);
  auto con = [&](const MarkovPolicy& pi) {
    return evaluate_value(m, pi, c, 1.0).at_initial;
  };
  oracle::OracleResult res =
      oracle::brute_force_constrained(m, obj, con, 1.0, 500);
  REQUIRE(res.status == oracle::OracleStatus::Ok);
  REQUIRE(res.value == 0.75);
}

TEST_CASE("brute force on an unconstrained linear objective matches the DP optimum") {
  for (std::uint64_t seed = 81; seed < 84; ++seed) {
    TabularMdp m = random_mdp(2, 2, 2, seed);
    Utility r = random_utility(m, seed + 3, true);
    auto obj = [&](const MarkovPolicy& pi) {
      return evaluate_value(m, pi, r, 1.0).at_initial;
    };
    auto con = [](const MarkovPolicy&) { return 0.0; };
    double best = 0.0;
    for (const auto& det : all_deterministic_policies(2, 2, 2))
      best = std::max(best, obj(det));
    oracle::OracleResult res =
        oracle::brute_force_constrained(m, obj, con, 1.0, 2000);
    REQUIRE(res.value == Catch::Approx(best).margin(1e-9));
  }
}

TEST_CASE("brute force is reproducible under a fixed seed") {
  TabularMdp m = random_mdp(2, 2, 2, 91);
  Utility r = random_utility(m, 92, true);
  Utility c = random_utility(m, 93, true);
  auto obj = [&](const MarkovPolicy& pi) {
    return evaluate_value(m, pi, r, 1.0).at_initial;
  };
  auto con = [&](const MarkovPolicy& pi) {
    return evaluate_value(m, pi, c, 1.0).at_initial;
  };
  double tau = min_cost_value(m, c).value + 0.1;
  oracle::OracleResult a =
      oracle::brute_force_constrained(m, obj, con, tau, 3000, 999);
  oracle::OracleResult b =
      oracle::brute_force_constrained(m, obj, con, tau, 3000, 999);
  REQUIRE(a.value == b.value);
  REQUIRE(a.sampling_budget == 3000);
}

TEST_CASE("lagrangian value dominates brute force on linear objectives") {
  for (std::uint64_t seed = 101; seed < 104; ++seed) {
    TabularMdp m = random_mdp(2, 2, 2, seed);
    Utility r = random_utility(m, seed + 3, true);
    Utility c = random_utility(m, seed + 6, true);
    double tau = min_cost_value(m, c).value + 0.12;
    auto obj = [&](const MarkovPolicy& pi) {
      return evaluate_value(m, pi, r, 1.0).at_initial;
    };
    auto con = [&](const MarkovPolicy& pi) {
      return evaluate_value(m, pi, c, 1.0).at_initial;
    };
    oracle::OracleResult exact = oracle::cmdp_optimal(m, r, c, tau);
    oracle::OracleResult brute =
        oracle::brute_force_constrained(m, obj, con, tau, 20000);
    REQUIRE(exact.value >= brute.value - 1e-6);
    REQUIRE(exact.value == Catch::Approx(brute.value).margin(2e-3));
  }
}
