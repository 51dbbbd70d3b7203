#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "sweet/mdp_ops.hpp"
#include "sweet/truncated_value.hpp"
#include "test_helpers.hpp"

using namespace sweet;
using test_util::random_bonus;
using test_util::random_mdp;
using test_util::random_policy;
using test_util::random_utility;

namespace {

// Central finite differences of the clipped value in a raw policy entry.
double fd_entry(const TabularMdp& m, const MarkovPolicy& pi, const SaTable& u,
                double alpha, int h, int s, int a, double step) {
  MarkovPolicy up = pi, down = pi;
  up.at(h, s, a) += step;
  down.at(h, s, a) -= step;
  double vu = truncated_evaluate(m, up, u, alpha).at_initial;
  double vd = truncated_evaluate(m, down, u, alpha).at_initial;
  return (vu - vd) / (2.0 * step);
}

bool near_clip_boundary(const TruncatedEval& ev, double margin) {
  for (int h = 0; h < ev.horizon; ++h)
    for (int s = 0; s < ev.num_states; ++s)
      if (std::abs(ev.preclip_value(h, s) - 1.0) < margin) return true;
  return false;
}

}  // namespace

TEST_CASE("truncated value of zero utility is zero with no clipping") {
  TabularMdp m = random_mdp(3, 2, 3, 7);
  MarkovPolicy pi = random_policy(3, 3, 2, 8);
  SaTable zero(3, 3, 2, 0.0);
  TruncatedEval ev = truncated_evaluate(m, pi, zero, 1.0);
  REQUIRE(ev.at_initial == 0.0);
  for (auto c : ev.clip_mask) REQUIRE(c == 0);
}

TEST_CASE("truncated value equals plain value for normalized utility") {
  for (std::uint64_t seed = 10; seed < 15; ++seed) {
    TabularMdp m = random_mdp(3, 2, 4, seed);
    MarkovPolicy pi = random_policy(4, 3, 2, seed + 50);
    Utility u = random_utility(m, seed + 90, true);
    TruncatedEval ev = truncated_evaluate(m, pi, u, 1.0);
    ValueTables vt = evaluate_value(m, pi, u, 1.0);
    for (int h = 0; h < 4; ++h)
      for (int s = 0; s < 3; ++s)
        REQUIRE(ev.value(h, s) == Catch::Approx(vt.value(h, s)).margin(1e-12));
  }
}

TEST_CASE("truncated recursion clips at the value level") {
  // Single state, single action, u = 0.8 each step, two steps.
  TabularMdp m(1, 1, 2, 0);
  m.p(0, 0, 0, 0) = 1.0;
  m.p(1, 0, 0, 0) = 1.0;
  MarkovPolicy pi(2, 1, 1, 1.0);
  SaTable u(2, 1, 1, 0.8);
  TruncatedEval ev = truncated_evaluate(m, pi, u, 1.0);
  REQUIRE(ev.qvalue(1, 0, 0) == Catch::Approx(0.8));
  REQUIRE(ev.value(1, 0) == Catch::Approx(0.8));
  REQUIRE(ev.qvalue(0, 0, 0) == Catch::Approx(1.6));
  REQUIRE(ev.value(0, 0) == Catch::Approx(1.0));
  REQUIRE(ev.clipped(0, 0));
  REQUIRE_FALSE(ev.clipped(1, 0));
}

TEST_CASE("truncated_evaluate rejects negative utility") {
  TabularMdp m = random_mdp(2, 2, 2, 3);
  MarkovPolicy pi = random_policy(2, 2, 2, 4);
  SaTable u(2, 2, 2, 0.1);
  u.at(0, 0, 0) = -0.1;
  REQUIRE_THROWS_AS(truncated_evaluate(m, pi, u, 1.0), ParameterError);
}

TEST_CASE("subgradient is zero for zero utility and at a fully clipped root") {
  TabularMdp m = random_mdp(3, 2, 3, 17);
  MarkovPolicy pi = random_policy(3, 3, 2, 18);
  SaTable zero(3, 3, 2, 0.0);
  SaTable g = truncated_subgradient(m, pi, zero, 1.0);
  for (double v : g.values) REQUIRE(v == 0.0);

  SaTable big(3, 3, 2, 5.0);  // root pre-clip expectation far above 1
  SaTable g2 = truncated_subgradient(m, pi, big, 1.0);
  for (double v : g2.values) REQUIRE(v == 0.0);
}

TEST_CASE("unclipped subgradient equals reach-weighted q and finite differences") {
  for (std::uint64_t seed = 31; seed < 35; ++seed) {
    TabularMdp m = random_mdp(3, 2, 3, seed);
    MarkovPolicy pi = random_policy(3, 3, 2, seed + 7);
    // Small utility: no state gets anywhere near the clip.
    SaTable u = random_bonus(3, 3, 2, seed + 13, 0.05);
    double alpha = 1.0 + 1.0 / 3.0;
    TruncatedEval ev = truncated_evaluate(m, pi, u, alpha);
    REQUIRE_FALSE(near_clip_boundary(ev, 1e-4));
    SaTable g = truncated_subgradient(m, pi, u, alpha, &ev);

    OccupancyMeasure occ = occupancy(m, pi);
    for (int h = 0; h < 3; ++h)
      for (int s = 0; s < 3; ++s)
        for (int a = 0; a < 2; ++a) {
          double reach = occ.state_marginal(h, s) * std::pow(alpha, h);
          REQUIRE(g.at(h, s, a) ==
                  Catch::Approx(reach * ev.qvalue(h, s, a)).margin(1e-12));
          double fd = fd_entry(m, pi, u, alpha, h, s, a, 1e-6);
          REQUIRE(std::abs(g.at(h, s, a) - fd) <= 1e-5);
        }
  }
}

TEST_CASE("subgradient matches finite differences away from clip boundaries") {
  int checked = 0;
  for (std::uint64_t seed = 41; checked < 25 && seed < 200; ++seed) {
    TabularMdp m = random_mdp(3, 2, 3, seed);
    MarkovPolicy pi = random_policy(3, 3, 2, seed + 3);
    SaTable u = random_bonus(3, 3, 2, seed + 5, 0.9);
    TruncatedEval ev = truncated_evaluate(m, pi, u, 1.0);
    if (near_clip_boundary(ev, 1e-4)) continue;
    SaTable g = truncated_subgradient(m, pi, u, 1.0, &ev);
    for (int h = 0; h < 3; ++h)
      for (int s = 0; s < 3; ++s)
        for (int a = 0; a < 2; ++a) {
          double fd = fd_entry(m, pi, u, 1.0, h, s, a, 1e-6);
          REQUIRE(std::abs(g.at(h, s, a) - fd) <= 1e-5);
        }
    ++checked;
  }
  REQUIRE(checked == 25);
}

TEST_CASE("concavity under mixtures, equality for normalized utility") {
  Prng seeds(55);
  for (int trial = 0; trial < 60; ++trial) {
    TabularMdp m = random_mdp(3, 2, 3, seeds.next_u64());
    MarkovPolicy a = random_policy(3, 3, 2, seeds.next_u64());
    MarkovPolicy b = random_policy(3, 3, 2, seeds.next_u64());
    double gamma = 0.1 + 0.8 * Prng(seeds.next_u64()).next_double();
    MarkovPolicy eq =
        mixture_to_markov(m, MixturePolicy({a, b}, {gamma, 1.0 - gamma}));

    SaTable u = random_bonus(3, 3, 2, seeds.next_u64(), 1.5);
    double mix_v = truncated_evaluate(m, eq, u, 1.0).at_initial;
    double lhs = gamma * truncated_evaluate(m, a, u, 1.0).at_initial +
                 (1 - gamma) * truncated_evaluate(m, b, u, 1.0).at_initial;
    REQUIRE(mix_v >= lhs - 1e-9);

    Utility nu = random_utility(m, seeds.next_u64(), true);
    double mix_n = truncated_evaluate(m, eq, nu, 1.0).at_initial;
    double lin_n = gamma * truncated_evaluate(m, a, nu, 1.0).at_initial +
                   (1 - gamma) * truncated_evaluate(m, b, nu, 1.0).at_initial;
    REQUIRE(mix_n == Catch::Approx(lin_n).margin(1e-9));
  }
}

TEST_CASE("truncated value is continuous in the mixture weight") {
  TabularMdp m = random_mdp(3, 2, 3, 77);
  MarkovPolicy a = random_policy(3, 3, 2, 78);
  MarkovPolicy b = random_policy(3, 3, 2, 79);
  SaTable u = random_bonus(3, 3, 2, 80, 1.2);
  auto value_at = [&](double gamma) {
    MarkovPolicy eq =
        mixture_to_markov(m, MixturePolicy({a, b}, {gamma, 1.0 - gamma}));
    return truncated_evaluate(m, eq, u, 1.0).at_initial;
  };
  // Empirical Lipschitz constant over a coarse grid bounds fine-grid jumps.
  double lip = 0.0;
  for (int i = 0; i < 20; ++i) {
    double g1 = i / 20.0, g2 = (i + 1) / 20.0;
    lip = std::max(lip, std::abs(value_at(g2) - value_at(g1)) / (g2 - g1));
  }
  double bound = 2.0 * lip + 1e-3;
  for (int i = 0; i < 200; ++i) {
    double g1 = i / 200.0, g2 = (i + 1) / 200.0;
    REQUIRE(std::abs(value_at(g2) - value_at(g1)) <= bound * (g2 - g1) + 1e-9);
  }
}

TEST_CASE("truncated value is monotone in the utility entries") {
  Prng seeds(85);
  for (int trial = 0; trial < 20; ++trial) {
    TabularMdp m = random_mdp(3, 2, 3, seeds.next_u64());
    MarkovPolicy pi = random_policy(3, 3, 2, seeds.next_u64());
    SaTable u = random_bonus(3, 3, 2, seeds.next_u64(), 0.8);
    double before = truncated_evaluate(m, pi, u, 1.0).at_initial;
    Prng pick(seeds.next_u64());
    SaTable bumped = u;
    bumped.values[pick.next_below(static_cast<int>(u.values.size()))] += 0.2;
    double after = truncated_evaluate(m, pi, bumped, 1.0).at_initial;
    REQUIRE(after >= before - 1e-12);
  }
}

TEST_CASE("truncated values always stay inside [0, 1]") {
  Prng seeds(95);
  for (int trial = 0; trial < 30; ++trial) {
    TabularMdp m = random_mdp(3, 3, 4, seeds.next_u64());
    MarkovPolicy pi = random_policy(4, 3, 3, seeds.next_u64());
    SaTable u = random_bonus(4, 3, 3, seeds.next_u64(), 3.0);
    TruncatedEval ev = truncated_evaluate(m, pi, u, 1.25);
    for (int h = 0; h <= 4; ++h)
      for (int s = 0; s < 3; ++s) {
        REQUIRE(ev.value(h, s) >= 0.0);
        REQUIRE(ev.value(h, s) <= 1.0);
      }
  }
}
