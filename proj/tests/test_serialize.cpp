#include <catch2/catch_amalgamated.hpp>
#include <sstream>

#include "sweet/serialize.hpp"
#include "test_helpers.hpp"

using namespace sweet;
using test_util::random_mdp;
using test_util::random_policy;
using test_util::random_utility;

TEST_CASE("mdp and policy round-trips are bit exact") {
  Prng seeds(123);
  for (int trial = 0; trial < 10; ++trial) {
    TabularMdp m = random_mdp(4, 3, 3, seeds.next_u64());
    std::stringstream ss;
    write_mdp(ss, m);
    TabularMdp back = read_mdp(ss, "mem");
    REQUIRE(back.kernel == m.kernel);
    REQUIRE(back.initial_state == m.initial_state);

    MarkovPolicy pi = random_policy(3, 4, 3, seeds.next_u64());
    std::stringstream ps;
    write_policy(ps, pi);
    REQUIRE(read_policy(ps, "mem").probs == pi.probs);
  }
}

TEST_CASE("utility and mixture round-trips preserve payload and flags") {
  TabularMdp m = random_mdp(3, 2, 2, 5);
  Utility u = random_utility(m, 6, true);
  std::stringstream us;
  write_utility(us, u);
  Utility ub = read_utility(us, "mem");
  REQUIRE(ub.values == u.values);
  REQUIRE(ub.normalized == u.normalized);

  MixturePolicy mix({random_policy(2, 3, 2, 7), random_policy(2, 3, 2, 8)},
                    {0.25, 0.75});
  std::stringstream ms;
  write_mixture(ms, mix);
  MixturePolicy mb = read_mixture(ms, "mem");
  REQUIRE(mb.weights == mix.weights);
  REQUIRE(mb.vertices[0].probs == mix.vertices[0].probs);
  REQUIRE(mb.vertices[1].probs == mix.vertices[1].probs);
}

TEST_CASE("doubles survive the decimal encoding exactly") {
  Prng rng(321);
  for (int i = 0; i < 2000; ++i) {
    double v = rng.next_double() * std::pow(10.0, static_cast<int>(rng.next_below(20)) - 10);
    REQUIRE(parse_double(format_double(v), "mem") == v);
  }
  REQUIRE(parse_double(format_double(0.1), "mem") == 0.1);
  REQUIRE(parse_double(format_double(1.0 / 3.0), "mem") == 1.0 / 3.0);
}

TEST_CASE("parse errors carry file and line information") {
  std::stringstream bad("sweet/tabular_mdp 1\nS x A 2 H 2 s1 0\n");
  try {
    read_mdp(bad, "bad.txt");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    REQUIRE(std::string(e.what()).find("bad.txt:2") != std::string::npos);
  }

  std::stringstream wrong_kind("sweet/markov_policy 1\n");
  REQUIRE_THROWS_AS(read_mdp(wrong_kind, "mem"), ParseError);

  std::stringstream truncated("sweet/tabular_mdp 1\nS 2 A 1 H 1 s1 0\n");
  REQUIRE_THROWS_AS(read_mdp(truncated, "mem"), ParseError);
}
