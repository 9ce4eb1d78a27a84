#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"
#include "synflow/eval.hpp"
#include "test_support.hpp"

using namespace synflow;
using namespace synflow::eval;
using synflow::testing::canon;

namespace {

chem::Fingerprint bits(std::initializer_list<int> on, int nbits = 64) {
  chem::Fingerprint fp(nbits, 2);
  for (int b : on) fp.set(b);
  return fp;
}

mdp::Env amide_env(int max_len, bool bb_terminals = true) {
  mdp::EnvOptions o;
  o.max_len = max_len;
  o.allow_bb_terminals = bb_terminals;
  return mdp::Env(testing::bb_records({"CC(=O)O", "CN"}), testing::template_list({{"amide", testing::kAmide}}), o);
}

}  // namespace

TEST_CASE("diversity examples") {
  const auto a = bits({0, 1, 2, 3});
  const auto b = bits({0, 1, 4});
  CHECK(chem::tanimoto(a, b) == doctest::Approx(0.4));
  CHECK(diversity({a, a, a}) == 0.0);
  CHECK(diversity({bits({0}), bits({1}), bits({2})}) == 1.0);
  CHECK(diversity({a, a, b}) == doctest::Approx(0.4));
  CHECK_THROWS_AS(diversity(std::vector<chem::Fingerprint>{a}), ContractViolation);
  CHECK(diversity(std::vector<Sample>{{"CCO", 1.0}, {"CCO", 0.5}}) == 0.0);
}

TEST_CASE("count_modes examples and properties") {
  CHECK(count_modes({{"Cc1ccccc1", 1.0}, {"Cc1ccccc1C", 0.95}, {"c1ccccc1", 0.91}}) == 1);
  CHECK(count_modes({{"Cc1ccccc1", 0.5}, {"CCO", 0.9}}) == 0);
  CHECK(count_modes({}) == 0);
  CHECK(count_modes({{"Cc1ccccc1", 1.0}, {"OC1CCCCC1", 1.0}, {"CCO", 0.2}}) == 2);
  // Acyclic molecules share one mode.
  CHECK(count_modes({{"CCO", 1.0}, {"CCCN", 1.0}, {"c1ccccc1", 1.0}}) == 2);

  std::vector<Sample> s = {{"Cc1ccccc1", 1.0},  {"OC1CCCCC1", 0.95}, {"CCO", 0.99},
                           {"c1ccc2ccccc2c1", 1.0}, {"C1CC1C(=O)O", 0.97}, {"Oc1ccccc1", 0.3}};
  const int total = count_modes(s);
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    auto perm = s;
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.uniform_index(i)]);
    CHECK(count_modes(perm) == total);
    int prev = 0;
    for (std::size_t k = 0; k <= perm.size(); ++k) {
      const int c = count_modes({perm.begin(), perm.begin() + static_cast<long>(k)});
      CHECK(c >= prev);
      prev = c;
    }
  }
}

TEST_CASE("tv_distance examples and metric axioms") {
  CHECK(tv_distance({{"a", 0.5}, {"b", 0.5}}, {{"a", 0.5}, {"b", 0.5}}) == 0.0);
  CHECK(tv_distance({{"a", 1.0}}, {{"b", 1.0}}) == 1.0);
  CHECK(tv_distance({{"a", 0.5}, {"b", 0.5}}, {{"a", 1.0}, {"b", 0.0}}) == doctest::Approx(0.5));
  Rng rng(2);
  auto random_dist = [&] {
    std::map<std::string, double> m;
    double z = 0.0;
    for (const char* k : {"a", "b", "c", "d"}) z += (m[k] = rng.uniform());
    for (auto& [k, v] : m) v /= z;
    return m;
  };
  for (int i = 0; i < 100; ++i) {
    const auto p = random_dist(), q = random_dist(), r = random_dist();
    CHECK(tv_distance(p, q) == doctest::Approx(tv_distance(q, p)));
    CHECK(tv_distance(p, p) == 0.0);
    CHECK(tv_distance(p, r) <= tv_distance(p, q) + tv_distance(q, r) + 1e-12);
  }
}

TEST_CASE("max_similarity_to_reference") {
  const std::vector<chem::Fingerprint> ref = {bits({0, 1}), bits({2, 3})};
  const auto sims = max_similarity_to_reference({bits({2, 3}), bits({10, 11}), bits({0, 1, 2})}, ref);
  REQUIRE(sims.size() == 3);
  CHECK(sims[0] == 1.0);
  CHECK(sims[1] == 0.0);
  CHECK(sims[2] == doctest::Approx(2.0 / 3.0));
  CHECK_THROWS_AS(max_similarity_to_reference({bits({0})}, {}), ContractViolation);

  Rng rng(3);
  std::vector<chem::Fingerprint> samples, refs;
  for (int i = 0; i < 30; ++i) {
    samples.push_back(chem::morgan_fingerprint(testing::random_molecule(rng)));
    refs.push_back(chem::morgan_fingerprint(testing::random_molecule(rng)));
  }
  const auto got = max_similarity_to_reference(samples, refs);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    double best = 0.0;
    for (const auto& r : refs) best = std::max(best, chem::tanimoto(samples[i], r));
    CHECK(got[i] == best);
  }
}

TEST_CASE("enumerate_space examples") {
  mdp::EnvOptions o;
  o.max_len = 3;
  const mdp::Env single(testing::bb_records({"OC(=O)c1ccccc1"}), {}, o);
  CHECK(enumerate_space(single).terminals == std::vector<std::string>{canon("OC(=O)c1ccccc1")});

  const auto one_step = enumerate_space(amide_env(1));
  std::vector<std::string> expected = {canon("CC(=O)O"), canon("CN"), canon("CNC(C)=O")};
  std::sort(expected.begin(), expected.end());
  CHECK(one_step.terminals == expected);
  const auto no_bb = enumerate_space(amide_env(1, false));
  CHECK(no_bb.terminals == std::vector<std::string>{canon("CNC(C)=O")});

  const auto tiny1 = enumerate_space(testing::tiny_env(1)).terminals;
  const auto tiny2 = enumerate_space(testing::tiny_env(2)).terminals;
  CHECK(tiny2.size() >= tiny1.size());
  CHECK(std::includes(tiny2.begin(), tiny2.end(), tiny1.begin(), tiny1.end()));
  CHECK(tiny2.size() == 29);
  CHECK(std::is_sorted(tiny2.begin(), tiny2.end()));

  CHECK_THROWS_AS(enumerate_space(testing::tiny_env(2), 5), EnumerationBudgetExceeded);
}

TEST_CASE("exact terminal distribution matches sampling") {
  const auto env = testing::tiny_env();
  nn::ParamStore store;
  Rng init(4);
  policy::PolicyConfig cfg;
  cfg.hidden = 16;
  const policy::ForwardPolicy pf(env, cfg, store, init);
  const auto exact = exact_terminal_distribution(env, pf);
  double total = 0.0;
  for (const auto& [k, v] : exact) total += v;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
  const auto space = enumerate_space(env).terminals;
  CHECK(exact.size() == space.size());

  Rng rng(5);
  const int n = 20000;
  std::map<std::string, double> freq;
  for (const auto& t : policy::sample_forward(pf, nullptr, n, rng)) freq[t.last().smiles] += 1.0 / n;
  CHECK(tv_distance(freq, exact) < 0.03);
}

TEST_CASE("solved routes: building blocks always, outsiders never") {
  const auto env = amide_env(2);
  const auto pb = policy::BackwardPolicy::uniform(env);
  CHECK(solved_routes_rate(pb, {canon("CC(=O)O"), canon("CN")}, 1, 3, 1) == 1.0);
  CHECK(solved_routes_rate(pb, {canon("c1ccccc1"), canon("CCCl")}, 4, 3, 1) == 0.0);
  CHECK(solved_routes_rate(pb, {canon("CNC(C)=O"), canon("c1ccccc1")}, 1, 3, 1) == 0.5);
  CHECK(uniform_solve_probability(env, canon("CC(=O)O"), 3) == 1.0);
  CHECK(uniform_solve_probability(env, canon("c1ccccc1"), 3) == 0.0);
}

TEST_CASE("uniform solve probability agrees with Monte Carlo on the trap env") {
  mdp::EnvOptions o;
  o.max_len = 2;
  const auto dir = testing::data_dir() / "envs" / "trap";
  const auto env = mdp::Env::load(dir / "building_blocks.tsv", dir / "templates.tsv", o);
  nn::ParamStore store;
  Rng init(6);
  policy::PolicyConfig cfg;
  cfg.zero_init = true;
  cfg.hidden = 4;
  const policy::ForwardPolicy pf(env, cfg, store, init);
  Rng rng(7);
  std::set<std::string> terminals;
  for (const auto& t : policy::sample_forward(pf, nullptr, 40, rng)) terminals.insert(t.last().smiles);
  const auto pb = policy::BackwardPolicy::uniform(env);
  const int reps = 2000;
  for (const auto& term : terminals) {
    const double exact = uniform_solve_probability(env, term, 3);
    const auto rollouts = policy::sample_backward(pb, std::vector<std::string>(reps, term), rng, 3);
    double hits = 0.0;
    for (const auto& r : rollouts) hits += r.reached_s0;
    const double sigma = std::sqrt(std::max(exact * (1.0 - exact), 1e-4) / reps);
    CHECK(std::abs(hits / reps - exact) <= 4.0 * sigma);
  }
}

TEST_CASE("logz_vs_count and top_k_mean") {
  CHECK(logz_vs_count(0.0, 1) == 0.0);
  CHECK(logz_vs_count(std::log(3.3), 3) == doctest::Approx(0.1));
  CHECK(top_k_mean({0.1, 0.9, 0.9, 0.5}, 2) == doctest::Approx(0.9));
  CHECK(top_k_mean({0.1, 0.9, 0.5}, 10) == doctest::Approx(0.5));
}
