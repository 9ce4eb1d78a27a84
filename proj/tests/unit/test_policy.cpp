#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "synflow/policy.hpp"
#include "test_support.hpp"

using namespace synflow;
using namespace synflow::policy;
using synflow::testing::canon;

namespace {

double exp_sum(const std::vector<double>& lp) {
  double s = 0.0;
  for (double v : lp)
    if (std::isfinite(v)) s += std::exp(v);
  return s;
}

int legal(const std::vector<double>& lp) {
  int n = 0;
  for (double v : lp) n += std::isfinite(v) ? 1 : 0;
  return n;
}

PolicyConfig small(bool zero = false) {
  PolicyConfig c;
  c.hidden = 16;
  c.zero_init = zero;
  return c;
}

}  // namespace

TEST_CASE("state features: fingerprint bits then normalized step count") {
  const auto env = testing::tiny_env();
  const auto s0 = state_features(env, mdp::State{});
  REQUIRE(s0.size() == static_cast<std::size_t>(env.options().fingerprint_bits + 1));
  for (double v : s0) CHECK(v == 0.0);
  const auto f = state_features(env, {mdp::StateKind::Mol, canon("CC(=O)NC"), 1});
  CHECK(f.back() == doctest::Approx(0.5));
  double bits = 0.0;
  for (std::size_t i = 0; i + 1 < f.size(); ++i) bits += f[i];
  CHECK(bits > 0.0);
}

TEST_CASE("s0: only AddFirstReactant, over every building block") {
  const auto env = testing::tiny_env();
  nn::ParamStore store;
  Rng init(1);
  const ForwardPolicy pf(env, small(), store, init);
  const auto d = pf.distribution(mdp::State{});
  CHECK(d.top.empty());
  REQUIRE(d.first.size() == static_cast<std::size_t>(env.num_bbs()));
  CHECK(legal(d.first) == env.num_bbs());
  CHECK(exp_sum(d.first) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("zero init is uniform over legal forward and backward actions") {
  const auto env = testing::tiny_env();
  nn::ParamStore store;
  Rng init(2);
  const ForwardPolicy pf(env, small(true), store, init);
  const BackwardPolicy pb(env, small(true), store, init, "pb");
  const mdp::State acid{mdp::StateKind::Mol, canon("CC(=O)O"), 0};
  const auto d = pf.distribution(acid);
  const int n = legal(d.top);
  REQUIRE(n > 1);
  for (double v : d.top)
    if (std::isfinite(v)) CHECK(v == doctest::Approx(-std::log(n)));
  for (const auto& [pos, cond] : d.add_reactant) {
    const int k = legal(cond);
    for (double v : cond)
      if (std::isfinite(v)) CHECK(v == doctest::Approx(-std::log(k)));
  }
  const mdp::State product{mdp::StateKind::Mol, canon("CC(=O)NCCOC(=O)c1ccccc1"), 2};
  const auto b = pb.distribution(product, true);
  const int m = env.backward_mask(product, true).count();
  REQUIRE(m >= 1);
  CHECK(legal(b) == m);
  for (double v : b)
    if (std::isfinite(v)) CHECK(v == doctest::Approx(-std::log(m)));
}

TEST_CASE("distributions normalize at every visited state and give masked actions zero mass") {
  const auto env = testing::tiny_env();
  nn::ParamStore store;
  Rng init(3);
  const ForwardPolicy pf(env, small(), store, init);
  const BackwardPolicy pb(env, small(), store, init, "pb");
  Rng rng(4);
  for (const auto& t : sample_forward(pf, nullptr, 100, rng)) {
    for (std::size_t i = 1; i + 1 < t.states.size(); ++i) {
      const auto& s = t.states[i];
      const auto d = pf.distribution(s);
      CHECK(exp_sum(d.top) == doctest::Approx(1.0).epsilon(1e-6));
      const auto top_mask = env.forward_mask(s).top();
      for (std::size_t k = 0; k < top_mask.size(); ++k) CHECK(std::isfinite(d.top[k]) == (top_mask[k] != 0));
      for (const auto& [pos, cond] : d.add_reactant) {
        CHECK(exp_sum(cond) == doctest::Approx(1.0).epsilon(1e-6));
        const auto mask = env.addreactant_mask(s, env.bi_templates()[static_cast<std::size_t>(pos)]);
        for (std::size_t k = 0; k < mask.size(); ++k) CHECK(std::isfinite(cond[k]) == (mask[k] != 0));
      }
      const auto b = pb.distribution(s);
      CHECK(exp_sum(b) == doctest::Approx(1.0).epsilon(1e-6));
      const auto bmask = env.backward_mask(s).flat();
      for (std::size_t k = 0; k < bmask.size(); ++k) CHECK(std::isfinite(b[k]) == (bmask[k] != 0));
    }
  }
}

TEST_CASE("backward distribution at a plain building block is degenerate on removal") {
  const auto env = testing::tiny_env();
  nn::ParamStore store;
  Rng init(5);
  const BackwardPolicy pb(env, small(), store, init, "pb");
  const auto b = pb.distribution({mdp::StateKind::Mol, canon("CN"), 0});
  CHECK(b.back() == 0.0);
  CHECK(legal(b) == 1);
}

TEST_CASE("sample_index: degenerate, multinomial frequencies, determinism, temperature") {
  Rng rng(6);
  const std::vector<double> one = {kNegInf, 0.0, kNegInf};
  for (int i = 0; i < 10; ++i) CHECK(sample_index(one, 1.0, rng) == 1);

  const std::vector<double> p = {0.2, 0.5, 0.3};
  std::vector<double> lp;
  for (double v : p) lp.push_back(std::log(v));
  const int n = 100000;
  std::vector<int> counts(3, 0);
  for (int i = 0; i < n; ++i) ++counts[sample_index(lp, 1.0, rng)];
  for (std::size_t k = 0; k < 3; ++k) {
    const double sigma = std::sqrt(n * p[k] * (1.0 - p[k]));
    CHECK(std::abs(counts[k] - n * p[k]) <= 3.0 * sigma);
  }

  Rng a(7), b(7);
  for (int i = 0; i < 100; ++i) CHECK(sample_index(lp, 1.0, a) == sample_index(lp, 1.0, b));
  CHECK(sample_index(lp, 0.0, rng) == 1);
  CHECK_THROWS_AS(sample_index(lp, -1.0, rng), ContractViolation);
}

TEST_CASE("greedy sampling is identical across seeds") {
  const auto env = testing::tiny_env();
  nn::ParamStore store;
  Rng init(8);
  const ForwardPolicy pf(env, small(), store, init);
  Rng r1(1), r2(999);
  const auto a = rollout_forward(pf, nullptr, r1, 0.0);
  const auto b = rollout_forward(pf, nullptr, r2, 0.0);
  CHECK(a.states == b.states);
  CHECK(a.actions == b.actions);
}

TEST_CASE("uniform P_B log-probability: hand count, cross-check with a zero-weight network") {
  const auto env = testing::tiny_env();
  nn::ParamStore store;
  Rng init(9);
  const ForwardPolicy pf(env, small(), store, init);
  const BackwardPolicy zero(env, small(true), store, init, "pb");
  const auto uniform = BackwardPolicy::uniform(env);

  // acetic acid + methylamine, then stop: the amide has one legal reverse
  // action whose two fragments are both building blocks (a tie), and the
  // acid then has only the removal.
  mdp::Trajectory t;
  t.states.push_back(mdp::State{});
  const int acid = *env.bb_index(canon("CC(=O)O"));
  const int amine = *env.bb_index(canon("CN"));
  int amide_t = 0;
  while (env.templates()[static_cast<std::size_t>(amide_t)].id != "amide_coupling") ++amide_t;
  for (const mdp::Action a : {mdp::Action{mdp::ActionType::AddFirstReactant, -1, acid},
                              mdp::Action{mdp::ActionType::ReactBi, amide_t, amine}, mdp::Action{}}) {
    t.states.push_back(env.step_forward(t.states.back(), a));
    t.actions.push_back(a);
  }
  const auto steps = mdp::backward_steps(env, t);
  REQUIRE(steps.size() == 2);
  const int c0 = env.backward_mask({mdp::StateKind::Mol, canon("CNC(C)=O"), 1}, true).count();
  const double expected = -std::log(c0) + std::log(0.5) - std::log(1.0);
  CHECK(uniform_backward_logprob(env, steps) == doctest::Approx(expected));
  CHECK(trajectory_logprob(pf, uniform, t).second == doctest::Approx(expected));
  CHECK(trajectory_logprob(pf, zero, t).second == doctest::Approx(expected).epsilon(1e-9));

  Rng rng(10);
  for (const auto& tr : sample_forward(pf, nullptr, 50, rng)) {
    const auto s = mdp::backward_steps(env, tr);
    CHECK(trajectory_logprob(pf, zero, tr).second == doctest::Approx(uniform_backward_logprob(env, s)).epsilon(1e-9));
  }
}

TEST_CASE("recorded log-probabilities match recomputation and survive a checkpoint round trip") {
  const auto env = testing::tiny_env();
  nn::ParamStore store;
  Rng init(11);
  const ForwardPolicy pf(env, small(), store, init);
  const BackwardPolicy pb(env, small(), store, init, "pb");
  Rng rng(12);
  const auto trajs = sample_forward(pf, &pb, 30, rng);
  std::vector<std::pair<double, double>> before;
  for (const auto& t : trajs) {
    const auto lp = trajectory_logprob(pf, pb, t);
    double f = 0.0, b = 0.0;
    for (double v : t.fwd_logprobs) f += v;
    for (double v : t.bck_logprobs) b += v;
    CHECK(lp.first == doctest::Approx(f).epsilon(1e-9));
    CHECK(lp.second == doctest::Approx(b).epsilon(1e-9));
    before.push_back(lp);
  }
  const auto path = std::filesystem::temp_directory_path() / "synflow_test_policy.ckpt";
  nn::save_checkpoint(path, store, "{}");
  nn::ParamStore store2;
  Rng other(99);
  const ForwardPolicy pf2(env, small(), store2, other);
  const BackwardPolicy pb2(env, small(), store2, other, "pb");
  nn::load_checkpoint(path, store2);
  for (std::size_t i = 0; i < trajs.size(); ++i) CHECK(trajectory_logprob(pf2, pb2, trajs[i]) == before[i]);
  std::filesystem::remove(path);
}

TEST_CASE("bb matrix: fixed fingerprints in fingerprint mode, trainable in embedding mode") {
  const auto env = testing::tiny_env();
  nn::ParamStore fp_store, emb_store;
  Rng init(13);
  const ForwardPolicy fp(env, small(), fp_store, init);
  PolicyConfig emb_cfg = small();
  emb_cfg.bb_mode = BbMode::Embedding;
  const ForwardPolicy emb(env, emb_cfg, emb_store, init);
  const auto& fixed = fp_store.get(fp.bb_matrix_name());
  CHECK_FALSE(fixed.trainable);
  CHECK(fixed.rows == env.num_bbs());
  for (int b = 0; b < env.num_bbs(); ++b)
    for (int k = 0; k < env.options().fingerprint_bits; ++k) {
      const bool bit = env.building_blocks()[static_cast<std::size_t>(b)].fp.test(k);
      CHECK(fixed.value[static_cast<std::size_t>(b * fixed.cols + k)] == (bit ? 1.0f : 0.0f));
    }
  CHECK(emb_store.get(emb.bb_matrix_name()).trainable);
}
