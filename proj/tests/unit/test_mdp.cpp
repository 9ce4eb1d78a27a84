#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "synflow/eval.hpp"
#include "synflow/policy.hpp"
#include "test_support.hpp"

using namespace synflow;
using namespace synflow::mdp;
using synflow::testing::canon;

namespace {

Env amide_env(int max_len = 2) {
  EnvOptions o;
  o.max_len = max_len;
  return Env(testing::bb_records({"CC(=O)O", "CN", "CCO"}), testing::template_list({{"amide", testing::kAmide}}), o);
}

State mol_state(const std::string& smiles, int steps = 0) { return {StateKind::Mol, canon(smiles), steps}; }

Action react_bi(const Env& env, const std::string& id, int bb) {
  for (int t = 0; t < static_cast<int>(env.templates().size()); ++t)
    if (env.templates()[t].id == id) return {ActionType::ReactBi, t, bb};
  throw Error("no template " + id);
}

int bb_of(const Env& env, const std::string& smiles) { return *env.bb_index(canon(smiles)); }

}  // namespace

TEST_CASE("forward_mask: empty state only offers AddFirstReactant") {
  const auto env = amide_env();
  const auto m = env.forward_mask(State{});
  CHECK_FALSE(m.stop);
  CHECK(m.add_first == std::vector<std::uint8_t>{1, 1, 1});
  CHECK_FALSE(m.any_top());
}

TEST_CASE("forward_mask: acid with an amine building block allows ReactBi[amide]") {
  const auto env = amide_env();
  const auto m = env.forward_mask(mol_state("CC(=O)O"));
  CHECK(m.stop);
  REQUIRE(m.bi.size() == 1);
  CHECK(m.bi[0] == 1);
  // Only methylamine carries the complementary NH2.
  const auto add = env.addreactant_mask(mol_state("CC(=O)O"), 0);
  CHECK(add == std::vector<std::uint8_t>{0, 1, 0});
}

TEST_CASE("forward_mask: no template match leaves only Stop; max length leaves only Stop") {
  const auto env = amide_env();
  const auto ethanol = env.forward_mask(mol_state("CCO"));
  CHECK(ethanol.stop);
  CHECK(ethanol.bi == std::vector<std::uint8_t>{0});
  const auto at_max = env.forward_mask(mol_state("CC(=O)O", 2));
  CHECK(at_max.stop);
  CHECK(at_max.bi == std::vector<std::uint8_t>{0});
}

TEST_CASE("forward_mask: bare building blocks cannot stop without allow_bb_terminals") {
  EnvOptions o;
  o.allow_bb_terminals = false;
  const Env env(testing::bb_records({"CC(=O)O", "CN"}), testing::template_list({{"amide", testing::kAmide}}), o);
  const auto m = env.forward_mask(mol_state("CC(=O)O"));
  CHECK_FALSE(m.stop);
  CHECK(m.bi[0] == 1);
  CHECK(env.forward_mask(mol_state("CNC(C)=O", 1)).stop);
}

TEST_CASE("step_forward transitions") {
  const auto env = amide_env();
  const State s1 = env.step_forward(State{}, {ActionType::AddFirstReactant, -1, bb_of(env, "CC(=O)O")});
  CHECK(s1 == mol_state("CC(=O)O"));
  const State s2 = env.step_forward(s1, react_bi(env, "amide", bb_of(env, "CN")));
  CHECK(s2 == mol_state("CNC(C)=O", 1));
  const State s3 = env.step_forward(s2, {ActionType::Stop});
  CHECK(s3.kind == StateKind::Terminal);
  CHECK(s3.smiles == s2.smiles);
  CHECK_THROWS_AS(env.forward_mask(s3), ContractViolation);
}

TEST_CASE("step_forward rejects masked actions") {
  const auto env = amide_env();
  CHECK_THROWS_AS(env.step_forward(mol_state("CCO"), react_bi(env, "amide", bb_of(env, "CN"))), ContractViolation);
  CHECK_THROWS_AS(env.step_forward(mol_state("CC(=O)O"), react_bi(env, "amide", bb_of(env, "CCO"))),
                  ContractViolation);
  CHECK_THROWS_AS(env.step_forward(State{}, {ActionType::Stop}), ContractViolation);
  CHECK_THROWS_AS(env.step_forward(mol_state("CC(=O)O"), {ActionType::BckRemoveFirstReactant}), ContractViolation);
}

TEST_CASE("backward_mask examples") {
  const auto env = amide_env();
  const auto bb = env.backward_mask(mol_state("CC(=O)O"));
  CHECK(bb.remove);
  CHECK(bb.bi == std::vector<std::uint8_t>{0});
  const auto amide = env.backward_mask(mol_state("CNC(C)=O", 1));
  CHECK(amide.bi == std::vector<std::uint8_t>{1});
  CHECK_FALSE(amide.remove);
  const auto unrelated = env.backward_mask(mol_state("c1ccccc1", 1));
  CHECK(unrelated.count() == 0);
}

TEST_CASE("step_backward: removing the first reactant and bimolecular ties") {
  const auto env = amide_env();
  Rng rng(1);
  const auto removed = env.step_backward(mol_state("CC(=O)O"), {ActionType::BckRemoveFirstReactant}, rng);
  CHECK(removed.previous == State{});
  CHECK(removed.extra_logprob == 0.0);

  // Both fragments of N-methylacetamide are building blocks: a fair tie.
  std::set<std::string> seen;
  for (int i = 0; i < 64; ++i) {
    const auto r = env.step_backward(mol_state("CNC(C)=O", 1), {ActionType::BckReactBi, 0}, rng);
    CHECK(r.extra_logprob == doctest::Approx(std::log(0.5)));
    CHECK(r.previous.steps == 0);
    seen.insert(r.previous.smiles);
  }
  CHECK(seen == std::set<std::string>{canon("CC(=O)O"), canon("CN")});
}

TEST_CASE("step_backward: exactly one building-block fragment is deterministic") {
  const auto env = testing::tiny_env();
  Rng rng(2);
  const State product = mol_state("CC(=O)NCCOC(=O)c1ccccc1", 2);
  const auto mask = env.backward_mask(product);
  int ester = -1;
  for (int t = 0; t < static_cast<int>(env.templates().size()); ++t)
    if (env.templates()[t].id == "esterification") ester = t;
  REQUIRE(mask.bi[static_cast<std::size_t>(env.template_position(ester))]);
  for (int i = 0; i < 8; ++i) {
    const auto r = env.step_backward(product, {ActionType::BckReactBi, ester}, rng);
    CHECK(r.previous == mol_state("CC(=O)NCCO", 1));
    CHECK(r.extra_logprob == 0.0);
  }
}

TEST_CASE("forced env: one building block, no templates") {
  EnvOptions o;
  o.max_len = 1;
  const Env env(testing::bb_records({"c1ccccc1C(=O)O"}), {}, o);
  nn::ParamStore store;
  Rng init(0);
  policy::PolicyConfig cfg;
  cfg.hidden = 8;
  const policy::ForwardPolicy pf(env, cfg, store, init);
  const auto pb = policy::BackwardPolicy::uniform(env);
  Rng rng(3);
  const auto t = policy::rollout_forward(pf, &pb, rng);
  REQUIRE(t.states.size() == 3);
  CHECK(t.states[0].kind == StateKind::Empty);
  CHECK(t.states[1].kind == StateKind::Mol);
  CHECK(t.states[2].kind == StateKind::Terminal);
  CHECK(t.actions.size() == t.states.size() - 1);
  const auto [lpf, lpb] = policy::trajectory_logprob(pf, pb, t);
  CHECK(lpf == 0.0);
  CHECK(lpb == 0.0);
}

TEST_CASE("forward rollouts stay inside the enumerated space and obey the length bound") {
  const auto env = testing::tiny_env();
  const auto space = eval::enumerate_space(env);
  const std::set<std::string> terminals(space.terminals.begin(), space.terminals.end());
  nn::ParamStore store;
  Rng init(4);
  policy::PolicyConfig cfg;
  cfg.hidden = 16;
  const policy::ForwardPolicy pf(env, cfg, store, init);
  Rng rng(5);
  for (const auto& t : policy::sample_forward(pf, nullptr, 1000, rng)) {
    CHECK(t.complete());
    CHECK(t.states.front().kind == StateKind::Empty);
    CHECK(t.actions.back().type == ActionType::Stop);
    CHECK(t.actions.size() + 1 == t.states.size());
    CHECK(t.reactions() <= env.max_len());
    CHECK(terminals.count(t.last().smiles) == 1);
    for (const auto& a : t.actions) CHECK(static_cast<int>(a.type) < static_cast<int>(ActionType::BckReactUni));
  }
}

TEST_CASE("composite ReactBi log-probability is the sum of its two levels") {
  const auto env = testing::tiny_env();
  nn::ParamStore store;
  Rng init(6);
  policy::PolicyConfig cfg;
  cfg.hidden = 16;
  const policy::ForwardPolicy pf(env, cfg, store, init);
  Rng rng(7);
  int checked = 0;
  for (const auto& t : policy::sample_forward(pf, nullptr, 200, rng)) {
    for (std::size_t i = 0; i < t.actions.size(); ++i) {
      const auto& a = t.actions[i];
      if (a.type != ActionType::ReactBi) continue;
      const auto d = pf.distribution(t.states[i]);
      const int pos = env.template_position(a.template_index);
      const double expected = d.top[static_cast<std::size_t>(env.top_index(a))] +
                              d.add_reactant.at(pos)[static_cast<std::size_t>(a.bb_index)];
      CHECK(t.fwd_logprobs[i] == doctest::Approx(expected).epsilon(1e-12));
      ++checked;
    }
  }
  CHECK(checked > 0);
}

TEST_CASE("reverse_of recovers every realized transition") {
  const auto env = testing::tiny_env();
  nn::ParamStore store;
  Rng init(8);
  policy::PolicyConfig cfg;
  cfg.hidden = 16;
  const policy::ForwardPolicy pf(env, cfg, store, init);
  Rng rng(9);
  for (const auto& t : policy::sample_forward(pf, nullptr, 100, rng)) {
    const auto steps = backward_steps(env, t);
    CHECK(steps.size() == t.actions.size() - 1);
    CHECK(steps.front().from_terminal);
    for (std::size_t k = 1; k < steps.size(); ++k) CHECK_FALSE(steps[k].from_terminal);
  }
}

TEST_CASE("backward rollouts: building-block terminal and out-of-space terminal") {
  const auto env = amide_env();
  const auto pb = policy::BackwardPolicy::uniform(env);
  Rng rng(10);
  const auto bb = policy::rollout_backward(pb, canon("CC(=O)O"), rng, 3);
  CHECK(bb.reached_s0);
  CHECK(bb.steps.size() == 1);
  const auto outside = policy::rollout_backward(pb, canon("c1ccccc1"), rng, 3);
  CHECK_FALSE(outside.reached_s0);
  const auto amide = policy::rollout_backward(pb, canon("CNC(C)=O"), rng, 3);
  CHECK(amide.reached_s0);
  const auto fwd = amide.to_forward(env);
  CHECK(fwd.complete());
  CHECK(fwd.last().smiles == canon("CNC(C)=O"));
}

TEST_CASE("routes: JSON round trip and byte-identical re-export") {
  const auto env = testing::tiny_env();
  nn::ParamStore store;
  Rng init(11);
  policy::PolicyConfig cfg;
  cfg.hidden = 16;
  const policy::ForwardPolicy pf(env, cfg, store, init);
  Rng rng(12);
  std::vector<Route> routes;
  for (auto& t : policy::sample_forward(pf, nullptr, 20, rng)) {
    t.reward = 0.25 * static_cast<double>(routes.size());
    routes.push_back(make_route(env, t));
  }
  for (const auto& r : routes) CHECK(route_from_json(route_to_json(r)) == r);

  const auto dir = std::filesystem::temp_directory_path() / "synflow_test_routes";
  std::filesystem::create_directories(dir);
  export_routes(routes, dir / "a.jsonl");
  CHECK(read_routes(dir / "a.jsonl") == routes);
  export_routes(read_routes(dir / "a.jsonl"), dir / "b.jsonl");
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  CHECK(slurp(dir / "a.jsonl") == slurp(dir / "b.jsonl"));

  export_routes({}, dir / "empty.jsonl");
  CHECK(std::filesystem::file_size(dir / "empty.jsonl") == 0);
  CHECK(read_routes(dir / "empty.jsonl").empty());
  CHECK_THROWS_AS(route_from_json("{\"reward\": 1}"), ParseError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("env hash depends on contents and options") {
  const auto a = amide_env(2);
  const auto b = amide_env(2);
  const auto c = amide_env(3);
  CHECK(a.hash() == b.hash());
  CHECK(a.hash() != c.hash());
}
