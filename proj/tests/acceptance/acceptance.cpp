// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero when any criterion fails. Arguments select criteria by
// number (default: all); --out DIR sets the scratch directory.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "../unit/test_support.hpp"
#include "synflow/commands.hpp"
#include "synflow/eval.hpp"

using namespace synflow;
namespace fs = std::filesystem;

namespace {

fs::path g_out = "acceptance_out";

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

fs::path env_dir(const std::string& name) { return testing::data_dir() / "envs" / name; }

config::RunConfig env_config(const std::string& env, const std::string& file = "config.toml") {
  return config::load_config(env_dir(env) / file);
}

int command(const std::string& verb, const config::RunConfig& c, std::optional<fs::path> ckpt = std::nullopt) {
  std::ostringstream sink;
  return commands::run_command(verb, c, commands::CommandOptions{std::move(ckpt)}, sink);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("missing " + p.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

/// Rows of a CSV file without its header, split on commas.
std::vector<std::vector<std::string>> csv_rows(const fs::path& p) {
  std::istringstream in(slurp(p));
  std::string line;
  std::getline(in, line);
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

// ---------------------------------------------------------------------------
// Tiny env training runs shared by criteria 1, 8 and 9.

struct TinyRun {
  double tv = 1.0;
  double top10 = 0.0;
  bool bb_hash_constant = false;
  double cpu = 0.0;
};

TinyRun run_tiny(policy::BbMode mode) {
  auto cfg = env_config("tiny");
  cfg.policy.bb_mode = mode;
  const auto env = config::load_env(cfg.env);
  const auto reward = config::build_reward(cfg.reward);
  const double t0 = cpu_seconds();
  train::Trainer trainer(env, reward, cfg.train, cfg.policy, cfg.seed);
  const auto bb = trainer.forward_policy().bb_matrix_name();
  const auto before = trainer.store().hash(bb);
  trainer.run();
  TinyRun r;
  r.bb_hash_constant = trainer.store().hash(bb) == before;

  std::map<std::string, double> target;
  double z = 0.0;
  for (const auto& s : eval::enumerate_space(env).terminals)
    z += target[s] = rewards::apply_exponent(trainer.reward(s), cfg.train.beta);
  for (auto& [s, p] : target) p /= z;

  Rng rng(derive_seed(cfg.seed, {100}));
  const int n = 50000;
  const auto samples = policy::sample_forward(trainer.forward_policy(), nullptr, n, rng);
  std::map<std::string, double> empirical;
  for (const auto& t : samples) empirical[t.last().smiles] += 1.0 / n;
  r.tv = eval::tv_distance(empirical, target);
  std::vector<double> rewards;
  for (int i = 0; i < cfg.eval.samples; ++i) rewards.push_back(trainer.reward(samples[static_cast<std::size_t>(i)].last().smiles));
  r.top10 = eval::top_k_mean(rewards, static_cast<std::size_t>(cfg.eval.top_k));
  r.cpu = cpu_seconds() - t0;
  return r;
}

const TinyRun& tiny_run(policy::BbMode mode) {
  static std::map<policy::BbMode, TinyRun> cache;
  auto it = cache.find(mode);
  if (it == cache.end()) it = cache.emplace(mode, run_tiny(mode)).first;
  return it->second;
}

// ---------------------------------------------------------------------------
// Trap env runs shared by criteria 3 and 4.

struct RouteRates {
  int terminals = 0;
  double policy = 0.0;
  double uniform = 0.0;
};

struct TrapRun {
  RouteRates train;
  RouteRates test;
  /// Mean backward reward over the last steps of training.
  double final_backward_reward = -1.0;
  int window = 0;
};

TrapRun run_trap(const std::string& file) {
  auto cfg = env_config("trap", file);
  cfg.out = g_out / ("trap_" + fs::path(file).stem().string());
  if (command("train", cfg) != 0) throw Error("train failed");
  cfg.eval.train_terminals = cfg.out / "seen_terminals.txt";
  if (command("routes", cfg, cfg.out / "checkpoints" / "final.ckpt") != 0) throw Error("routes failed");
  TrapRun r;
  for (const auto& row : csv_rows(cfg.out / "routes.csv")) {
    RouteRates& rr = row.at(0) == "train" ? r.train : r.test;
    rr.terminals = std::stoi(row.at(1));
    rr.policy = std::stod(row.at(2));
    rr.uniform = std::stod(row.at(3));
  }
  const auto metrics = csv_rows(cfg.out / "metrics.csv");
  r.window = std::min<int>(100, static_cast<int>(metrics.size()));
  double total = 0.0;
  for (std::size_t i = metrics.size() - static_cast<std::size_t>(r.window); i < metrics.size(); ++i)
    total += std::stod(metrics[i].at(4));
  r.final_backward_reward = total / r.window;
  return r;
}

const TrapRun& trap_run(const std::string& file) {
  static std::map<std::string, TrapRun> cache;
  auto it = cache.find(file);
  if (it == cache.end()) it = cache.emplace(file, run_trap(file)).first;
  return it->second;
}

// ---------------------------------------------------------------------------

Outcome criterion1() {
  const auto& r = tiny_run(policy::BbMode::Fingerprint);
  return {r.tv <= 0.05 && r.cpu <= 600.0,
          "TV " + num(r.tv) + " (<= 0.05) over 50000 samples, 5000 steps, " + num(r.cpu, 3) + " s CPU"};
}

Outcome criterion2() {
  struct Case {
    std::string env, file;
  };
  bool pass = true;
  std::set<std::size_t> counts;
  std::string detail;
  for (const Case& c : {Case{"count1", "config.toml"}, Case{"count3", "config.toml"}, Case{"tiny", "estimate.toml"}}) {
    auto cfg = env_config(c.env, c.file);
    cfg.out = g_out / ("estimate_" + c.env);
    command("estimate-space", cfg);
    const auto row = csv_rows(cfg.out / "estimate_space.csv").at(0);
    const double est = std::stod(row.at(1));
    const auto n = std::stoul(row.at(2));
    const double rel = std::stod(row.at(3));
    pass = pass && rel <= 0.15;
    counts.insert(n);
    detail += c.env + " exp(logZ) " + num(est) + " vs " + std::to_string(n) + " (rel " + num(rel, 3) + "); ";
  }
  pass = pass && counts.size() >= 3 && counts.count(1) && *counts.rbegin() >= 20;
  return {pass, detail + "tolerance 0.15"};
}

Outcome criterion3() {
  bool pass = true;
  std::string detail;
  for (const auto& [name, file] : {std::pair{"maxlikelihood", "config.toml"}, std::pair{"reinforce", "reinforce.toml"}}) {
    const auto& r = trap_run(file);
    const bool ok = r.train.policy >= 0.9 && r.train.policy - r.train.uniform >= 0.30 && r.test.terminals > 0 &&
                    r.test.policy > r.test.uniform;
    pass = pass && ok;
    detail += std::string(name) + " train " + num(r.train.policy, 3) + " vs uniform " + num(r.train.uniform, 3) + " (" +
              std::to_string(r.train.terminals) + " terminals), test " + num(r.test.policy, 3) + " vs " +
              num(r.test.uniform, 3) + " (" + std::to_string(r.test.terminals) + "); ";
  }
  return {pass, detail};
}

Outcome criterion4() {
  const auto& r = trap_run("reinforce.toml");
  return {r.final_backward_reward >= 0.9,
          "mean R_B over the last " + std::to_string(r.window) + " steps " + num(r.final_backward_reward) + " (>= 0.9)"};
}

Outcome criterion5() {
  auto cfg = env_config("tiny");
  cfg.out = g_out / "gradcheck";
  cfg.train.backward_mode = train::BackwardMode::Free;
  cfg.eval.gradcheck_seeds = 20;
  command("gradcheck", cfg);
  double worst = 0.0;
  std::string where;
  long checked = 0, kinks = 0;
  const auto rows = csv_rows(cfg.out / "gradcheck.csv");
  for (const auto& row : rows) {
    const double e = std::stod(row.at(1));
    if (e >= worst) {
      worst = e;
      where = row.at(2);
    }
    checked += std::stol(row.at(3));
    kinks += std::stol(row.at(4));
  }
  return {rows.size() == 20 && worst <= 1e-4 && checked > 0,
          "max relative error " + num(worst, 3) + " at " + where + " over " + std::to_string(rows.size()) + " seeds, " +
              std::to_string(checked) + " coordinates, " + std::to_string(kinks) + " unresolved kinks"};
}

Outcome criterion6() {
  // Canonicalization under random atom permutations.
  Rng rng(606);
  int canon_fail = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto m = testing::random_molecule(rng, 12);
    const auto perm = testing::random_permutation(rng, m.size());
    if (chem::write_canonical_smiles(m.permuted(perm)) != chem::write_canonical_smiles(m)) ++canon_fail;
  }

  // Forward/backward round trips of every bundled template on compatible building blocks.
  int pairs = 0, trip_fail = 0;
  std::vector<fs::path> dirs = {testing::data_dir()};
  for (const auto& e : fs::directory_iterator(testing::data_dir() / "envs")) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  std::vector<tmpl::PatternGraph> patterns;
  for (const auto& dir : dirs) {
    const auto templates = tmpl::read_templates(dir / "templates.tsv");
    const auto bbs = chem::read_building_blocks(dir / "building_blocks.tsv");
    for (const auto& t : templates) {
      for (const auto& p : t.reactants) patterns.push_back(p);
      auto check = [&](std::vector<chem::MolGraph> rs) {
        if (tmpl::forward_products(t, rs).empty()) return;
        ++pairs;
        if (!tmpl::check_reversible(t, rs)) ++trip_fail;
      };
      for (const auto& a : bbs) {
        if (!tmpl::has_match(t.reactants[0], a.mol)) continue;
        if (t.arity() == 1) {
          check({a.mol});
          continue;
        }
        for (const auto& b : bbs)
          if (tmpl::has_match(t.reactants[1], b.mol)) check({a.mol, b.mol});
      }
    }
  }

  // Matcher against brute-force injective maps.
  for (const char* s : {"C", "[OH]", "C=O", "[C;X4]", "CC", "C~N", "[N;H2]", "cc", "[c;H1]c", "C[!R]", "C1CC1", "[O-]"})
    patterns.push_back(tmpl::parse_pattern(s));
  int compared = 0, match_fail = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const auto m = testing::random_molecule(rng, 12);
    for (const auto& p : patterns) {
      ++compared;
      if (tmpl::match_pattern(p, m) != testing::brute_force_matches(p, m)) ++match_fail;
    }
  }
  return {canon_fail == 0 && trip_fail == 0 && match_fail == 0 && pairs > 0,
          "canonicalization 1000 trials, " + std::to_string(canon_fail) + " failures; round trips " +
              std::to_string(pairs) + " pairs, " + std::to_string(trip_fail) + " failures; matcher " +
              std::to_string(compared) + " comparisons, " + std::to_string(match_fail) + " discrepancies"};
}

Outcome criterion7() {
  const auto all_bbs = chem::read_building_blocks(testing::data_dir() / "building_blocks.tsv");
  const auto all_templates = tmpl::read_templates(testing::data_dir() / "templates.tsv");
  Rng rng(707);
  auto subset = [&](std::size_t n, std::size_t k) {
    auto perm = testing::random_permutation(rng, n);
    perm.resize(std::min(n, k));
    std::sort(perm.begin(), perm.end());
    return perm;
  };
  int actions = 0, violations = 0, envs = 0, degenerate = 0;
  std::string first_violation;
  while (actions < 10000) {
    std::vector<chem::BuildingBlockRecord> bbs;
    for (int i : subset(all_bbs.size(), 3 + rng.uniform_index(10))) bbs.push_back(all_bbs[static_cast<std::size_t>(i)]);
    std::vector<tmpl::ReactionTemplate> templates;
    for (int i : subset(all_templates.size(), 1 + rng.uniform_index(6)))
      templates.push_back(all_templates[static_cast<std::size_t>(i)]);
    mdp::EnvOptions o;
    o.max_len = 1 + static_cast<int>(rng.uniform_index(3));
    o.allow_bb_terminals = rng.uniform() < 0.7;
    o.require_reversible = rng.uniform() < 0.3;
    const mdp::Env env(bbs, templates, o);
    // Without BB terminals and without any applicable template the env has no routes at all.
    bool has_routes = o.allow_bb_terminals;
    for (int b = 0; b < env.num_bbs() && !has_routes; ++b) {
      const auto& bb = env.building_blocks()[static_cast<std::size_t>(b)];
      try {
        const auto top = env.forward_mask(mdp::State{mdp::StateKind::Mol, bb.smiles, 0}).top();
        has_routes = std::any_of(top.begin() + 1, top.end(), [](auto x) { return x != 0; });
      } catch (const ContractViolation&) {
      }
    }
    if (!has_routes) {
      ++degenerate;
      bool rejected = false;
      try {
        env.forward_mask(mdp::State{});
      } catch (const ContractViolation&) {
        rejected = true;
      }
      if (!rejected) {
        ++violations;
        if (first_violation.empty()) first_violation = ": routeless env exposes a start action";
      }
      continue;
    }
    ++envs;
    for (int rollout = 0; rollout < 20 && actions < 10000; ++rollout) {
      mdp::State s;
      while (s.kind != mdp::StateKind::Terminal) {
        mdp::Action a;
        try {
          const auto mask = env.forward_mask(s);
          if (s.kind == mdp::StateKind::Empty) {
            std::vector<int> legal;
            for (int b = 0; b < env.num_bbs(); ++b)
              if (mask.add_first[static_cast<std::size_t>(b)]) legal.push_back(b);
            a = {mdp::ActionType::AddFirstReactant, -1, legal[rng.uniform_index(legal.size())]};
          } else {
            std::vector<int> legal;
            const auto top = mask.top();
            for (int k = 0; k < static_cast<int>(top.size()); ++k)
              if (top[static_cast<std::size_t>(k)]) legal.push_back(k);
            const int k = legal[rng.uniform_index(legal.size())];
            if (k == 0) {
              a = {mdp::ActionType::Stop};
            } else if (k <= env.num_uni()) {
              a = {mdp::ActionType::ReactUni, env.uni_templates()[static_cast<std::size_t>(k - 1)]};
            } else {
              const int t = env.bi_templates()[static_cast<std::size_t>(k - 1 - env.num_uni())];
              const auto add = env.addreactant_mask(s, t);
              std::vector<int> blocks;
              for (int b = 0; b < env.num_bbs(); ++b)
                if (add[static_cast<std::size_t>(b)]) blocks.push_back(b);
              a = {mdp::ActionType::ReactBi, t, blocks[rng.uniform_index(blocks.size())]};
            }
          }
          s = env.step_forward(s, a);
          if (s.steps > o.max_len) throw ContractViolation("length bound exceeded");
        } catch (const Error& e) {
          ++violations;
          if (first_violation.empty()) first_violation = std::string(": ") + e.what();
          ++actions;
          break;
        }
        ++actions;
      }
    }
  }
  return {violations == 0, std::to_string(actions) + " masked actions across " + std::to_string(envs) +
                               " random envs (" + std::to_string(degenerate) + " routeless envs redrawn), " + std::to_string(violations) + " violations" + first_violation};
}

Outcome criterion8() {
  const auto& r = tiny_run(policy::BbMode::Fingerprint);
  return {r.top10 >= 0.9, "top-10 mean rediscovery reward " + num(r.top10) + " (>= 0.9) over 1000 samples"};
}

Outcome criterion9() {
  const auto& fp = tiny_run(policy::BbMode::Fingerprint);
  const auto& emb = tiny_run(policy::BbMode::Embedding);
  return {fp.bb_hash_constant && !emb.bb_hash_constant && fp.tv <= 0.05 && emb.tv <= 0.05,
          std::string("fingerprint bb hash ") + (fp.bb_hash_constant ? "constant" : "changed") + ", TV " + num(fp.tv) +
              "; embedding bb hash " + (emb.bb_hash_constant ? "constant" : "changed") + ", TV " + num(emb.tv)};
}

Outcome criterion10() {
  std::vector<std::string> differing;
  int files = 0;
  auto base = env_config("tiny");
  base.train.steps = 200;
  base.train.checkpoint_every = 50;
  base.train.backward_mode = train::BackwardMode::Reinforce;
  base.eval.samples = 200;
  for (const char* run : {"a", "b"}) {
    auto c = base;
    c.out = g_out / "determinism" / run;
    fs::remove_all(c.out);
    command("train", c);
    const auto ckpt = c.out / "checkpoints" / "final.ckpt";
    command("sample", c, ckpt);
    command("eval", c, ckpt);
  }
  const auto a = g_out / "determinism" / "a";
  const auto b = g_out / "determinism" / "b";
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    ++files;
    const auto rel = fs::relative(e.path(), a);
    if (!fs::exists(b / rel) || slurp(e.path()) != slurp(b / rel)) differing.push_back(rel.string());
  }
  const bool has_ckpts = fs::exists(a / "checkpoints" / "step_000050.ckpt") && fs::exists(a / "metrics.csv");
  std::string detail = std::to_string(files) + " artifacts compared (metrics, 5 checkpoints, routes, eval)";
  for (const auto& d : differing) detail += "; differs: " + d;
  return {differing.empty() && has_ckpts, detail};
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_level(spdlog::level::warn);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"distribution correctness", criterion1}, {"logZ counting", criterion2},
      {"backward-policy separation", criterion3}, {"REINFORCE backward reward", criterion4},
      {"gradient correctness", criterion5},       {"chemistry kernel properties", criterion6},
      {"mask soundness fuzz", criterion7},        {"rediscovery", criterion8},
      {"fingerprint-kernel mode", criterion9},    {"determinism", criterion10},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--out" && i + 1 < argc) {
      g_out = argv[++i];
    } else {
      selected.insert(std::stoi(arg));
    }
  }
  fs::create_directories(g_out);
  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int number = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(number)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    all = all && o.pass;
    std::cout << "criterion " << number << " (" << criteria[i].first << "): " << (o.pass ? "PASS" : "FAIL") << " | "
              << o.detail << " [" << num(secs, 3) << " s]" << std::endl;
  }
  return all ? 0 : 1;
}
