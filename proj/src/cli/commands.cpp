#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include <spdlog/spdlog.h>

#include "synflow/commands.hpp"
#include "synflow/eval.hpp"

namespace synflow::commands {

namespace fs = std::filesystem;
using config::RunConfig;

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::ofstream open_out(const fs::path& path) {
  fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write " + path.string());
  return f;
}

void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
  auto f = open_out(path);
  for (const auto& l : lines) f << l << '\n';
}

const fs::path& need_checkpoint(const CommandOptions& o, const std::string& verb) {
  if (!o.checkpoint) throw Error(verb + " needs --checkpoint");
  return *o.checkpoint;
}

std::vector<mdp::Trajectory> sample_scored(const policy::ForwardPolicy& pf, const rewards::RewardFn& reward,
                                           int n, double temperature, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {10}));
  auto trajs = policy::sample_forward(pf, nullptr, n, rng, temperature);
  std::map<std::string, double> cache;
  for (auto& t : trajs) {
    const auto& smiles = t.last().smiles;
    auto it = cache.find(smiles);
    if (it == cache.end()) {
      const auto& info = pf.env().info(smiles);
      it = cache.emplace(smiles, reward(info.mol, info.smiles)).first;
    }
    t.reward = it->second;
  }
  return trajs;
}

std::vector<std::string> distinct_terminals(const std::vector<mdp::Trajectory>& trajs) {
  std::set<std::string> s;
  for (const auto& t : trajs) s.insert(t.last().smiles);
  return {s.begin(), s.end()};
}

int cmd_train(const RunConfig& c, std::ostream& out) {
  const auto env = config::load_env(c.env);
  train::Trainer trainer(env, config::build_reward(c.reward), c.train, c.policy, c.seed);
  const auto metrics = trainer.run(c.out);
  write_lines(c.out / "seen_terminals.txt", {trainer.seen_terminals().begin(), trainer.seen_terminals().end()});
  out << "trained " << c.train.steps << " steps; logZ " << fmt_double(trainer.log_z()) << "; artifacts in "
      << c.out.string() << "\n";
  return 0;
}

int cmd_sample(const RunConfig& c, const CommandOptions& o, std::ostream& out) {
  const auto env = config::load_env(c.env);
  const auto model = train::load_model(env, need_checkpoint(o, "sample"));
  const auto trajs = sample_scored(*model->pf, config::build_reward(c.reward), c.eval.samples, c.eval.temperature, c.seed);
  std::vector<mdp::Route> routes;
  for (const auto& t : trajs) routes.push_back(mdp::make_route(env, t));
  fs::create_directories(c.out);
  mdp::export_routes(routes, c.out / "routes.jsonl");
  out << "wrote " << routes.size() << " routes to " << (c.out / "routes.jsonl").string() << "\n";
  return 0;
}

int cmd_eval(const RunConfig& c, const CommandOptions& o, std::ostream& out) {
  const auto env = config::load_env(c.env);
  const auto model = train::load_model(env, need_checkpoint(o, "eval"));
  const auto trajs = sample_scored(*model->pf, config::build_reward(c.reward), c.eval.samples, c.eval.temperature, c.seed);
  std::vector<eval::Sample> samples;
  std::vector<double> rewards;
  double mean = 0.0;
  for (const auto& t : trajs) {
    samples.push_back({t.last().smiles, *t.reward});
    rewards.push_back(*t.reward);
    mean += *t.reward;
  }
  mean /= static_cast<double>(samples.size());
  std::vector<std::pair<std::string, std::string>> rows = {
      {"samples", std::to_string(samples.size())},
      {"unique", std::to_string(distinct_terminals(trajs).size())},
      {"mean_reward", fmt_double(mean)},
      {"top_k_mean_reward", fmt_double(eval::top_k_mean(rewards, static_cast<std::size_t>(c.eval.top_k)))},
      {"diversity", samples.size() >= 2 ? fmt_double(eval::diversity(samples)) : "nan"},
      {"modes_count", std::to_string(eval::count_modes(samples, c.eval.reward_threshold))},
  };
  if (c.eval.reference) {
    std::vector<chem::Fingerprint> ref, fps;
    for (const auto& s : read_smiles_list(*c.eval.reference)) ref.push_back(chem::morgan_fingerprint(chem::parse_smiles(s)));
    for (const auto& s : samples) fps.push_back(chem::morgan_fingerprint(env.info(s.smiles).mol));
    const auto sims = eval::max_similarity_to_reference(fps, ref);
    double total = 0.0;
    for (double v : sims) total += v;
    rows.emplace_back("mean_max_similarity_to_reference", fmt_double(total / static_cast<double>(sims.size())));
  }
  auto f = open_out(c.out / "eval.csv");
  f << "metric,value\n";
  for (const auto& [k, v] : rows) {
    f << k << ',' << v << '\n';
    out << k << " = " << v << "\n";
  }
  return 0;
}

int cmd_enumerate(const RunConfig& c, std::ostream& out) {
  const auto env = config::load_env(c.env);
  const auto stats = eval::enumerate_space(env);
  write_lines(c.out / "terminals.txt", stats.terminals);
  write_lines(c.out / "count.txt", {std::to_string(stats.terminals.size())});
  out << stats.terminals.size() << " terminals, " << stats.states << " states, " << stats.transitions
      << " transitions\n";
  return 0;
}

int cmd_routes(const RunConfig& c, const CommandOptions& o, std::ostream& out) {
  const auto env = config::load_env(c.env);
  const auto model = train::load_model(env, need_checkpoint(o, "routes"));
  const auto train_set = distinct_terminals(sample_scored(*model->pf, rewards::RewardFn::constant(), c.eval.samples, 1.0, c.seed));
  std::set<std::string> exclude(train_set.begin(), train_set.end());
  if (c.eval.train_terminals)
    for (const auto& s : read_smiles_list(*c.eval.train_terminals)) exclude.insert(env.info(s).smiles);
  // Test terminals come from a uniform random forward sampler.
  nn::ParamStore store;
  Rng init(0);
  policy::PolicyConfig uniform_cfg;
  uniform_cfg.zero_init = true;
  uniform_cfg.hidden = 1;
  const policy::ForwardPolicy random_pf(env, uniform_cfg, store, init);
  Rng rng(derive_seed(c.seed, {11}));
  std::set<std::string> test;
  for (const auto& t : policy::sample_forward(random_pf, nullptr, c.eval.test_samples, rng))
    if (!exclude.count(t.last().smiles)) test.insert(t.last().smiles);
  const std::vector<std::string> test_set(test.begin(), test.end());

  const auto uniform = policy::BackwardPolicy::uniform(env);
  const int budget = env.max_len() + 1;
  const auto seed = derive_seed(c.seed, {12});
  auto f = open_out(c.out / "routes.csv");
  f << "split,terminals,policy_solved_rate,uniform_solved_rate\n";
  for (const auto& [name, set] : {std::pair{"train", &train_set}, std::pair{"test", &test_set}}) {
    const double p = eval::solved_routes_rate(*model->pb, *set, c.eval.rollouts_per_mol, budget, seed);
    const double u = eval::solved_routes_rate(uniform, *set, c.eval.rollouts_per_mol, budget, seed);
    f << name << ',' << set->size() << ',' << fmt_double(p) << ',' << fmt_double(u) << '\n';
    out << name << ": " << set->size() << " terminals, solved " << fmt_double(p) << " (uniform " << fmt_double(u)
        << ")\n";
  }
  return 0;
}

int cmd_estimate_space(const RunConfig& c, const CommandOptions& o, std::ostream& out) {
  const auto env = config::load_env(c.env);
  double log_z = 0.0;
  if (o.checkpoint) {
    log_z = train::load_model(env, *o.checkpoint)->log_z;
  } else {
    if (c.reward.kind != "constant" || c.train.beta != 1.0)
      throw Error("estimate-space trains with a constant reward and beta = 1");
    train::Trainer trainer(env, rewards::RewardFn::constant(), c.train, c.policy, c.seed);
    trainer.run(c.out);
    log_z = trainer.log_z();
  }
  const auto n = eval::enumerate_space(env).terminals.size();
  const double rel = eval::logz_vs_count(log_z, n);
  auto f = open_out(c.out / "estimate_space.csv");
  f << "logZ,exp_logZ,exact_count,relative_error\n"
    << fmt_double(log_z) << ',' << fmt_double(std::exp(log_z)) << ',' << n << ',' << fmt_double(rel) << '\n';
  out << "exp(logZ) = " << fmt_double(std::exp(log_z)) << ", exact count = " << n << ", relative error = "
      << fmt_double(rel) << "\n";
  return 0;
}

int cmd_gradcheck(const RunConfig& c, std::ostream& out) {
  const auto env = config::load_env(c.env);
  const auto reward = config::build_reward(c.reward);
  auto f = open_out(c.out / "gradcheck.csv");
  f << "seed,max_rel_error,worst_param,coordinates,kinks\n";
  double worst = 0.0;
  for (int s = 0; s < c.eval.gradcheck_seeds; ++s) {
    const auto seed = derive_seed(c.seed, {20, static_cast<std::uint64_t>(s)});
    train::Trainer trainer(env, reward, c.train, c.policy, seed);
    Rng rng(derive_seed(seed, {1}));
    train::jitter_biases(trainer.store(), rng, 0.5);
    const auto batch = policy::sample_forward(trainer.forward_policy(), nullptr, c.eval.gradcheck_batch, rng);
    std::vector<double> rewards;
    for (const auto& t : batch) rewards.push_back(trainer.reward(t.last().smiles));
    const auto r = nn::grad_check(
        trainer.store(), [&](nn::Tape& tape) { return trainer.tb_loss_graph(tape, batch, rewards); },
        c.eval.gradcheck_h, rng, c.eval.gradcheck_coords);
    worst = std::max(worst, r.max_rel_error);
    f << s << ',' << fmt_double(r.max_rel_error) << ',' << r.worst_param << ',' << r.coordinates << ',' << r.kinks << '\n';
  }
  out << "max relative error " << fmt_double(worst) << " over " << c.eval.gradcheck_seeds << " seeds\n";
  return worst <= 1e-4 ? 0 : 1;
}

}  // namespace

const std::vector<std::string>& verbs() {
  static const std::vector<std::string> v = {"train", "sample", "eval", "enumerate", "routes", "estimate-space", "gradcheck"};
  return v;
}

std::vector<std::string> read_smiles_list(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto start = line.find_first_not_of(" \t");
    if (start == std::string::npos || line[start] == '#') continue;
    const auto end = line.find_first_of(" \t", start);
    out.push_back(chem::write_canonical_smiles(chem::parse_smiles(line.substr(start, end - start))));
  }
  return out;
}

int run_command(const std::string& verb, const RunConfig& c, const CommandOptions& o, std::ostream& out) {
  spdlog::info("{} with seed {}", verb, c.seed);
  if (verb == "train") return cmd_train(c, out);
  if (verb == "sample") return cmd_sample(c, o, out);
  if (verb == "eval") return cmd_eval(c, o, out);
  if (verb == "enumerate") return cmd_enumerate(c, out);
  if (verb == "routes") return cmd_routes(c, o, out);
  if (verb == "estimate-space") return cmd_estimate_space(c, o, out);
  if (verb == "gradcheck") return cmd_gradcheck(c, out);
  throw Error("unknown command '" + verb + "'");
}

}  // namespace synflow::commands
