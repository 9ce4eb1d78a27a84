#include <fstream>
#include <set>
#include <sstream>

#include "toml.hpp"

#include "synflow/config.hpp"

namespace synflow::config {

namespace {

namespace fs = std::filesystem;

class Table {
 public:
  Table(const toml::table* table, std::string prefix) : table_(table), prefix_(std::move(prefix)) {}

  void allow(std::initializer_list<std::string_view> keys) const {
    if (!table_) return;
    const std::set<std::string_view> allowed(keys);
    for (const auto& [key, node] : *table_)
      if (!allowed.count(key.str())) throw ConfigError("unknown key '" + name(key.str()) + "'");
  }

  std::string name(std::string_view key) const { return prefix_.empty() ? std::string(key) : prefix_ + "." + std::string(key); }

  const toml::node* node(std::string_view key) const { return table_ ? table_->get(key) : nullptr; }

  template <typename T>
  void get(std::string_view key, T& out) const {
    const toml::node* n = node(key);
    if (!n) return;
    if constexpr (std::is_same_v<T, bool>) {
      if (!n->is_boolean()) mismatch(key, "a boolean");
      out = n->as_boolean()->get();
    } else if constexpr (std::is_integral_v<T>) {
      if (!n->is_integer()) mismatch(key, "an integer");
      const auto v = n->as_integer()->get();
      if (v < static_cast<std::int64_t>(std::numeric_limits<T>::min()) ||
          (v > 0 && static_cast<std::uint64_t>(v) > static_cast<std::uint64_t>(std::numeric_limits<T>::max())))
        throw ConfigError("'" + name(key) + "' is out of range");
      out = static_cast<T>(v);
    } else if constexpr (std::is_floating_point_v<T>) {
      if (n->is_integer())
        out = static_cast<T>(n->as_integer()->get());
      else if (n->is_floating_point())
        out = static_cast<T>(n->as_floating_point()->get());
      else
        mismatch(key, "a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!n->is_string()) mismatch(key, "a string");
      out = n->as_string()->get();
    } else {
      static_assert(sizeof(T) == 0, "unsupported config type");
    }
  }

  template <typename T>
  void get(std::string_view key, std::optional<T>& out) const {
    if (!node(key)) return;
    T v{};
    get(key, v);
    out = v;
  }

  void path(std::string_view key, fs::path& out, const fs::path& base) const {
    if (!node(key)) return;
    std::string s;
    get(key, s);
    out = fs::path(s).is_absolute() ? fs::path(s) : base / s;
  }

  void path(std::string_view key, std::optional<fs::path>& out, const fs::path& base) const {
    if (!node(key)) return;
    fs::path p;
    path(key, p, base);
    out = p;
  }

  Table sub(std::string_view key) const {
    const toml::node* n = node(key);
    if (!n) return Table(nullptr, name(key));
    if (!n->is_table()) mismatch(key, "a table");
    return Table(n->as_table(), name(key));
  }

 private:
  [[noreturn]] void mismatch(std::string_view key, const char* what) const {
    throw ConfigError("'" + name(key) + "' must be " + what);
  }

  const toml::table* table_;
  std::string prefix_;
};

RewardConfig parse_reward(const Table& t, const fs::path& base) {
  t.allow({"kind", "target", "table", "missing_default", "scale_min", "scale_max", "ref_heavy_atoms", "allowance",
           "factors"});
  RewardConfig r;
  t.get("kind", r.kind);
  t.get("target", r.target);
  t.path("table", r.table, base);
  t.get("missing_default", r.missing_default);
  t.get("scale_min", r.scale_min);
  t.get("scale_max", r.scale_max);
  t.get("ref_heavy_atoms", r.ref_heavy_atoms);
  t.get("allowance", r.allowance);
  if (const toml::node* f = t.node("factors")) {
    const toml::array* arr = f->as_array();
    if (!arr) throw ConfigError("'" + t.name("factors") + "' must be an array of tables");
    for (std::size_t i = 0; i < arr->size(); ++i) {
      const toml::table* ft = arr->get(i)->as_table();
      if (!ft) throw ConfigError("'" + t.name("factors") + "' must be an array of tables");
      r.factors.push_back(parse_reward(Table(ft, t.name("factors") + "[" + std::to_string(i) + "]"), base));
    }
  }
  static const std::set<std::string> kinds = {"constant", "rediscovery", "scaled_affinity", "external", "product"};
  if (!kinds.count(r.kind)) throw ConfigError("'" + t.name("kind") + "' has unknown value '" + r.kind + "'");
  if (r.kind == "rediscovery" && r.target.empty()) throw ConfigError("'" + t.name("target") + "' is required");
  if ((r.kind == "scaled_affinity" || r.kind == "external") && r.table.empty())
    throw ConfigError("'" + t.name("table") + "' is required");
  if (r.kind == "product" && r.factors.empty()) throw ConfigError("'" + t.name("factors") + "' must not be empty");
  return r;
}

void require_file(const fs::path& p, const std::string& key) {
  if (!fs::is_regular_file(p)) throw ConfigError("'" + key + "' refers to a missing file: " + p.string());
}

void check_reward_files(const RewardConfig& r, const std::string& key) {
  if (!r.table.empty()) require_file(r.table, key + ".table");
  for (const auto& f : r.factors) check_reward_files(f, key + ".factors");
}

}  // namespace

RunConfig parse_config(std::string_view text, const fs::path& base_dir, bool check_files) {
  toml::table root;
  try {
    root = toml::parse(text);
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << "config parse error: " << e.description() << " (line " << e.source().begin.line << ")";
    throw ConfigError(os.str());
  }
  RunConfig c;
  const Table top(&root, "");
  top.allow({"seed", "out", "threads", "env", "train", "policy", "reward", "eval"});
  std::int64_t seed = 0;
  top.get("seed", seed);
  if (seed < 0) throw ConfigError("'seed' must be nonnegative");
  c.seed = static_cast<std::uint64_t>(seed);
  top.path("out", c.out, base_dir);
  top.get("threads", c.threads);
  if (c.threads < 1) throw ConfigError("'threads' must be >= 1");

  const Table env = top.sub("env");
  env.allow({"building_blocks", "templates", "max_len", "allow_bb_terminals", "require_reversible", "fingerprint_bits",
             "fingerprint_radius"});
  env.path("building_blocks", c.env.building_blocks, base_dir);
  env.path("templates", c.env.templates, base_dir);
  env.get("max_len", c.env.options.max_len);
  env.get("allow_bb_terminals", c.env.options.allow_bb_terminals);
  env.get("require_reversible", c.env.options.require_reversible);
  env.get("fingerprint_bits", c.env.options.fingerprint_bits);
  env.get("fingerprint_radius", c.env.options.fingerprint_radius);
  if (c.env.building_blocks.empty()) throw ConfigError("'env.building_blocks' is required");
  if (c.env.templates.empty()) throw ConfigError("'env.templates' is required");
  if (c.env.options.max_len < 1) throw ConfigError("'env.max_len' must be >= 1");
  if (c.env.options.fingerprint_bits < 1) throw ConfigError("'env.fingerprint_bits' must be >= 1");
  if (c.env.options.fingerprint_radius < 0) throw ConfigError("'env.fingerprint_radius' must be >= 0");

  const Table tr = top.sub("train");
  tr.allow({"batch_size", "steps", "lr_pf", "lr_pb", "lr_z", "beta", "backward_mode", "alpha", "replay_capacity",
            "reward_floor", "reinforce_baseline", "backward_rollouts", "train_pb_in_tb", "logz_init", "eval_every",
            "checkpoint_every"});
  auto& t = c.train;
  tr.get("batch_size", t.batch_size);
  tr.get("steps", t.steps);
  tr.get("lr_pf", t.lr_pf);
  tr.get("lr_pb", t.lr_pb);
  tr.get("lr_z", t.lr_z);
  tr.get("beta", t.beta);
  std::string mode = train::backward_mode_name(t.backward_mode);
  tr.get("backward_mode", mode);
  try {
    t.backward_mode = train::parse_backward_mode(mode);
  } catch (const Error& e) {
    throw ConfigError("'train.backward_mode': " + std::string(e.what()));
  }
  tr.get("alpha", t.alpha);
  tr.get("replay_capacity", t.replay_capacity);
  tr.get("reward_floor", t.reward_floor);
  tr.get("reinforce_baseline", t.reinforce_baseline);
  tr.get("backward_rollouts", t.backward_rollouts);
  tr.get("train_pb_in_tb", t.train_pb_in_tb);
  tr.get("logz_init", t.logz_init);
  tr.get("eval_every", t.eval_every);
  tr.get("checkpoint_every", t.checkpoint_every);
  try {
    t.validate();
  } catch (const ContractViolation& e) {
    throw ConfigError(e.what());
  }
  // Reversibility masking follows REINFORCE unless set explicitly.
  if (!env.node("require_reversible")) c.env.options.require_reversible = t.backward_mode == train::BackwardMode::Reinforce;

  const Table pol = top.sub("policy");
  pol.allow({"hidden", "bb_mode", "cosine", "cosine_scale", "zero_init", "init_gain"});
  pol.get("hidden", c.policy.hidden);
  std::string bb_mode = "fingerprint";
  pol.get("bb_mode", bb_mode);
  if (bb_mode == "fingerprint")
    c.policy.bb_mode = policy::BbMode::Fingerprint;
  else if (bb_mode == "embedding")
    c.policy.bb_mode = policy::BbMode::Embedding;
  else
    throw ConfigError("'policy.bb_mode' must be \"fingerprint\" or \"embedding\"");
  pol.get("cosine", c.policy.cosine);
  pol.get("cosine_scale", c.policy.cosine_scale);
  pol.get("zero_init", c.policy.zero_init);
  pol.get("init_gain", c.policy.init_gain);
  if (c.policy.hidden < 1) throw ConfigError("'policy.hidden' must be >= 1");

  c.reward = parse_reward(top.sub("reward"), base_dir);

  const Table ev = top.sub("eval");
  ev.allow({"samples", "temperature", "reward_threshold", "top_k", "reference", "rollouts_per_mol", "test_samples",
            "train_terminals", "gradcheck_seeds", "gradcheck_batch", "gradcheck_h", "gradcheck_coords"});
  auto& e = c.eval;
  ev.get("samples", e.samples);
  ev.get("temperature", e.temperature);
  ev.get("reward_threshold", e.reward_threshold);
  ev.get("top_k", e.top_k);
  ev.path("reference", e.reference, base_dir);
  ev.get("rollouts_per_mol", e.rollouts_per_mol);
  ev.get("test_samples", e.test_samples);
  ev.path("train_terminals", e.train_terminals, base_dir);
  ev.get("gradcheck_seeds", e.gradcheck_seeds);
  ev.get("gradcheck_batch", e.gradcheck_batch);
  ev.get("gradcheck_h", e.gradcheck_h);
  ev.get("gradcheck_coords", e.gradcheck_coords);
  if (e.samples < 1 || e.top_k < 1 || e.rollouts_per_mol < 1 || e.test_samples < 0 || e.gradcheck_seeds < 1 ||
      e.gradcheck_batch < 1)
    throw ConfigError("eval counts must be positive");
  if (e.temperature < 0.0) throw ConfigError("'eval.temperature' must be >= 0");

  if (check_files) {
    require_file(c.env.building_blocks, "env.building_blocks");
    require_file(c.env.templates, "env.templates");
    check_reward_files(c.reward, "reward");
    if (e.reference) require_file(*e.reference, "eval.reference");
  }
  return c;
}

RunConfig load_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return parse_config(os.str(), path.parent_path().empty() ? fs::path(".") : path.parent_path());
}

rewards::RewardFn build_reward(const RewardConfig& rc) {
  if (rc.kind == "constant") return rewards::RewardFn::constant();
  if (rc.kind == "rediscovery") return rewards::RewardFn::rediscovery(rc.target);
  if (rc.kind == "scaled_affinity" || rc.kind == "external") {
    auto table = std::make_shared<const rewards::ScoreTable>(rewards::ScoreTable::load(rc.table, rc.missing_default));
    if (rc.kind == "external") return rewards::RewardFn::external(std::move(table));
    return rewards::RewardFn::scaled_affinity(std::move(table), rc.scale_min, rc.scale_max, rc.ref_heavy_atoms,
                                              rc.allowance);
  }
  if (rc.kind == "product") {
    std::vector<rewards::RewardFn> factors;
    for (const auto& f : rc.factors) factors.push_back(build_reward(f));
    return rewards::RewardFn::product(std::move(factors));
  }
  throw ConfigError("unknown reward kind '" + rc.kind + "'");
}

mdp::Env load_env(const EnvConfig& config) {
  return mdp::Env::load(config.building_blocks, config.templates, config.options);
}

}  // namespace synflow::config
