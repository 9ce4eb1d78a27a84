// The synthesis MDP: states, hierarchical forward/backward actions, masks
// and transitions over a fixed set of building blocks and templates.
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "synflow/chemgraph.hpp"
#include "synflow/templates.hpp"
#include "synflow/util.hpp"

namespace synflow::mdp {

enum class StateKind : std::uint8_t { Empty, Mol, Terminal };

struct State {
  StateKind kind = StateKind::Empty;
  /// Canonical SMILES; empty for the Empty state.
  std::string smiles;
  /// Reactions applied so far.
  int steps = 0;

  bool operator==(const State&) const = default;
  auto operator<=>(const State&) const = default;
};

enum class ActionType : std::uint8_t {
  Stop,
  AddFirstReactant,
  ReactUni,
  /// A ReactBi pick together with its AddReactant pick: one composite
  /// transition carrying both template_index and bb_index.
  ReactBi,
  BckReactUni,
  BckReactBi,
  BckRemoveFirstReactant,
};

const char* action_name(ActionType t);

enum class Tie : std::uint8_t { None, First, Second };

struct Action {
  ActionType type = ActionType::Stop;
  /// Index into Env::templates().
  int template_index = -1;
  int bb_index = -1;
  /// Backward reaction actions: which reactant set (-1 = sample uniformly).
  int set_index = -1;
  /// Backward bimolecular actions with two valid orientations: which member
  /// becomes the previous state (None = sample uniformly).
  Tie tie = Tie::None;

  bool operator==(const Action&) const = default;
};

struct EnvOptions {
  int max_len = 3;
  bool allow_bb_terminals = true;
  bool require_reversible = false;
  /// Fingerprint length used for policy features and the BB kernel.
  int fingerprint_bits = 2048;
  int fingerprint_radius = 2;
};

struct BuildingBlock {
  std::string smiles;
  std::string id;
  chem::MolGraph mol;
  chem::Fingerprint fp;
};

/// A bimolecular reactant set {a, b} (a <= b by SMILES) that the template maps
/// onto a product, with the orientations that reproduce the product forward.
struct BiParents {
  std::string a;
  std::string b;
  /// a is the previous state and b the added building block.
  bool a_prev = false;
  /// b is the previous state and a the added building block.
  bool b_prev = false;
};

/// Cached per-molecule data. Forward and backward parts are filled lazily.
struct MolInfo {
  std::string smiles;
  chem::MolGraph mol;
  chem::Fingerprint fp;
  int bb_index = -1;

  /// Product of each unimolecular template (by position in uni_templates()).
  std::vector<std::optional<std::string>> uni_product;
  /// Product of each bimolecular template with each building block.
  std::vector<std::vector<std::optional<std::string>>> bi_product;

  /// Previous states that reach this molecule through each uni template.
  std::vector<std::vector<std::string>> uni_parents;
  std::vector<std::vector<BiParents>> bi_parents;

 private:
  friend class Env;
  std::once_flag forward_once;
  std::once_flag backward_once;
};

struct ForwardMask {
  bool stop = false;
  /// Over building blocks; only meaningful in the Empty state.
  std::vector<std::uint8_t> add_first;
  std::vector<std::uint8_t> uni;
  std::vector<std::uint8_t> bi;

  /// [stop, uni..., bi...].
  std::vector<std::uint8_t> top() const;
  bool any_top() const;
};

struct BackwardMask {
  std::vector<std::uint8_t> uni;
  std::vector<std::uint8_t> bi;
  bool remove = false;

  /// [uni..., bi..., remove].
  std::vector<std::uint8_t> flat() const;
  int count() const;
};

class Env {
 public:
  Env(std::vector<chem::BuildingBlockRecord> building_blocks, std::vector<tmpl::ReactionTemplate> templates,
      EnvOptions options);
  static Env load(const std::filesystem::path& building_blocks, const std::filesystem::path& templates,
                  EnvOptions options);

  Env(const Env&) = delete;
  Env& operator=(const Env&) = delete;

  const EnvOptions& options() const { return options_; }
  const std::vector<BuildingBlock>& building_blocks() const { return bbs_; }
  const std::vector<tmpl::ReactionTemplate>& templates() const { return templates_; }
  int num_bbs() const { return static_cast<int>(bbs_.size()); }
  /// Global template indices of the uni- and bimolecular templates.
  const std::vector<int>& uni_templates() const { return uni_; }
  const std::vector<int>& bi_templates() const { return bi_; }
  int num_uni() const { return static_cast<int>(uni_.size()); }
  int num_bi() const { return static_cast<int>(bi_.size()); }
  /// Position of a global template index within uni_templates()/bi_templates().
  int template_position(int template_index) const { return position_[static_cast<std::size_t>(template_index)]; }
  int max_len() const { return options_.max_len; }
  std::optional<int> bb_index(const std::string& smiles) const;
  /// Stable hash of building blocks, templates and options.
  std::uint64_t hash() const;

  /// Canonicalizes and caches `smiles`. Thread-safe; references stay valid.
  const MolInfo& info(const std::string& smiles) const;
  const MolInfo& forward_info(const std::string& smiles) const;
  const MolInfo& backward_info(const std::string& smiles) const;

  ForwardMask forward_mask(const State& state) const;
  std::vector<std::uint8_t> addreactant_mask(const State& state, int template_index) const;
  State step_forward(const State& state, const Action& action) const;

  /// `from_terminal` marks the first reverse step out of a terminal state;
  /// without BB terminals a bare building block cannot be terminal, so
  /// BckRemoveFirstReactant is masked there.
  BackwardMask backward_mask(const State& state, bool from_terminal = false) const;

  struct BackwardStep {
    State previous;
    /// Log-probability of the reactant-set and orientation choices made
    /// outside the policy (ln 1/k for k sets, ln 1/2 for a tie).
    double extra_logprob = 0.0;
    /// The resolved action (set_index and tie filled in).
    Action action;
  };
  BackwardStep step_backward(const State& state, const Action& action, Rng& rng, bool from_terminal = false) const;

  /// Backward action that undoes the forward transition prev --action--> next,
  /// with its extra log-probability. Throws Error if the transition cannot be
  /// recovered by any backward action.
  BackwardStep reverse_of(const State& prev, const Action& action, const State& next) const;

  /// Flat index of a backward action in [uni..., bi..., remove].
  int backward_flat_index(const Action& action) const;
  /// Inverse of backward_flat_index (set and tie unset).
  Action backward_action_at(int flat) const;
  int backward_width() const { return num_uni() + num_bi() + 1; }
  int top_width() const { return 1 + num_uni() + num_bi(); }

  /// Flat index in [stop, uni..., bi...] of a forward top-level action.
  int top_index(const Action& action) const;

 private:
  void compute_forward(MolInfo& info) const;
  void compute_backward(MolInfo& info) const;
  std::optional<std::string> uni_product(const chem::MolGraph& mol, const std::string& smiles, int template_index) const;
  /// `as_first`/`as_second`: the molecule matches reactant pattern 0/1.
  std::optional<std::string> bi_product(const chem::MolGraph& mol, const std::string& smiles, int template_index,
                                        int bb, bool as_first, bool as_second) const;
  bool reversible(const tmpl::ReactionTemplate& t, const tmpl::Molecule& product,
                  std::vector<std::string> reactants) const;

  EnvOptions options_;
  std::vector<BuildingBlock> bbs_;
  std::vector<tmpl::ReactionTemplate> templates_;
  std::vector<int> uni_;
  std::vector<int> bi_;
  std::vector<int> position_;
  std::unordered_map<std::string, int> bb_lookup_;
  /// bb_matches_[t][side][bb]: building block bb matches reactant pattern side of template t.
  std::vector<std::vector<std::vector<std::uint8_t>>> bb_matches_;

  mutable std::once_flag first_once_;
  mutable std::vector<std::uint8_t> first_mask_;
  mutable std::mutex cache_mutex_;
  mutable std::unordered_map<std::string, std::unique_ptr<MolInfo>> cache_;
  mutable std::unordered_map<std::string, std::string> alias_;
};

struct Trajectory {
  std::vector<State> states;
  std::vector<Action> actions;
  /// Per-action log-probabilities recorded while sampling.
  std::vector<double> fwd_logprobs;
  std::vector<double> bck_logprobs;
  std::optional<double> reward;

  bool complete() const { return !states.empty() && states.back().kind == StateKind::Terminal; }
  const State& last() const { return states.back(); }
  int reactions() const;
};

/// One reverse transition as seen by the backward policy.
struct BackStep {
  std::string smiles;
  bool from_terminal = false;
  /// Index into [uni..., bi..., remove].
  int flat = 0;
  double extra_logprob = 0.0;
};

/// Reverse transitions of a complete forward trajectory, from the terminal back to s0.
std::vector<BackStep> backward_steps(const Env& env, const Trajectory& traj);

/// A backward rollout from a terminal molecule.
struct BackwardRollout {
  std::string terminal;
  std::vector<BackStep> steps;
  /// States visited, from the terminal molecule towards s0.
  std::vector<State> states;
  /// Resolved backward actions (set and tie filled in), parallel to steps.
  std::vector<Action> actions;
  bool reached_s0 = false;

  /// Forward-ordered trajectory (only when reached_s0).
  Trajectory to_forward(const Env& env) const;
};

/// Route export: one JSON object per line,
/// {"reward", "terminal_smiles", "steps": [{"bb_smiles"?, "template_id"?, "product_smiles"}]}.
struct RouteStep {
  std::optional<std::string> bb_smiles;
  std::optional<std::string> template_id;
  std::string product_smiles;
  bool operator==(const RouteStep&) const = default;
};
struct Route {
  double reward = 0.0;
  std::string terminal_smiles;
  std::vector<RouteStep> steps;
  bool operator==(const Route&) const = default;
};

Route make_route(const Env& env, const Trajectory& traj);
std::string route_to_json(const Route& route);
Route route_from_json(const std::string& line);
void export_routes(const std::vector<Route>& routes, const std::filesystem::path& path);
std::vector<Route> read_routes(const std::filesystem::path& path);

}  // namespace synflow::mdp
