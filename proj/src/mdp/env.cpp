#include <algorithm>
#include <cmath>

#include "synflow/mdp.hpp"

namespace synflow::mdp {

using tmpl::Molecule;

const char* action_name(ActionType t) {
  switch (t) {
    case ActionType::Stop: return "Stop";
    case ActionType::AddFirstReactant: return "AddFirstReactant";
    case ActionType::ReactUni: return "ReactUni";
    case ActionType::ReactBi: return "ReactBi";
    case ActionType::BckReactUni: return "BckReactUni";
    case ActionType::BckReactBi: return "BckReactBi";
    case ActionType::BckRemoveFirstReactant: return "BckRemoveFirstReactant";
  }
  return "?";
}

std::vector<std::uint8_t> ForwardMask::top() const {
  std::vector<std::uint8_t> out;
  out.reserve(1 + uni.size() + bi.size());
  out.push_back(stop);
  out.insert(out.end(), uni.begin(), uni.end());
  out.insert(out.end(), bi.begin(), bi.end());
  return out;
}

bool ForwardMask::any_top() const {
  return stop || std::any_of(uni.begin(), uni.end(), [](auto x) { return x != 0; }) ||
         std::any_of(bi.begin(), bi.end(), [](auto x) { return x != 0; });
}

std::vector<std::uint8_t> BackwardMask::flat() const {
  std::vector<std::uint8_t> out(uni);
  out.insert(out.end(), bi.begin(), bi.end());
  out.push_back(remove);
  return out;
}

int BackwardMask::count() const {
  int n = remove ? 1 : 0;
  for (auto x : uni) n += x != 0;
  for (auto x : bi) n += x != 0;
  return n;
}

int Trajectory::reactions() const {
  int n = 0;
  for (const auto& a : actions) n += a.type == ActionType::ReactUni || a.type == ActionType::ReactBi;
  return n;
}

Env::Env(std::vector<chem::BuildingBlockRecord> building_blocks, std::vector<tmpl::ReactionTemplate> templates,
         EnvOptions options)
    : options_(options), templates_(std::move(templates)) {
  if (options_.max_len < 1) throw ContractViolation("max_len must be positive");
  if (options_.fingerprint_bits < 1) throw ContractViolation("fingerprint_bits must be positive");
  if (building_blocks.empty()) throw ContractViolation("environment needs at least one building block");
  for (auto& rec : building_blocks) {
    std::string canon = chem::write_canonical_smiles(rec.mol);
    if (bb_lookup_.count(canon)) continue;
    bb_lookup_[canon] = static_cast<int>(bbs_.size());
    BuildingBlock bb;
    bb.smiles = canon;
    bb.id = rec.id.empty() ? canon : rec.id;
    bb.fp = chem::morgan_fingerprint(rec.mol, options_.fingerprint_radius, options_.fingerprint_bits);
    bb.mol = std::move(rec.mol);
    bbs_.push_back(std::move(bb));
  }
  position_.resize(templates_.size());
  bb_matches_.resize(templates_.size());
  for (std::size_t t = 0; t < templates_.size(); ++t) {
    const auto& tpl = templates_[t];
    auto& list = tpl.arity() == 1 ? uni_ : bi_;
    position_[t] = static_cast<int>(list.size());
    list.push_back(static_cast<int>(t));
    bb_matches_[t].resize(static_cast<std::size_t>(tpl.arity()));
    for (int side = 0; side < tpl.arity(); ++side)
      for (const auto& bb : bbs_)
        bb_matches_[t][static_cast<std::size_t>(side)].push_back(
            tmpl::has_match(tpl.reactants[static_cast<std::size_t>(side)], bb.mol));
  }
}

Env Env::load(const std::filesystem::path& building_blocks, const std::filesystem::path& templates,
              EnvOptions options) {
  return Env(chem::read_building_blocks(building_blocks), tmpl::read_templates(templates), options);
}

std::optional<int> Env::bb_index(const std::string& smiles) const {
  const auto it = bb_lookup_.find(smiles);
  if (it == bb_lookup_.end()) return std::nullopt;
  return it->second;
}

std::uint64_t Env::hash() const {
  StableHash h;
  for (const auto& bb : bbs_) h.add(std::string_view(bb.smiles));
  for (const auto& t : templates_) h.add(std::string_view(t.text));
  h.add(options_.max_len)
      .add(static_cast<int>(options_.allow_bb_terminals))
      .add(static_cast<int>(options_.require_reversible))
      .add(options_.fingerprint_bits)
      .add(options_.fingerprint_radius);
  return h.value();
}

const MolInfo& Env::info(const std::string& smiles) const {
  {
    std::lock_guard lock(cache_mutex_);
    if (auto it = cache_.find(smiles); it != cache_.end()) return *it->second;
    if (auto al = alias_.find(smiles); al != alias_.end()) return *cache_.at(al->second);
  }
  auto info = std::make_unique<MolInfo>();
  info->mol = chem::parse_smiles(smiles);
  info->smiles = chem::write_canonical_smiles(info->mol);
  info->fp = chem::morgan_fingerprint(info->mol, options_.fingerprint_radius, options_.fingerprint_bits);
  info->bb_index = bb_index(info->smiles).value_or(-1);
  std::lock_guard lock(cache_mutex_);
  if (info->smiles != smiles) alias_[smiles] = info->smiles;
  auto [it, inserted] = cache_.try_emplace(info->smiles, std::move(info));
  return *it->second;
}

const MolInfo& Env::forward_info(const std::string& smiles) const {
  const MolInfo& mi = info(smiles);
  auto& m = const_cast<MolInfo&>(mi);
  std::call_once(m.forward_once, [&] { compute_forward(m); });
  return mi;
}

const MolInfo& Env::backward_info(const std::string& smiles) const {
  const MolInfo& mi = info(smiles);
  auto& m = const_cast<MolInfo&>(mi);
  std::call_once(m.backward_once, [&] { compute_backward(m); });
  return mi;
}

bool Env::reversible(const tmpl::ReactionTemplate& t, const Molecule& product,
                     std::vector<std::string> reactants) const {
  std::sort(reactants.begin(), reactants.end());
  for (const auto& set : tmpl::apply_backward(t, product.mol)) {
    std::vector<std::string> got;
    for (const auto& m : set) got.push_back(m.smiles);
    std::sort(got.begin(), got.end());
    if (got == reactants) return true;
  }
  return false;
}

std::optional<std::string> Env::uni_product(const chem::MolGraph& mol, const std::string& smiles,
                                            int template_index) const {
  const auto& t = templates_[static_cast<std::size_t>(template_index)];
  const auto products = tmpl::forward_products(t, std::span<const chem::MolGraph>(&mol, 1));
  if (products.empty()) return std::nullopt;
  if (options_.require_reversible && !reversible(t, products.front(), {smiles})) return std::nullopt;
  return products.front().smiles;
}

std::optional<std::string> Env::bi_product(const chem::MolGraph& mol, const std::string& smiles, int template_index,
                                           int bb, bool as_first, bool as_second) const {
  const auto& t = templates_[static_cast<std::size_t>(template_index)];
  const auto& match = bb_matches_[static_cast<std::size_t>(template_index)];
  const auto b = static_cast<std::size_t>(bb);
  const BuildingBlock& block = bbs_[b];
  std::optional<Molecule> best;
  auto consider = [&](const chem::MolGraph& r0, const chem::MolGraph& r1) {
    const chem::MolGraph pair[2] = {r0, r1};
    auto products = tmpl::forward_products(t, pair);
    if (!products.empty() && (!best || products.front().smiles < best->smiles)) best = std::move(products.front());
  };
  if (as_first && match[1][b]) consider(mol, block.mol);
  if (as_second && match[0][b]) consider(block.mol, mol);
  if (!best) return std::nullopt;
  if (options_.require_reversible && !reversible(t, *best, {smiles, block.smiles})) return std::nullopt;
  return best->smiles;
}

void Env::compute_forward(MolInfo& info) const {
  info.uni_product.assign(uni_.size(), std::nullopt);
  for (std::size_t u = 0; u < uni_.size(); ++u) info.uni_product[u] = uni_product(info.mol, info.smiles, uni_[u]);
  info.bi_product.assign(bi_.size(), std::vector<std::optional<std::string>>(bbs_.size()));
  for (std::size_t i = 0; i < bi_.size(); ++i) {
    const auto& t = templates_[static_cast<std::size_t>(bi_[i])];
    const bool as_first = tmpl::has_match(t.reactants[0], info.mol);
    const bool as_second = tmpl::has_match(t.reactants[1], info.mol);
    if (!as_first && !as_second) continue;
    for (int b = 0; b < num_bbs(); ++b)
      info.bi_product[i][static_cast<std::size_t>(b)] = bi_product(info.mol, info.smiles, bi_[i], b, as_first, as_second);
  }
}

void Env::compute_backward(MolInfo& info) const {
  info.uni_parents.assign(uni_.size(), {});
  for (std::size_t u = 0; u < uni_.size(); ++u) {
    const auto& t = templates_[static_cast<std::size_t>(uni_[u])];
    for (const auto& set : tmpl::apply_backward(t, info.mol)) {
      const Molecule& r = set.front();
      if (uni_product(r.mol, r.smiles, uni_[u]) != info.smiles) continue;
      auto& list = info.uni_parents[u];
      if (std::find(list.begin(), list.end(), r.smiles) == list.end()) list.push_back(r.smiles);
    }
    std::sort(info.uni_parents[u].begin(), info.uni_parents[u].end());
  }

  info.bi_parents.assign(bi_.size(), {});
  for (std::size_t i = 0; i < bi_.size(); ++i) {
    const int ti = bi_[i];
    const auto& t = templates_[static_cast<std::size_t>(ti)];
    // prev --(t, added)--> info.smiles must hold exactly as the forward step computes it.
    auto realizable = [&](const Molecule& prev, const Molecule& added) {
      const auto bb = bb_index(added.smiles);
      if (!bb) return false;
      const bool as_first = tmpl::has_match(t.reactants[0], prev.mol);
      const bool as_second = tmpl::has_match(t.reactants[1], prev.mol);
      return bi_product(prev.mol, prev.smiles, ti, *bb, as_first, as_second) == info.smiles;
    };
    std::map<std::pair<std::string, std::string>, BiParents> sets;
    for (const auto& set : tmpl::apply_backward(t, info.mol)) {
      const Molecule& x = set[0];
      const Molecule& y = set[1];
      const bool x_first = x.smiles <= y.smiles;
      const Molecule& a = x_first ? x : y;
      const Molecule& b = x_first ? y : x;
      auto [it, inserted] = sets.try_emplace({a.smiles, b.smiles});
      BiParents& bp = it->second;
      if (inserted) {
        bp.a = a.smiles;
        bp.b = b.smiles;
        bp.a_prev = realizable(a, b);
        bp.b_prev = a.smiles == b.smiles ? bp.a_prev : realizable(b, a);
      }
    }
    for (auto& [key, bp] : sets)
      if (bp.a_prev || bp.b_prev) info.bi_parents[i].push_back(bp);
  }
}

ForwardMask Env::forward_mask(const State& state) const {
  ForwardMask m;
  m.uni.assign(uni_.size(), 0);
  m.bi.assign(bi_.size(), 0);
  if (state.kind == StateKind::Terminal) throw ContractViolation("forward_mask on a terminal state");
  if (state.kind == StateKind::Empty) {
    std::call_once(first_once_, [&] {
      first_mask_.assign(bbs_.size(), 1);
      if (options_.allow_bb_terminals) return;
      for (std::size_t b = 0; b < bbs_.size(); ++b) {
        const auto& fi = forward_info(bbs_[b].smiles);
        bool any = std::any_of(fi.uni_product.begin(), fi.uni_product.end(), [](const auto& p) { return p.has_value(); });
        for (const auto& row : fi.bi_product)
          any = any || std::any_of(row.begin(), row.end(), [](const auto& p) { return p.has_value(); });
        first_mask_[b] = any;
      }
    });
    m.add_first = first_mask_;
    if (std::none_of(m.add_first.begin(), m.add_first.end(), [](auto x) { return x != 0; }))
      throw ContractViolation("forward mask invariant violated: no building block can start a route");
    return m;
  }
  m.stop = options_.allow_bb_terminals || state.steps >= 1;
  if (state.steps < options_.max_len) {
    const auto& fi = forward_info(state.smiles);
    for (std::size_t u = 0; u < uni_.size(); ++u) m.uni[u] = fi.uni_product[u].has_value();
    for (std::size_t i = 0; i < bi_.size(); ++i)
      m.bi[i] = std::any_of(fi.bi_product[i].begin(), fi.bi_product[i].end(), [](const auto& p) { return p.has_value(); });
  }
  if (!m.any_top())
    throw ContractViolation("forward mask invariant violated: no legal action at " + state.smiles + " (steps " +
                            std::to_string(state.steps) + ")");
  return m;
}

std::vector<std::uint8_t> Env::addreactant_mask(const State& state, int template_index) const {
  if (state.kind != StateKind::Mol) throw ContractViolation("addreactant_mask needs a molecule state");
  if (template_index < 0 || template_index >= static_cast<int>(templates_.size()) ||
      templates_[static_cast<std::size_t>(template_index)].arity() != 2)
    throw ContractViolation("addreactant_mask needs a bimolecular template");
  if (state.steps >= options_.max_len) throw ContractViolation("addreactant_mask: ReactBi is masked at max length");
  const auto& fi = forward_info(state.smiles);
  const auto& row = fi.bi_product[static_cast<std::size_t>(template_position(template_index))];
  std::vector<std::uint8_t> mask(row.size());
  for (std::size_t b = 0; b < row.size(); ++b) mask[b] = row[b].has_value();
  if (std::none_of(mask.begin(), mask.end(), [](auto x) { return x != 0; }))
    throw ContractViolation("addreactant mask invariant violated: ReactBi was not legal here");
  return mask;
}

State Env::step_forward(const State& state, const Action& action) const {
  const ForwardMask mask = forward_mask(state);
  auto masked = [&](const std::string& why) {
    return ContractViolation(std::string("masked forward action ") + action_name(action.type) + ": " + why);
  };
  switch (action.type) {
    case ActionType::AddFirstReactant: {
      if (state.kind != StateKind::Empty) throw masked("only legal in the empty state");
      if (action.bb_index < 0 || action.bb_index >= num_bbs() || !mask.add_first[static_cast<std::size_t>(action.bb_index)])
        throw masked("building block not allowed");
      return State{StateKind::Mol, bbs_[static_cast<std::size_t>(action.bb_index)].smiles, 0};
    }
    case ActionType::Stop:
      if (!mask.stop) throw masked("stop not allowed");
      return State{StateKind::Terminal, state.smiles, state.steps};
    case ActionType::ReactUni: {
      if (state.kind != StateKind::Mol || action.template_index < 0 ||
          action.template_index >= static_cast<int>(templates_.size()) ||
          templates_[static_cast<std::size_t>(action.template_index)].arity() != 1)
        throw masked("not a unimolecular template on a molecule");
      const auto pos = static_cast<std::size_t>(template_position(action.template_index));
      if (!mask.uni[pos]) throw masked("template not applicable");
      return State{StateKind::Mol, *forward_info(state.smiles).uni_product[pos], state.steps + 1};
    }
    case ActionType::ReactBi: {
      if (state.kind != StateKind::Mol || action.template_index < 0 ||
          action.template_index >= static_cast<int>(templates_.size()) ||
          templates_[static_cast<std::size_t>(action.template_index)].arity() != 2)
        throw masked("not a bimolecular template on a molecule");
      const auto pos = static_cast<std::size_t>(template_position(action.template_index));
      if (!mask.bi[pos]) throw masked("template not applicable");
      if (action.bb_index < 0 || action.bb_index >= num_bbs()) throw masked("building block index out of range");
      const auto& product = forward_info(state.smiles).bi_product[pos][static_cast<std::size_t>(action.bb_index)];
      if (!product) throw masked("building block not compatible");
      return State{StateKind::Mol, *product, state.steps + 1};
    }
    default:
      throw masked("backward action in the forward direction");
  }
}

BackwardMask Env::backward_mask(const State& state, bool from_terminal) const {
  if (state.kind == StateKind::Empty) throw ContractViolation("backward_mask on the empty state");
  const auto& bi = backward_info(state.smiles);
  BackwardMask m;
  m.uni.resize(uni_.size());
  m.bi.resize(bi_.size());
  for (std::size_t u = 0; u < uni_.size(); ++u) m.uni[u] = !bi.uni_parents[u].empty();
  for (std::size_t i = 0; i < bi_.size(); ++i) m.bi[i] = !bi.bi_parents[i].empty();
  m.remove = bi.bb_index >= 0 && !(from_terminal && !options_.allow_bb_terminals);
  return m;
}

int Env::backward_flat_index(const Action& action) const {
  switch (action.type) {
    case ActionType::BckReactUni: return template_position(action.template_index);
    case ActionType::BckReactBi: return num_uni() + template_position(action.template_index);
    case ActionType::BckRemoveFirstReactant: return num_uni() + num_bi();
    default: throw ContractViolation(std::string("not a backward action: ") + action_name(action.type));
  }
}

Action Env::backward_action_at(int flat) const {
  Action a;
  if (flat < 0 || flat >= backward_width()) throw ContractViolation("backward action index out of range");
  if (flat < num_uni()) {
    a.type = ActionType::BckReactUni;
    a.template_index = uni_[static_cast<std::size_t>(flat)];
  } else if (flat < num_uni() + num_bi()) {
    a.type = ActionType::BckReactBi;
    a.template_index = bi_[static_cast<std::size_t>(flat - num_uni())];
  } else {
    a.type = ActionType::BckRemoveFirstReactant;
  }
  return a;
}

int Env::top_index(const Action& action) const {
  switch (action.type) {
    case ActionType::Stop: return 0;
    case ActionType::ReactUni: return 1 + template_position(action.template_index);
    case ActionType::ReactBi: return 1 + num_uni() + template_position(action.template_index);
    default: throw ContractViolation(std::string("no top-level index for ") + action_name(action.type));
  }
}

Env::BackwardStep Env::step_backward(const State& state, const Action& action, Rng& rng, bool from_terminal) const {
  const BackwardMask mask = backward_mask(state, from_terminal);
  const auto flat = mask.flat();
  const int idx = backward_flat_index(action);
  if (!flat[static_cast<std::size_t>(idx)])
    throw ContractViolation(std::string("masked backward action ") + action_name(action.type) + " at " + state.smiles);
  BackwardStep out;
  out.action = action;
  const int prev_steps = std::max(0, state.steps - 1);
  if (action.type == ActionType::BckRemoveFirstReactant) {
    out.previous = State{};
    out.action.bb_index = backward_info(state.smiles).bb_index;
    return out;
  }
  const auto& bi = backward_info(state.smiles);
  const auto pos = static_cast<std::size_t>(template_position(action.template_index));
  if (action.type == ActionType::BckReactUni) {
    const auto& parents = bi.uni_parents[pos];
    const int k = static_cast<int>(parents.size());
    int s = action.set_index;
    if (s < 0) s = static_cast<int>(rng.uniform_index(parents.size()));
    if (s >= k) throw ContractViolation("backward reactant set index out of range");
    out.action.set_index = s;
    out.extra_logprob = -std::log(static_cast<double>(k));
    out.previous = State{StateKind::Mol, parents[static_cast<std::size_t>(s)], prev_steps};
    return out;
  }
  const auto& sets = bi.bi_parents[pos];
  const int k = static_cast<int>(sets.size());
  int s = action.set_index;
  if (s < 0) s = static_cast<int>(rng.uniform_index(sets.size()));
  if (s >= k) throw ContractViolation("backward reactant set index out of range");
  const BiParents& bp = sets[static_cast<std::size_t>(s)];
  out.action.set_index = s;
  out.extra_logprob = -std::log(static_cast<double>(k));
  bool a_is_prev;
  if (bp.a_prev && bp.b_prev && bp.a != bp.b) {
    Tie tie = action.tie;
    if (tie == Tie::None) tie = rng.uniform() < 0.5 ? Tie::First : Tie::Second;
    out.action.tie = tie;
    out.extra_logprob += std::log(0.5);
    a_is_prev = tie == Tie::First;
  } else {
    if (action.tie != Tie::None) throw ContractViolation("tie choice given for a set with one orientation");
    a_is_prev = bp.a_prev;
  }
  const std::string& prev = a_is_prev ? bp.a : bp.b;
  const std::string& added = a_is_prev ? bp.b : bp.a;
  out.action.bb_index = *bb_index(added);
  out.previous = State{StateKind::Mol, prev, prev_steps};
  return out;
}

Env::BackwardStep Env::reverse_of(const State& prev, const Action& action, const State& next) const {
  BackwardStep out;
  out.previous = prev;
  auto unrecoverable = [&] {
    return Error(std::string("forward transition ") + (prev.kind == StateKind::Empty ? "<empty>" : prev.smiles) +
                 " --" + action_name(action.type) + "--> " + next.smiles + " has no backward counterpart");
  };
  switch (action.type) {
    case ActionType::AddFirstReactant:
      out.action.type = ActionType::BckRemoveFirstReactant;
      out.action.bb_index = action.bb_index;
      return out;
    case ActionType::ReactUni: {
      const auto pos = static_cast<std::size_t>(template_position(action.template_index));
      const auto& parents = backward_info(next.smiles).uni_parents[pos];
      const auto it = std::find(parents.begin(), parents.end(), prev.smiles);
      if (it == parents.end()) throw unrecoverable();
      out.action = Action{ActionType::BckReactUni, action.template_index, -1,
                          static_cast<int>(it - parents.begin()), Tie::None};
      out.extra_logprob = -std::log(static_cast<double>(parents.size()));
      return out;
    }
    case ActionType::ReactBi: {
      const auto pos = static_cast<std::size_t>(template_position(action.template_index));
      const auto& sets = backward_info(next.smiles).bi_parents[pos];
      const std::string& added = bbs_[static_cast<std::size_t>(action.bb_index)].smiles;
      const std::string& a = std::min(prev.smiles, added);
      const std::string& b = std::max(prev.smiles, added);
      for (std::size_t s = 0; s < sets.size(); ++s) {
        const BiParents& bp = sets[s];
        if (bp.a != a || bp.b != b) continue;
        const bool prev_is_a = prev.smiles == a;
        if (prev_is_a ? !bp.a_prev : !bp.b_prev) throw unrecoverable();
        out.action = Action{ActionType::BckReactBi, action.template_index, action.bb_index, static_cast<int>(s),
                            Tie::None};
        out.extra_logprob = -std::log(static_cast<double>(sets.size()));
        if (bp.a_prev && bp.b_prev && bp.a != bp.b) {
          out.action.tie = prev_is_a ? Tie::First : Tie::Second;
          out.extra_logprob += std::log(0.5);
        }
        return out;
      }
      throw unrecoverable();
    }
    default:
      throw ContractViolation(std::string("reverse_of: ") + action_name(action.type) + " has no scored reverse");
  }
}

std::vector<BackStep> backward_steps(const Env& env, const Trajectory& traj) {
  if (!traj.complete()) throw ContractViolation("backward_steps needs a complete trajectory");
  std::vector<BackStep> out;
  for (std::size_t t = traj.actions.size(); t-- > 0;) {
    const Action& a = traj.actions[t];
    if (a.type == ActionType::Stop) continue;
    const auto rev = env.reverse_of(traj.states[t], a, traj.states[t + 1]);
    BackStep bs;
    bs.smiles = traj.states[t + 1].smiles;
    bs.from_terminal = t + 1 < traj.actions.size() && traj.actions[t + 1].type == ActionType::Stop;
    bs.flat = env.backward_flat_index(rev.action);
    bs.extra_logprob = rev.extra_logprob;
    out.push_back(std::move(bs));
  }
  return out;
}

Trajectory BackwardRollout::to_forward(const Env& env) const {
  if (!reached_s0) throw ContractViolation("to_forward on a failed backward rollout");
  Trajectory traj;
  traj.states.push_back(State{});
  int steps = 0;
  for (std::size_t i = actions.size(); i-- > 0;) {
    const Action& b = actions[i];
    const std::string& mol = states[i].smiles;
    Action f;
    switch (b.type) {
      case ActionType::BckRemoveFirstReactant:
        f = Action{ActionType::AddFirstReactant, -1, *env.bb_index(mol), -1, Tie::None};
        break;
      case ActionType::BckReactUni:
        f = Action{ActionType::ReactUni, b.template_index, -1, -1, Tie::None};
        ++steps;
        break;
      case ActionType::BckReactBi:
        f = Action{ActionType::ReactBi, b.template_index, b.bb_index, -1, Tie::None};
        ++steps;
        break;
      default:
        throw ContractViolation("forward action in a backward rollout");
    }
    traj.actions.push_back(f);
    traj.states.push_back(State{StateKind::Mol, mol, steps});
  }
  traj.actions.push_back(Action{});
  traj.states.push_back(State{StateKind::Terminal, terminal, steps});
  return traj;
}

}  // namespace synflow::mdp
