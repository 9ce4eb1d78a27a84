#include <fstream>

#include "json.hpp"
#include "synflow/mdp.hpp"

namespace synflow::mdp {

using Json = nlohmann::ordered_json;

Route make_route(const Env& env, const Trajectory& traj) {
  if (!traj.complete()) throw ContractViolation("routes are exported for complete trajectories only");
  Route r;
  r.reward = traj.reward.value_or(0.0);
  r.terminal_smiles = traj.last().smiles;
  for (std::size_t t = 0; t < traj.actions.size(); ++t) {
    const Action& a = traj.actions[t];
    if (a.type == ActionType::Stop) continue;
    RouteStep s;
    if (a.bb_index >= 0) s.bb_smiles = env.building_blocks()[static_cast<std::size_t>(a.bb_index)].smiles;
    if (a.template_index >= 0) s.template_id = env.templates()[static_cast<std::size_t>(a.template_index)].id;
    s.product_smiles = traj.states[t + 1].smiles;
    r.steps.push_back(std::move(s));
  }
  return r;
}

std::string route_to_json(const Route& route) {
  Json j;
  j["reward"] = route.reward;
  j["terminal_smiles"] = route.terminal_smiles;
  Json steps = Json::array();
  for (const auto& s : route.steps) {
    Json o = Json::object();
    if (s.bb_smiles) o["bb_smiles"] = *s.bb_smiles;
    if (s.template_id) o["template_id"] = *s.template_id;
    o["product_smiles"] = s.product_smiles;
    steps.push_back(std::move(o));
  }
  j["steps"] = std::move(steps);
  return j.dump();
}

Route route_from_json(const std::string& line) {
  Json j;
  try {
    j = Json::parse(line);
  } catch (const Json::parse_error& e) {
    throw ParseError(std::string("invalid route record: ") + e.what(), e.byte);
  }
  Route r;
  try {
    r.reward = j.at("reward").get<double>();
    r.terminal_smiles = j.at("terminal_smiles").get<std::string>();
    for (const auto& o : j.at("steps")) {
      RouteStep s;
      if (o.contains("bb_smiles")) s.bb_smiles = o["bb_smiles"].get<std::string>();
      if (o.contains("template_id")) s.template_id = o["template_id"].get<std::string>();
      s.product_smiles = o.at("product_smiles").get<std::string>();
      r.steps.push_back(std::move(s));
    }
  } catch (const Json::exception& e) {
    throw ParseError(std::string("malformed route record: ") + e.what(), 0);
  }
  return r;
}

void export_routes(const std::vector<Route>& routes, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& r : routes) out << route_to_json(r) << '\n';
  if (!out) throw Error("failed writing " + path.string());
}

std::vector<Route> read_routes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<Route> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(route_from_json(line));
  return out;
}

}  // namespace synflow::mdp
