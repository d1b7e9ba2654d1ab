#include "rfg/risk.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "rfg/error.hpp"

namespace rfg {

using nlohmann::json;

std::string_view to_string(InteractionRegime r) {
  switch (r) {
    case InteractionRegime::Bi: return "bi";
    case InteractionRegime::AgentApproach: return "agent_approach";
    case InteractionRegime::EgoApproach: return "ego_approach";
    case InteractionRegime::Away: return "away";
  }
  return "away";
}

std::map<AgentClass, double> RiskParams::default_type_coeff() {
  return {{AgentClass::Car, 1.0},        {AgentClass::Truck, 2.5},   {AgentClass::Bus, 2.5},
          {AgentClass::Motorcycle, 1.2}, {AgentClass::Bicycle, 1.2}, {AgentClass::Pedestrian, 1.5},
          {AgentClass::Other, 1.0}};
}

void RiskParams::validate() const {
  const double all[] = {omega_bi, omega_agent, omega_ego, omega_away, kappa, lambda_lat, k_const, c_const, epsilon};
  for (double v : all) {
    if (!std::isfinite(v)) throw ConfigError("risk params: non-finite value");
  }
  if (!(omega_bi > omega_agent && omega_agent > omega_ego && omega_ego > omega_away && omega_away >= 0.0)) {
    throw ConfigError("risk params: require omega_bi > omega_agent > omega_ego > omega_away >= 0");
  }
  if (kappa < 0.0) throw ConfigError("risk params: kappa must be >= 0");
  if (lambda_lat < 0.0) throw ConfigError("risk params: lambda_lat must be >= 0");
  if (!(epsilon > 0.0)) throw ConfigError("risk params: epsilon must be > 0");
  for (const auto& [cls, mu] : type_coeff) {
    if (!(mu >= 0.0) || !std::isfinite(mu)) {
      throw ConfigError("risk params: type_coeff." + std::string(to_string(cls)) + " must be >= 0");
    }
  }
}

double RiskParams::weight(InteractionRegime regime) const {
  switch (regime) {
    case InteractionRegime::Bi: return omega_bi;
    case InteractionRegime::AgentApproach: return omega_agent;
    case InteractionRegime::EgoApproach: return omega_ego;
    case InteractionRegime::Away: return omega_away;
  }
  return omega_away;
}

double RiskParams::type_coefficient(AgentClass cls) const {
  auto it = type_coeff.find(cls);
  if (it == type_coeff.end()) {
    throw ConfigError("risk params: no type_coeff entry for class '" + std::string(to_string(cls)) + "'");
  }
  return it->second;
}

RiskParams risk_params_from_json(const json& doc) {
  if (!doc.is_object()) throw ConfigError("risk params: expected a JSON object");
  static const std::set<std::string> known = {"omega_bi", "omega_agent", "omega_ego", "omega_away",
                                              "type_coeff", "kappa", "lambda_lat", "k_const",
                                              "c_const", "epsilon", "aggregation"};
  for (const auto& [key, value] : doc.items()) {
    if (!known.contains(key)) throw ConfigError("risk params: unknown key '" + key + "'");
  }
  RiskParams p;
  auto num = [&](const char* key, double& dst) {
    if (!doc.contains(key)) return;
    if (!doc[key].is_number()) throw ConfigError(std::string("risk params: '") + key + "' must be a number");
    dst = doc[key].get<double>();
  };
  num("omega_bi", p.omega_bi);
  num("omega_agent", p.omega_agent);
  num("omega_ego", p.omega_ego);
  num("omega_away", p.omega_away);
  num("kappa", p.kappa);
  num("lambda_lat", p.lambda_lat);
  num("k_const", p.k_const);
  num("c_const", p.c_const);
  num("epsilon", p.epsilon);
  if (doc.contains("type_coeff")) {
    const json& tc = doc["type_coeff"];
    if (!tc.is_object()) throw ConfigError("risk params: 'type_coeff' must be an object");
    p.type_coeff.clear();
    for (const auto& [name, value] : tc.items()) {
      const auto cls = parse_agent_class(name);
      if (!cls) throw ConfigError("risk params: unknown class '" + name + "' in type_coeff");
      if (!value.is_number()) throw ConfigError("risk params: type_coeff." + name + " must be a number");
      p.type_coeff[*cls] = value.get<double>();
    }
  }
  if (doc.contains("aggregation")) {
    const json& agg = doc["aggregation"];
    if (agg == "Sum") {
      p.aggregation = Aggregation::Sum;
    } else if (agg == "Max") {
      p.aggregation = Aggregation::Max;
    } else {
      throw ConfigError("risk params: aggregation must be \"Sum\" or \"Max\"");
    }
  }
  p.validate();
  return p;
}

json risk_params_to_json(const RiskParams& p) {
  json tc = json::object();
  for (const auto& [cls, mu] : p.type_coeff) tc[std::string(to_string(cls))] = mu;
  return {{"omega_bi", p.omega_bi},     {"omega_agent", p.omega_agent},
          {"omega_ego", p.omega_ego},   {"omega_away", p.omega_away},
          {"type_coeff", tc},           {"kappa", p.kappa},
          {"lambda_lat", p.lambda_lat}, {"k_const", p.k_const},
          {"c_const", p.c_const},       {"epsilon", p.epsilon},
          {"aggregation", p.aggregation == Aggregation::Sum ? "Sum" : "Max"}};
}

RiskParams load_risk_params(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open risk params " + path.string());
  json doc;
  try {
    doc = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("risk params: invalid JSON: ") + e.what());
  }
  return risk_params_from_json(doc);
}

namespace {

void require_finite(const KinematicState& s, const char* who) {
  if (!std::isfinite(s.position.x) || !std::isfinite(s.position.y) || !std::isfinite(s.velocity.x) ||
      !std::isfinite(s.velocity.y)) {
    throw DomainError(std::string(who) + " state is not finite");
  }
}

InteractionRegime regime_from_cues(double ego_to_agent, double agent_to_ego) {
  if (ego_to_agent > 0.0 && agent_to_ego > 0.0) return InteractionRegime::Bi;
  if (agent_to_ego > 0.0) return InteractionRegime::AgentApproach;
  if (ego_to_agent > 0.0) return InteractionRegime::EgoApproach;
  return InteractionRegime::Away;
}

}  // namespace

InteractionRegime classify_interaction(const KinematicState& ego, const KinematicState& agent) {
  require_finite(ego, "ego");
  require_finite(agent, "agent");
  const Vec2 r = agent.position - ego.position;
  return regime_from_cues(dot(ego.velocity, r), dot(agent.velocity, -r));
}

AgentRiskBreakdown agent_risk(const KinematicState& ego, const AgentSnapshot& agent, const RiskParams& params) {
  const double mu = params.type_coefficient(agent.class_label);
  AgentRiskBreakdown out;
  out.agent_id = agent.id;
  out.regime = classify_interaction(ego, agent.state);

  const Vec2 r = agent.state.position - ego.position;
  out.distance = norm(r);
  const Vec2 r_hat = (1.0 / (out.distance + params.epsilon)) * r;
  const Vec2 v_rel = ego.velocity - agent.state.velocity;

  out.interaction_weight = params.weight(out.regime);
  out.type_coeff = mu;
  out.closing_speed = std::max(0.0, dot(v_rel, r_hat));
  out.alpha = std::exp(params.kappa * out.closing_speed);
  const double c = cross(v_rel, r_hat);
  out.sin2_theta = c * c / (dot(v_rel, v_rel) + params.epsilon);
  out.beta_lateral = std::exp(-params.lambda_lat * out.sin2_theta);
  out.risk = params.k_const * params.c_const * out.interaction_weight * mu * out.alpha * out.beta_lateral /
             (out.distance + params.epsilon);
  return out;
}

FrameRisk frame_risk(const KinematicState& ego, const std::vector<AgentSnapshot>& agents, const RiskParams& params) {
  FrameRisk out;
  out.agents.reserve(agents.size());
  for (const auto& a : agents) {
    out.agents.push_back(agent_risk(ego, a, params));
    const double r = out.agents.back().risk;
    out.value = params.aggregation == Aggregation::Sum ? out.value + r : std::max(out.value, r);
  }
  return out;
}

std::vector<AgentSnapshot> snapshots_at(const Scenario& scenario, std::size_t frame) {
  std::vector<AgentSnapshot> out;
  out.reserve(scenario.agents.size());
  for (const auto& a : scenario.agents) {
    out.push_back({a.id, a.cls, a.trajectory.states.at(frame).kinematic()});
  }
  return out;
}

std::vector<double> ScenarioRisk::values() const {
  std::vector<double> v;
  v.reserve(frames.size());
  for (const auto& f : frames) v.push_back(f.value);
  return v;
}

ScenarioRisk risk_profile(const Scenario& scenario, const RiskParams& params) {
  if (scenario.num_frames == 0 || scenario.ego.states.empty()) {
    throw DomainError("risk_profile: scenario '" + scenario.id + "' has no frames");
  }
  ScenarioRisk out;
  out.scenario_id = scenario.id;
  out.dt = scenario.dt;
  out.frames.reserve(scenario.num_frames);
  for (std::size_t t = 0; t < scenario.num_frames; ++t) {
    out.frames.push_back(frame_risk(scenario.ego.states.at(t).kinematic(), snapshots_at(scenario, t), params));
  }
  return out;
}

json breakdown_to_json(const ScenarioRisk& risk) {
  json frames = json::array();
  for (std::size_t t = 0; t < risk.frames.size(); ++t) {
    json agents = json::array();
    for (const auto& a : risk.frames[t].agents) {
      agents.push_back({{"agent_id", a.agent_id},
                        {"regime", std::string(to_string(a.regime))},
                        {"distance", a.distance},
                        {"interaction_weight", a.interaction_weight},
                        {"type_coeff", a.type_coeff},
                        {"closing_speed", a.closing_speed},
                        {"alpha", a.alpha},
                        {"sin2_theta", a.sin2_theta},
                        {"beta_lateral", a.beta_lateral},
                        {"risk", a.risk}});
    }
    frames.push_back({{"frame", t}, {"risk", risk.frames[t].value}, {"agents", agents}});
  }
  return {{"scenario_id", risk.scenario_id}, {"dt", risk.dt}, {"frames", frames}};
}

}  // namespace rfg
