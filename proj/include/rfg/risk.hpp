#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "rfg/geometry.hpp"
#include "rfg/scenario.hpp"

namespace rfg {

/// Mutual-approach class of an ego/agent pair, decided by the signs of the two approach cues.
enum class InteractionRegime { Bi, AgentApproach, EgoApproach, Away };

std::string_view to_string(InteractionRegime r);

enum class Aggregation { Sum, Max };

struct AgentSnapshot {
  std::string id;
  AgentClass class_label = AgentClass::Car;
  KinematicState state;
};

/// Calibration of the risk field. Defaults keep example magnitudes O(1) and respect the
/// weight ordering omega_bi > omega_agent > omega_ego > omega_away >= 0.
struct RiskParams {
  double omega_bi = 1.0;
  double omega_agent = 0.7;
  double omega_ego = 0.4;
  double omega_away = 0.1;
  std::map<AgentClass, double> type_coeff = default_type_coeff();
  double kappa = 0.1;       // s/m
  double lambda_lat = 1.0;  // lateral attenuation
  double k_const = 1.0;
  double c_const = 1.0;
  double epsilon = 1e-6;
  Aggregation aggregation = Aggregation::Sum;

  static std::map<AgentClass, double> default_type_coeff();

  /// Throws ConfigError when an invariant is broken.
  void validate() const;
  double weight(InteractionRegime regime) const;
  /// mu for a class; ConfigError when the table has no entry.
  double type_coefficient(AgentClass cls) const;
};

RiskParams risk_params_from_json(const nlohmann::json& doc);
nlohmann::json risk_params_to_json(const RiskParams& params);
RiskParams load_risk_params(const std::filesystem::path& path);

struct AgentRiskBreakdown {
  std::string agent_id;
  InteractionRegime regime = InteractionRegime::Away;
  double distance = 0.0;
  double interaction_weight = 0.0;
  double type_coeff = 0.0;
  double closing_speed = 0.0;
  double alpha = 1.0;
  double sin2_theta = 0.0;
  double beta_lateral = 1.0;
  double risk = 0.0;
};

struct FrameRisk {
  double value = 0.0;
  std::vector<AgentRiskBreakdown> agents;
};

/// Per-frame risk over a whole scenario.
struct ScenarioRisk {
  std::string scenario_id;
  double dt = 0.0;
  std::vector<FrameRisk> frames;

  std::vector<double> values() const;
};

/// A displacement counts as "approaching" only when the dot product is strictly positive.
InteractionRegime classify_interaction(const KinematicState& ego, const KinematicState& agent);

/// R = K·C·omega·mu·alpha·beta / (|r| + eps), with r the ego-to-agent displacement.
AgentRiskBreakdown agent_risk(const KinematicState& ego, const AgentSnapshot& agent, const RiskParams& params);

FrameRisk frame_risk(const KinematicState& ego, const std::vector<AgentSnapshot>& agents, const RiskParams& params);

/// One frame of `scenario`, as snapshots at index `frame`.
std::vector<AgentSnapshot> snapshots_at(const Scenario& scenario, std::size_t frame);

ScenarioRisk risk_profile(const Scenario& scenario, const RiskParams& params);

nlohmann::json breakdown_to_json(const ScenarioRisk& risk);

}  // namespace rfg
