#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "rfg/risk.hpp"

namespace rfg {

struct TopAgent {
  std::string agent_id;  // empty for frames without agents
  double risk = 0.0;
};

struct RiskProfile {
  std::string scenario_id;
  double dt = 0.0;
  std::vector<double> values;
  std::vector<TopAgent> per_frame_top_agent;
};

/// Collapse a per-frame evaluation into a profile with the highest-risk agent per frame
/// (ties resolve to the earlier agent).
RiskProfile make_profile(const ScenarioRisk& risk);

enum class EventKind { Peak, SustainedSegment };
std::string_view to_string(EventKind kind);

struct RiskEvent {
  EventKind kind = EventKind::Peak;
  std::size_t start_frame = 0;
  std::size_t end_frame = 0;  // inclusive
  std::size_t peak_frame = 0;
  double peak_value = 0.0;
  std::string dominant_agent;
};

/// Maximal runs with r_t >= threshold. Runs shorter than `min_duration` frames are Peaks.
std::vector<RiskEvent> detect_events(const RiskProfile& profile, double threshold, std::size_t min_duration);

/// Linear-interpolation sample quantiles (h = (n-1)p on sorted data).
std::vector<double> risk_quantiles(std::span<const double> pool, std::span<const double> probs);

enum class ScalarMode { MaxFrame, MeanFrame };

double scenario_scalar_risk(std::span<const double> values, ScalarMode mode);
inline double scenario_scalar_risk(const RiskProfile& profile, ScalarMode mode) {
  return scenario_scalar_risk(profile.values, mode);
}

/// CSV with header `frame,risk,top_agent_id,top_agent_risk`; floats at 9 significant digits.
std::string profile_to_csv(const RiskProfile& profile);
/// Reads the CSV written by profile_to_csv.
RiskProfile profile_from_csv(const std::string& text, const std::string& scenario_id);

nlohmann::json events_to_json(const std::vector<RiskEvent>& events);

/// Formats a double with %.9g.
std::string format_g9(double v);

}  // namespace rfg
