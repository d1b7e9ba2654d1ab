#include "rfg/mining.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "rfg/error.hpp"

namespace rfg {

using nlohmann::json;

std::string_view to_string(EventKind kind) {
  return kind == EventKind::Peak ? "peak" : "sustained_segment";
}

std::string format_g9(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

RiskProfile make_profile(const ScenarioRisk& risk) {
  RiskProfile p;
  p.scenario_id = risk.scenario_id;
  p.dt = risk.dt;
  for (const auto& f : risk.frames) {
    p.values.push_back(f.value);
    TopAgent top;
    for (const auto& a : f.agents) {
      if (top.agent_id.empty() || a.risk > top.risk) top = {a.agent_id, a.risk};
    }
    p.per_frame_top_agent.push_back(top);
  }
  return p;
}

std::vector<RiskEvent> detect_events(const RiskProfile& profile, double threshold, std::size_t min_duration) {
  if (profile.values.empty()) throw DomainError("detect_events: empty profile");
  if (!(threshold > 0.0)) throw DomainError("detect_events: threshold must be > 0");
  if (min_duration < 1) throw DomainError("detect_events: min_duration must be >= 1");

  std::vector<RiskEvent> events;
  const auto& v = profile.values;
  std::size_t t = 0;
  while (t < v.size()) {
    if (!(v[t] >= threshold)) {
      ++t;
      continue;
    }
    RiskEvent e;
    e.start_frame = t;
    e.peak_frame = t;
    while (t < v.size() && v[t] >= threshold) {
      if (v[t] > v[e.peak_frame]) e.peak_frame = t;
      ++t;
    }
    e.end_frame = t - 1;
    e.peak_value = v[e.peak_frame];
    e.kind = (e.end_frame - e.start_frame + 1) >= min_duration ? EventKind::SustainedSegment : EventKind::Peak;
    if (e.peak_frame < profile.per_frame_top_agent.size()) {
      e.dominant_agent = profile.per_frame_top_agent[e.peak_frame].agent_id;
    }
    events.push_back(std::move(e));
  }
  return events;
}

std::vector<double> risk_quantiles(std::span<const double> pool, std::span<const double> probs) {
  if (pool.empty()) throw DomainError("risk_quantiles: empty pool");
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (!(probs[i] >= 0.0 && probs[i] <= 1.0)) throw DomainError("risk_quantiles: probabilities must lie in [0, 1]");
    if (i > 0 && probs[i] < probs[i - 1]) throw DomainError("risk_quantiles: probabilities must be sorted ascending");
  }
  std::vector<double> sorted(pool.begin(), pool.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  std::vector<double> out;
  out.reserve(probs.size());
  for (double p : probs) {
    const double h = static_cast<double>(n - 1) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, n - 1);
    out.push_back(sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]));
  }
  return out;
}

double scenario_scalar_risk(std::span<const double> values, ScalarMode mode) {
  if (values.empty()) throw DomainError("scenario_scalar_risk: empty profile");
  if (mode == ScalarMode::MaxFrame) return *std::max_element(values.begin(), values.end());
  double s = 0.0;
  for (double v : values) s += v;
  return s / static_cast<double>(values.size());
}

std::string profile_to_csv(const RiskProfile& profile) {
  std::ostringstream os;
  os << "frame,risk,top_agent_id,top_agent_risk\n";
  for (std::size_t t = 0; t < profile.values.size(); ++t) {
    TopAgent top;
    if (t < profile.per_frame_top_agent.size()) top = profile.per_frame_top_agent[t];
    os << t << ',' << format_g9(profile.values[t]) << ',' << top.agent_id << ',' << format_g9(top.risk) << '\n';
  }
  return os.str();
}

RiskProfile profile_from_csv(const std::string& text, const std::string& scenario_id) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != "frame,risk,top_agent_id,top_agent_risk") {
    throw SchemaError(scenario_id, "profile CSV: missing header");
  }
  RiskProfile p;
  p.scenario_id = scenario_id;
  std::size_t row = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (line.back() == ',') cells.emplace_back();
    if (cells.size() != 4) throw SchemaError(scenario_id + ":row " + std::to_string(row), "expected 4 columns");
    try {
      p.values.push_back(std::stod(cells[1]));
      p.per_frame_top_agent.push_back({cells[2], std::stod(cells[3])});
    } catch (const std::exception&) {
      throw SchemaError(scenario_id + ":row " + std::to_string(row), "non-numeric risk value");
    }
    if (!std::isfinite(p.values.back()) || p.values.back() < 0.0) {
      throw SchemaError(scenario_id + ":row " + std::to_string(row), "risk must be finite and >= 0");
    }
    ++row;
  }
  if (p.values.empty()) throw SchemaError(scenario_id, "profile CSV has no rows");
  return p;
}

json events_to_json(const std::vector<RiskEvent>& events) {
  json out = json::array();
  for (const auto& e : events) {
    out.push_back({{"kind", std::string(to_string(e.kind))},
                   {"start_frame", e.start_frame},
                   {"end_frame", e.end_frame},
                   {"peak_frame", e.peak_frame},
                   {"peak_value", e.peak_value},
                   {"dominant_agent", e.dominant_agent}});
  }
  return out;
}

}  // namespace rfg
