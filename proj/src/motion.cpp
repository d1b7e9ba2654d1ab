#include "rfg/motion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>
#include <tuple>

#include "rfg/error.hpp"
#include "rfg/rng.hpp"

namespace rfg {

using nlohmann::json;

Tensor film_modulate(const Tensor& feature, const FilmParams& params) {
  if (params.gamma.shape() != feature.shape() || params.beta.shape() != feature.shape()) {
    throw DimensionError("film_modulate: feature " + shape_str(feature.shape()) + ", gamma " +
                         shape_str(params.gamma.shape()) + ", beta " + shape_str(params.beta.shape()));
  }
  Tensor out(feature.shape());
  for (std::size_t i = 0; i < feature.size(); ++i) out[i] = params.gamma[i] * feature[i] + params.beta[i];
  return out;
}

void RiskTarget::validate(std::size_t horizon) const {
  if (!(tau > 1.0) || !std::isfinite(tau)) throw DomainError("risk target: tau must be > 1");
  if (kind == Kind::Scalar) {
    if (!(scalar >= 0.0) || !std::isfinite(scalar)) throw DomainError("risk target: r* must be finite and >= 0");
    return;
  }
  if (profile.size() != horizon) {
    throw DomainError("risk target: profile length " + std::to_string(profile.size()) + " != horizon " +
                      std::to_string(horizon));
  }
  for (double v : profile) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw DomainError("risk target: profile values must be finite and >= 0");
  }
}

namespace {

double profile_deviation(const std::vector<double>& achieved, const std::vector<double>& target, double factor) {
  if (achieved.size() != target.size()) {
    throw DimensionError("risk_match_loss: hypothesis profile length " + std::to_string(achieved.size()) +
                         " != target length " + std::to_string(target.size()));
  }
  double s = 0.0;
  for (std::size_t t = 0; t < target.size(); ++t) s += std::fabs(achieved[t] - factor * target[t]);
  return s / static_cast<double>(target.size());
}

}  // namespace

RiskMatch risk_match_loss(std::span<const MotionHypothesis> hypotheses, const RiskTarget& target,
                          double lambda_min, double lambda_max) {
  if (hypotheses.size() < 2) throw DomainError("risk_match_loss: need at least 2 hypotheses");
  RiskMatch m;
  for (std::size_t i = 1; i < hypotheses.size(); ++i) {
    if (hypotheses[i].induced_risk < hypotheses[m.min_index].induced_risk) m.min_index = i;
    if (hypotheses[i].induced_risk > hypotheses[m.max_index].induced_risk) m.max_index = i;
  }
  m.r_min = hypotheses[m.min_index].induced_risk;
  m.r_max = hypotheses[m.max_index].induced_risk;
  if (target.kind == RiskTarget::Kind::Scalar) {
    m.loss = lambda_min * std::fabs(m.r_min - target.scalar) + lambda_max * std::fabs(m.r_max - target.tau * target.scalar);
  } else {
    m.loss = lambda_min * profile_deviation(hypotheses[m.min_index].risk_profile, target.profile, 1.0) +
             lambda_max * profile_deviation(hypotheses[m.max_index].risk_profile, target.profile, target.tau);
  }
  return m;
}

std::vector<Box3D> boxes_from_trajectory(const Trajectory& trajectory, const BoxSize& size) {
  std::vector<Box3D> boxes;
  boxes.reserve(trajectory.size());
  for (const auto& s : trajectory.states) {
    boxes.push_back({{s.position.x, s.position.y, size.height / 2.0}, size, s.heading});
  }
  return boxes;
}

void SynthesisConfig::validate() const {
  if (num_modes < 2) throw ConfigError("synthesis: num_modes must be >= 2");
  if (control_points < 1) throw ConfigError("synthesis: control_points must be >= 1");
  if (population < 2) throw ConfigError("synthesis: population must be >= 2");
  if (!(elite_fraction > 0.0 && elite_fraction <= 1.0)) throw ConfigError("synthesis: elite_fraction must be in (0, 1]");
  if (!(smoothing > 0.0 && smoothing <= 1.0)) throw ConfigError("synthesis: smoothing must be in (0, 1]");
  if (!(v_max > 0.0) || !(a_max > 0.0)) throw ConfigError("synthesis: speed and acceleration limits must be positive");
  if (position_sigma < 0.0 || speed_sigma < 0.0 || max_offset < 0.0 || max_speed_delta < 0.0) {
    throw ConfigError("synthesis: perturbation scales and bounds must be >= 0");
  }
  if (lambda_min < 0.0 || lambda_max < 0.0) throw ConfigError("synthesis: loss weights must be >= 0");
}

SynthesisConfig synthesis_config_from_json(const json& doc, SynthesisConfig c) {
  if (!doc.is_object()) throw ConfigError("synthesis config: expected a JSON object");
  static const std::set<std::string> known = {
      "num_modes", "control_points", "position_sigma", "speed_sigma", "max_offset", "max_speed_delta",
      "iterations", "population", "elite_fraction", "smoothing", "v_max", "a_max", "lambda_min",
      "lambda_max", "risk_mode", "perturb_agents", "perturb_ego", "tolerance", "seed"};
  for (const auto& [key, value] : doc.items()) {
    if (!known.contains(key)) throw ConfigError("synthesis config: unknown key '" + key + "'");
  }
  try {
    auto get = [&](const char* key, auto& dst) {
      if (doc.contains(key)) dst = doc[key].get<std::decay_t<decltype(dst)>>();
    };
    get("num_modes", c.num_modes);
    get("control_points", c.control_points);
    get("position_sigma", c.position_sigma);
    get("speed_sigma", c.speed_sigma);
    get("max_offset", c.max_offset);
    get("max_speed_delta", c.max_speed_delta);
    get("iterations", c.iterations);
    get("population", c.population);
    get("elite_fraction", c.elite_fraction);
    get("smoothing", c.smoothing);
    get("v_max", c.v_max);
    get("a_max", c.a_max);
    get("lambda_min", c.lambda_min);
    get("lambda_max", c.lambda_max);
    get("perturb_agents", c.perturb_agents);
    get("perturb_ego", c.perturb_ego);
    get("tolerance", c.tolerance);
    get("seed", c.seed);
    if (doc.contains("risk_mode")) {
      const auto mode = doc["risk_mode"].get<std::string>();
      if (mode == "MaxFrame") {
        c.risk_mode = ScalarMode::MaxFrame;
      } else if (mode == "MeanFrame") {
        c.risk_mode = ScalarMode::MeanFrame;
      } else {
        throw ConfigError("synthesis config: risk_mode must be MaxFrame or MeanFrame");
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("synthesis config: ") + e.what());
  }
  c.validate();
  return c;
}

json synthesis_config_to_json(const SynthesisConfig& c) {
  return {{"num_modes", c.num_modes},
          {"control_points", c.control_points},
          {"position_sigma", c.position_sigma},
          {"speed_sigma", c.speed_sigma},
          {"max_offset", c.max_offset},
          {"max_speed_delta", c.max_speed_delta},
          {"iterations", c.iterations},
          {"population", c.population},
          {"elite_fraction", c.elite_fraction},
          {"smoothing", c.smoothing},
          {"v_max", c.v_max},
          {"a_max", c.a_max},
          {"lambda_min", c.lambda_min},
          {"lambda_max", c.lambda_max},
          {"risk_mode", c.risk_mode == ScalarMode::MaxFrame ? "MaxFrame" : "MeanFrame"},
          {"perturb_agents", c.perturb_agents},
          {"perturb_ego", c.perturb_ego},
          {"tolerance", c.tolerance},
          {"seed", c.seed}};
}

PerturbationLayout make_layout(const Scenario& scenario, const SynthesisConfig& config) {
  PerturbationLayout layout;
  layout.num_modes = config.num_modes;
  layout.control_points = config.control_points;
  if (config.perturb_ego) layout.tracks.push_back(-1);
  if (config.perturb_agents.empty()) {
    for (std::size_t i = 0; i < scenario.agents.size(); ++i) layout.tracks.push_back(static_cast<int>(i));
  } else {
    for (const auto& id : config.perturb_agents) {
      auto it = std::find_if(scenario.agents.begin(), scenario.agents.end(), [&](const AgentTrack& a) { return a.id == id; });
      if (it == scenario.agents.end()) throw ConfigError("synthesis: unknown agent id '" + id + "' in perturb_agents");
      layout.tracks.push_back(static_cast<int>(it - scenario.agents.begin()));
    }
  }
  if (layout.tracks.empty()) throw ConfigError("synthesis: nothing to perturb (no agents and ego disabled)");
  return layout;
}

Trajectory perturb_trajectory(const Trajectory& trajectory, std::span<const double> track_params,
                              std::size_t control_points) {
  if (track_params.size() != 2 * control_points + 1) {
    throw DimensionError("perturb_trajectory: expected " + std::to_string(2 * control_points + 1) + " parameters");
  }
  if (std::all_of(track_params.begin(), track_params.end(), [](double v) { return v == 0.0; })) return trajectory;

  const std::size_t n = trajectory.size();
  const double dt = trajectory.dt;
  const double speed_delta = track_params[2 * control_points];
  std::vector<Vec2> disp(n);
  for (std::size_t f = 0; f < n; ++f) {
    Vec2 off{track_params[0], track_params[1]};
    if (control_points > 1 && n > 1) {
      const double u = static_cast<double>(f) * static_cast<double>(control_points - 1) / static_cast<double>(n - 1);
      const std::size_t i = std::min(static_cast<std::size_t>(u), control_points - 2);
      const double w = u - static_cast<double>(i);
      const Vec2 a{track_params[2 * i], track_params[2 * i + 1]};
      const Vec2 b{track_params[2 * i + 2], track_params[2 * i + 3]};
      off = (1.0 - w) * a + w * b;
    }
    const double h = trajectory.states[f].heading;
    disp[f] = off + (speed_delta * static_cast<double>(f) * dt) * Vec2{std::cos(h), std::sin(h)};
  }

  Trajectory out = trajectory;
  for (std::size_t f = 0; f < n; ++f) {
    auto& s = out.states[f];
    const auto& orig = trajectory.states[f];
    Vec2 rate;
    if (n == 1) {
      rate = speed_delta * Vec2{std::cos(orig.heading), std::sin(orig.heading)};
    } else {
      const std::size_t lo = f == 0 ? 0 : f - 1;
      const std::size_t hi = f + 1 == n ? f : f + 1;
      rate = (1.0 / (static_cast<double>(hi - lo) * dt)) * (disp[hi] - disp[lo]);
    }
    s.position = orig.position + disp[f];
    s.velocity = orig.velocity + rate;
    if (norm(s.velocity) > 1e-9) {
      const double turned = norm(orig.velocity) > 1e-9
                                ? std::atan2(cross(orig.velocity, s.velocity), dot(orig.velocity, s.velocity))
                                : std::atan2(s.velocity.y, s.velocity.x) - orig.heading;
      s.heading = normalize_angle(orig.heading + turned);
    }
  }
  return out;
}

namespace {

void accumulate_feasibility(const Trajectory& traj, const SynthesisConfig& config, Feasibility& f) {
  for (std::size_t k = 0; k < traj.size(); ++k) {
    const double speed = norm(traj.states[k].velocity);
    f.max_speed = std::max(f.max_speed, speed);
    if (speed > config.v_max) {
      ++f.speed_violations;
      f.violation += speed - config.v_max;
    }
    if (k + 1 < traj.size()) {
      const double accel = norm(traj.states[k + 1].velocity - traj.states[k].velocity) / traj.dt;
      f.max_accel = std::max(f.max_accel, accel);
      if (accel > config.a_max) {
        ++f.accel_violations;
        f.violation += accel - config.a_max;
      }
    }
  }
  f.feasible = f.speed_violations == 0 && f.accel_violations == 0;
}

}  // namespace

MotionHypothesis evaluate_mode(const Scenario& scenario, const PerturbationLayout& layout,
                               std::span<const double> mode_params, const RiskParams& risk_params,
                               const SynthesisConfig& config) {
  if (mode_params.size() != layout.per_mode()) throw DimensionError("evaluate_mode: parameter count mismatch");
  Scenario sc = scenario;
  for (std::size_t j = 0; j < layout.tracks.size(); ++j) {
    const auto slice = mode_params.subspan(j * layout.per_track(), layout.per_track());
    const int track = layout.tracks[j];
    Trajectory& traj = track < 0 ? sc.ego : sc.agents[static_cast<std::size_t>(track)].trajectory;
    traj = perturb_trajectory(traj, slice, layout.control_points);
  }

  MotionHypothesis h;
  h.ego = sc.ego;
  h.risk_profile = risk_profile(sc, risk_params).values();
  h.induced_risk = scenario_scalar_risk(h.risk_profile, config.risk_mode);
  if (config.perturb_ego) accumulate_feasibility(sc.ego, config, h.feasibility);
  for (auto& a : sc.agents) {
    accumulate_feasibility(a.trajectory, config, h.feasibility);
    h.agents.push_back({a.id, a.cls, a.size, a.trajectory, boxes_from_trajectory(a.trajectory, a.size)});
  }
  return h;
}

namespace {

struct Candidate {
  std::vector<double> x;
  std::vector<MotionHypothesis> hypotheses;
  RiskMatch match;
  double violation = 0.0;

  auto key() const { return std::make_tuple(violation, match.loss); }
};

Candidate evaluate_candidate(const Scenario& scenario, const PerturbationLayout& layout, std::vector<double> x,
                             const RiskTarget& target, const RiskParams& risk_params, const SynthesisConfig& config) {
  Candidate c;
  c.x = std::move(x);
  const std::span<const double> all(c.x);
  for (std::size_t m = 0; m < layout.num_modes; ++m) {
    c.hypotheses.push_back(
        evaluate_mode(scenario, layout, all.subspan(m * layout.per_mode(), layout.per_mode()), risk_params, config));
    c.violation += c.hypotheses.back().feasibility.violation;
  }
  c.match = risk_match_loss(c.hypotheses, target, config.lambda_min, config.lambda_max);
  return c;
}

struct SearchScales {
  std::vector<double> sigma;
  std::vector<double> bound;
};

SearchScales initial_scales(const PerturbationLayout& layout, const SynthesisConfig& config, std::size_t modes) {
  SearchScales s;
  for (std::size_t m = 0; m < modes; ++m) {
    for (std::size_t j = 0; j < layout.tracks.size(); ++j) {
      for (std::size_t k = 0; k < 2 * layout.control_points; ++k) {
        s.sigma.push_back(config.position_sigma);
        s.bound.push_back(config.max_offset);
      }
      s.sigma.push_back(config.speed_sigma);
      s.bound.push_back(config.max_speed_delta);
    }
  }
  return s;
}

}  // namespace

SynthesisResult synthesize(const Scenario& scenario, const RiskTarget& target, const RiskParams& risk_params,
                           const SynthesisConfig& config) {
  config.validate();
  risk_params.validate();
  target.validate(scenario.num_frames);
  const PerturbationLayout layout = make_layout(scenario, config);
  const std::size_t dim = layout.size();
  const SearchScales scales = initial_scales(layout, config, layout.num_modes);

  Rng rng(config.seed);
  std::vector<double> mean(dim, 0.0);
  std::vector<double> sigma = scales.sigma;
  const std::size_t num_elite =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(config.elite_fraction * static_cast<double>(config.population))));

  Candidate best = evaluate_candidate(scenario, layout, std::vector<double>(dim, 0.0), target, risk_params, config);
  SynthesisResult result;

  for (std::size_t it = 0; it < config.iterations; ++it) {
    std::vector<Candidate> population;
    population.reserve(config.population);
    for (std::size_t s = 0; s + 1 < config.population; ++s) {
      std::vector<double> x(dim);
      for (std::size_t d = 0; d < dim; ++d) {
        x[d] = std::clamp(mean[d] + sigma[d] * rng.normal(), -scales.bound[d], scales.bound[d]);
      }
      population.push_back(evaluate_candidate(scenario, layout, std::move(x), target, risk_params, config));
    }
    population.push_back(best);

    std::vector<std::size_t> order(population.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return population[a].key() < population[b].key(); });
    if (population[order.front()].key() < best.key()) best = population[order.front()];
    result.loss_trace.push_back(best.match.loss);
    result.iterations_run = it + 1;

    for (std::size_t d = 0; d < dim; ++d) {
      double m = 0.0;
      for (std::size_t e = 0; e < num_elite; ++e) m += population[order[e]].x[d];
      m /= static_cast<double>(num_elite);
      double var = 0.0;
      for (std::size_t e = 0; e < num_elite; ++e) {
        const double dev = population[order[e]].x[d] - m;
        var += dev * dev;
      }
      var /= static_cast<double>(num_elite);
      mean[d] = config.smoothing * m + (1.0 - config.smoothing) * mean[d];
      sigma[d] = std::max(config.smoothing * std::sqrt(var) + (1.0 - config.smoothing) * sigma[d],
                          1e-4 * scales.sigma[d]);
    }
    if (best.violation == 0.0 && best.match.loss <= config.tolerance) break;
  }

  if (best.violation > 0.0) {
    Feasibility worst;
    for (const auto& h : best.hypotheses) {
      worst.max_speed = std::max(worst.max_speed, h.feasibility.max_speed);
      worst.max_accel = std::max(worst.max_accel, h.feasibility.max_accel);
    }
    std::ostringstream os;
    os << "no kinematically feasible hypothesis set found: best candidate reaches speed " << worst.max_speed
       << " m/s (limit " << config.v_max << ") and acceleration " << worst.max_accel << " m/s^2 (limit "
       << config.a_max << ")";
    throw SynthesisError(os.str());
  }

  result.best_params = best.x;
  result.hypotheses = std::move(best.hypotheses);
  std::stable_sort(result.hypotheses.begin(), result.hypotheses.end(),
                   [](const MotionHypothesis& a, const MotionHypothesis& b) { return a.induced_risk < b.induced_risk; });
  result.match = risk_match_loss(result.hypotheses, target, config.lambda_min, config.lambda_max);
  result.degenerate_spread = result.match.r_max == result.match.r_min;
  return result;
}

std::vector<double> sample_risk_pool(const Scenario& scenario, const RiskParams& risk_params,
                                     const SynthesisConfig& config, std::size_t pool_size, std::uint64_t seed) {
  config.validate();
  if (pool_size == 0) throw DomainError("sample_risk_pool: pool_size must be >= 1");
  const PerturbationLayout layout = make_layout(scenario, config);
  const SearchScales scales = initial_scales(layout, config, 1);
  Rng rng(seed);
  std::vector<double> pool;
  const std::size_t max_attempts = 20 * pool_size;
  for (std::size_t attempt = 0; attempt < max_attempts && pool.size() < pool_size; ++attempt) {
    std::vector<double> x(layout.per_mode());
    for (std::size_t d = 0; d < x.size(); ++d) {
      x[d] = std::clamp(scales.sigma[d] * rng.normal(), -scales.bound[d], scales.bound[d]);
    }
    const auto h = evaluate_mode(scenario, layout, x, risk_params, config);
    if (h.feasibility.feasible) pool.push_back(h.induced_risk);
  }
  if (pool.size() < pool_size) {
    throw SynthesisError("sample_risk_pool: only " + std::to_string(pool.size()) + " of " +
                         std::to_string(pool_size) + " sampled scenarios were kinematically feasible");
  }
  return pool;
}

json hypothesis_to_json(const MotionHypothesis& h) {
  json agents = json::array();
  for (const auto& a : h.agents) {
    json boxes = json::array();
    for (const auto& b : a.boxes) {
      boxes.push_back({{"center", {b.center.x, b.center.y, b.center.z}},
                       {"size", {b.size.length, b.size.width, b.size.height}},
                       {"yaw", b.yaw}});
    }
    agents.push_back({{"id", a.id},
                      {"class", std::string(to_string(a.cls))},
                      {"size", {a.size.length, a.size.width, a.size.height}},
                      {"states", states_to_json(a.trajectory)},
                      {"boxes", boxes}});
  }
  const auto& f = h.feasibility;
  return {{"induced_risk", h.induced_risk},
          {"risk_profile", h.risk_profile},
          {"feasibility",
           {{"feasible", f.feasible},
            {"max_speed", f.max_speed},
            {"max_accel", f.max_accel},
            {"speed_violations", f.speed_violations},
            {"accel_violations", f.accel_violations}}},
          {"ego", {{"states", states_to_json(h.ego)}}},
          {"agents", agents}};
}

json synthesis_to_json(const Scenario& scenario, const RiskTarget& target, const SynthesisConfig& config,
                       const SynthesisResult& result) {
  json tgt = {{"kind", target.kind == RiskTarget::Kind::Scalar ? "Scalar" : "Profile"}, {"tau", target.tau}};
  if (target.kind == RiskTarget::Kind::Scalar) {
    tgt["scalar"] = target.scalar;
  } else {
    tgt["profile"] = target.profile;
  }
  json hyps = json::array();
  for (std::size_t m = 0; m < result.hypotheses.size(); ++m) {
    json h = hypothesis_to_json(result.hypotheses[m]);
    h["mode"] = m;
    hyps.push_back(std::move(h));
  }
  return {{"scenario_id", scenario.id},
          {"dt", scenario.dt},
          {"num_frames", scenario.num_frames},
          {"target", tgt},
          {"config", synthesis_config_to_json(config)},
          {"loss", result.match.loss},
          {"r_min", result.match.r_min},
          {"r_max", result.match.r_max},
          {"degenerate_spread", result.degenerate_spread},
          {"iterations_run", result.iterations_run},
          {"loss_trace", result.loss_trace},
          {"hypotheses", hyps}};
}

std::vector<MotionHypothesis> hypotheses_from_json(const json& doc) {
  if (!doc.is_object() || !doc.contains("hypotheses") || !doc["hypotheses"].is_array()) {
    throw SchemaError("hypotheses", "missing or not an array");
  }
  const double dt = doc.value("dt", 0.1);
  // Reuse the scenario parser for state lists by wrapping each hypothesis as a scenario.
  std::vector<MotionHypothesis> out;
  const auto& hyps = doc["hypotheses"];
  for (std::size_t m = 0; m < hyps.size(); ++m) {
    const std::string path = "hypotheses[" + std::to_string(m) + "]";
    const json& h = hyps[m];
    if (!h.contains("ego") || !h.contains("agents")) throw SchemaError(path, "needs 'ego' and 'agents'");
    const json& ego_states = h["ego"]["states"];
    json wrapped = {{"meta", {{"id", path}, {"dt", dt}, {"num_frames", ego_states.size()}}},
                    {"ego", h["ego"]},
                    {"agents", json::array()}};
    for (const auto& a : h["agents"]) {
      wrapped["agents"].push_back({{"id", a.value("id", "")}, {"class", a.value("class", "")},
                                   {"size", a.value("size", json::array())}, {"states", a.value("states", json::array())}});
    }
    Scenario sc;
    try {
      sc = scenario_from_json(wrapped);
    } catch (const SchemaError& e) {
      throw SchemaError(path + "." + e.path(), std::string(e.what()).substr(e.path().size() + 2));
    }
    MotionHypothesis hyp;
    hyp.ego = sc.ego;
    hyp.induced_risk = h.value("induced_risk", 0.0);
    hyp.risk_profile = h.value("risk_profile", std::vector<double>{});
    if (h.contains("feasibility")) hyp.feasibility.feasible = h["feasibility"].value("feasible", true);
    for (auto& a : sc.agents) {
      hyp.agents.push_back({a.id, a.cls, a.size, a.trajectory, boxes_from_trajectory(a.trajectory, a.size)});
    }
    out.push_back(std::move(hyp));
  }
  return out;
}

}  // namespace rfg
