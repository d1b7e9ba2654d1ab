#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "rfg/mining.hpp"
#include "rfg/risk.hpp"
#include "rfg/scenario.hpp"
#include "rfg/tensor.hpp"

namespace rfg {

// ---------------------------------------------------------------------------------------------
// Conditioning kernel

/// Per-element scale and shift produced by an (opaque) risk encoder.
struct FilmParams {
  Tensor gamma;
  Tensor beta;
};

/// gamma ⊙ feature + beta.
Tensor film_modulate(const Tensor& feature, const FilmParams& params);

// ---------------------------------------------------------------------------------------------
// Hypotheses and the min/max matching objective

struct RiskTarget {
  enum class Kind { Scalar, Profile };
  Kind kind = Kind::Scalar;
  double scalar = 0.0;
  std::vector<double> profile;
  double tau = 2.0;

  static RiskTarget scalar_target(double r, double tau = 2.0) { return {Kind::Scalar, r, {}, tau}; }
  static RiskTarget profile_target(std::vector<double> r, double tau = 2.0) {
    return {Kind::Profile, 0.0, std::move(r), tau};
  }
  void validate(std::size_t horizon) const;
};

struct Feasibility {
  bool feasible = true;
  double max_speed = 0.0;  // m/s over all agents and frames
  double max_accel = 0.0;  // m/s²
  std::size_t speed_violations = 0;
  std::size_t accel_violations = 0;
  double violation = 0.0;  // summed excess over both limits
};

struct AgentMotion {
  std::string id;
  AgentClass cls = AgentClass::Car;
  BoxSize size;
  Trajectory trajectory;
  std::vector<Box3D> boxes;
};

struct MotionHypothesis {
  Trajectory ego;
  std::vector<AgentMotion> agents;
  double induced_risk = 0.0;
  std::vector<double> risk_profile;
  Feasibility feasibility;
};

struct RiskMatch {
  double loss = 0.0;
  double r_min = 0.0;
  double r_max = 0.0;
  std::size_t min_index = 0;
  std::size_t max_index = 0;
};

/// lambda_min·|R_min - r*| + lambda_max·|R_max - tau·r*|. For profile targets each term is the
/// mean absolute per-frame deviation of the min/max mode's profile from r*_t (resp. tau·r*_t).
RiskMatch risk_match_loss(std::span<const MotionHypothesis> hypotheses, const RiskTarget& target,
                          double lambda_min, double lambda_max);

/// Center at (x, y, h/2), yaw = heading, constant size.
std::vector<Box3D> boxes_from_trajectory(const Trajectory& trajectory, const BoxSize& size);

// ---------------------------------------------------------------------------------------------
// Search

struct SynthesisConfig {
  std::size_t num_modes = 3;
  /// Knots of the piecewise-linear offset polygon per perturbed trajectory.
  std::size_t control_points = 4;
  double position_sigma = 2.0;   // m, initial sampling scale of control-point offsets
  double speed_sigma = 1.5;      // m/s, initial sampling scale of the along-track speed change
  double max_offset = 8.0;       // m, box bound on control-point offsets
  double max_speed_delta = 5.0;  // m/s, bound on the along-track speed change
  std::size_t iterations = 200;
  std::size_t population = 64;
  double elite_fraction = 0.125;
  /// Refit blend: new = smoothing·elite + (1 - smoothing)·old.
  double smoothing = 0.8;
  double v_max = 25.0;  // m/s
  double a_max = 6.0;   // m/s²
  double lambda_min = 1.0;
  double lambda_max = 1.0;
  ScalarMode risk_mode = ScalarMode::MaxFrame;
  /// Agent ids to perturb; empty means every agent.
  std::vector<std::string> perturb_agents;
  bool perturb_ego = false;
  /// Stop once the best loss falls to this value.
  double tolerance = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

SynthesisConfig synthesis_config_from_json(const nlohmann::json& doc, SynthesisConfig base = {});
nlohmann::json synthesis_config_to_json(const SynthesisConfig& config);

/// Layout of the flat search vector: for each mode, for each perturbed track, `2·control_points`
/// offsets (x, y per knot) followed by one along-track speed change.
struct PerturbationLayout {
  std::size_t num_modes = 0;
  std::size_t control_points = 0;
  std::vector<int> tracks;  // -1 = ego, otherwise agent index

  std::size_t per_track() const { return 2 * control_points + 1; }
  std::size_t per_mode() const { return tracks.size() * per_track(); }
  std::size_t size() const { return num_modes * per_mode(); }
};

PerturbationLayout make_layout(const Scenario& scenario, const SynthesisConfig& config);

/// Displaces `trajectory` by the offset polygon plus an along-track speed change; velocities
/// absorb the time derivative of the displacement. Zero parameters return the input exactly.
Trajectory perturb_trajectory(const Trajectory& trajectory, std::span<const double> track_params,
                              std::size_t control_points);

/// Builds one hypothesis from the parameters of a single mode and evaluates its risk.
MotionHypothesis evaluate_mode(const Scenario& scenario, const PerturbationLayout& layout,
                               std::span<const double> mode_params, const RiskParams& risk_params,
                               const SynthesisConfig& config);

struct SynthesisResult {
  std::vector<MotionHypothesis> hypotheses;  // ascending induced risk
  RiskMatch match;
  std::vector<double> loss_trace;  // best loss after each iteration
  std::size_t iterations_run = 0;
  bool degenerate_spread = false;  // R_max == R_min
  std::vector<double> best_params;
};

/// Cross-entropy search over control-point perturbations minimizing risk_match_loss; the
/// unperturbed scenario is always a candidate. Deterministic for a given config.seed.
SynthesisResult synthesize(const Scenario& scenario, const RiskTarget& target, const RiskParams& risk_params,
                           const SynthesisConfig& config);

/// Scalar risks of `pool_size` feasible single-mode scenarios drawn from the initial sampling
/// distribution (seeded). Used to place targets on a pool-quantile scale.
std::vector<double> sample_risk_pool(const Scenario& scenario, const RiskParams& risk_params,
                                     const SynthesisConfig& config, std::size_t pool_size, std::uint64_t seed);

nlohmann::json hypothesis_to_json(const MotionHypothesis& h);
nlohmann::json synthesis_to_json(const Scenario& scenario, const RiskTarget& target, const SynthesisConfig& config,
                                 const SynthesisResult& result);
/// Parses the `hypotheses` array of a motions document.
std::vector<MotionHypothesis> hypotheses_from_json(const nlohmann::json& doc);

}  // namespace rfg
