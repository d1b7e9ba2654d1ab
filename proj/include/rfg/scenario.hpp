#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "rfg/geometry.hpp"

namespace rfg {

struct TrajectoryState {
  Vec2 position;
  double heading = 0.0;  // radians, (-pi, pi]
  Vec2 velocity;

  KinematicState kinematic() const { return {position, velocity}; }
};

struct Trajectory {
  double dt = 0.1;
  std::vector<TrajectoryState> states;

  std::size_t size() const noexcept { return states.size(); }
};

/// Box size as (length, width, height) in meters.
struct BoxSize {
  double length = 4.5;
  double width = 1.9;
  double height = 1.6;
};

struct Box3D {
  Vec3 center;
  BoxSize size;
  double yaw = 0.0;
};

/// Pinhole camera. Intrinsics are row-major 3×3 (fx 0 cx / 0 fy cy / 0 0 1); extrinsics a
/// row-major 4×4 world-to-camera rigid transform. Camera axes: x right, y down, z forward.
struct CameraModel {
  std::string name;
  std::array<double, 9> intrinsics{};
  std::array<double, 16> extrinsics{};
  int width = 0;
  int height = 0;

  double fx() const { return intrinsics[0]; }
  double fy() const { return intrinsics[4]; }
  double cx() const { return intrinsics[2]; }
  double cy() const { return intrinsics[5]; }

  static CameraModel look_at_yaw(std::string name, Vec3 position, double yaw, double fx, double fy,
                                 int width, int height);
};

struct Projection {
  Vec2 pixel;
  double depth = 0.0;
  bool visible = false;
};

/// World point -> camera pixel. Points at or behind the image plane are invisible; their
/// pixel is still finite.
Projection project_point(const CameraModel& camera, const Vec3& point);

struct AgentTrack {
  std::string id;
  AgentClass cls = AgentClass::Car;
  BoxSize size;
  Trajectory trajectory;
};

struct Scenario {
  std::string id;
  double dt = 0.1;
  std::size_t num_frames = 0;
  Trajectory ego;
  std::vector<AgentTrack> agents;
  std::vector<CameraModel> cameras;
};

/// Straight-line rollout: state k (1-based) sits at p + k·dt·v. The heading follows the
/// velocity direction, or `initial_heading` when the speed is below 1e-9.
Trajectory propagate_constant_velocity(const KinematicState& state, std::size_t steps, double dt,
                                       double initial_heading = 0.0);

/// Checks every scenario invariant; throws SchemaError citing the field path.
void validate_scenario(const Scenario& scenario);

Scenario scenario_from_json(const nlohmann::json& doc);
nlohmann::json scenario_to_json(const Scenario& scenario);
Scenario load_scenario(const std::filesystem::path& path);
/// Canonical form: sorted keys, two-space indent, shortest round-trip float text.
void save_scenario(const Scenario& scenario, const std::filesystem::path& path);
std::string canonical_scenario_text(const Scenario& scenario);

nlohmann::json states_to_json(const Trajectory& trajectory);

}  // namespace rfg
