#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <string_view>

namespace rfg {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator-(Vec2 a) { return {-a.x, -a.y}; }
  friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
  friend Vec2 operator*(Vec2 a, double s) { return {s * a.x, s * a.y}; }
  friend bool operator==(Vec2, Vec2) = default;
};

inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
/// z-component of the 3-D cross product of two ground-plane vectors.
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }
inline Vec2 rotate(Vec2 a, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return {c * a.x - s * a.y, s * a.x + c * a.y};
}

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  friend bool operator==(Vec3, Vec3) = default;
};

/// Ground-plane position (m) and velocity (m/s) in the world East-North frame.
struct KinematicState {
  Vec2 position;
  Vec2 velocity;
};

/// Wraps an angle into (-pi, pi].
double normalize_angle(double angle);

enum class AgentClass { Car, Truck, Bus, Motorcycle, Bicycle, Pedestrian, Other };

inline constexpr AgentClass kAllAgentClasses[] = {AgentClass::Car,     AgentClass::Truck,
                                                  AgentClass::Bus,     AgentClass::Motorcycle,
                                                  AgentClass::Bicycle, AgentClass::Pedestrian,
                                                  AgentClass::Other};

std::string_view to_string(AgentClass c);
std::optional<AgentClass> parse_agent_class(std::string_view name);

}  // namespace rfg
