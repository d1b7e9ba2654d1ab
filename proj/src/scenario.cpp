#include "rfg/scenario.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "rfg/error.hpp"

namespace rfg {

using nlohmann::json;

double normalize_angle(double angle) {
  double a = std::remainder(angle, 2.0 * std::numbers::pi);
  if (a <= -std::numbers::pi) a += 2.0 * std::numbers::pi;
  return a;
}

std::string_view to_string(AgentClass c) {
  switch (c) {
    case AgentClass::Car: return "car";
    case AgentClass::Truck: return "truck";
    case AgentClass::Bus: return "bus";
    case AgentClass::Motorcycle: return "motorcycle";
    case AgentClass::Bicycle: return "bicycle";
    case AgentClass::Pedestrian: return "pedestrian";
    case AgentClass::Other: return "other";
  }
  return "other";
}

std::optional<AgentClass> parse_agent_class(std::string_view name) {
  for (auto c : kAllAgentClasses) {
    if (to_string(c) == name) return c;
  }
  return std::nullopt;
}

CameraModel CameraModel::look_at_yaw(std::string name, Vec3 position, double yaw, double fx, double fy,
                                     int width, int height) {
  CameraModel cam;
  cam.name = std::move(name);
  cam.width = width;
  cam.height = height;
  cam.intrinsics = {fx, 0.0, width / 2.0, 0.0, fy, height / 2.0, 0.0, 0.0, 1.0};
  const double c = std::cos(yaw), s = std::sin(yaw);
  // Rows: camera x (right), y (down), z (forward) expressed in world coordinates.
  const double rot[3][3] = {{s, -c, 0.0}, {0.0, 0.0, -1.0}, {c, s, 0.0}};
  const double p[3] = {position.x, position.y, position.z};
  for (int r = 0; r < 3; ++r) {
    double t = 0.0;
    for (int k = 0; k < 3; ++k) {
      cam.extrinsics[r * 4 + k] = rot[r][k];
      t -= rot[r][k] * p[k];
    }
    cam.extrinsics[r * 4 + 3] = t;
  }
  cam.extrinsics[12] = cam.extrinsics[13] = cam.extrinsics[14] = 0.0;
  cam.extrinsics[15] = 1.0;
  return cam;
}

Projection project_point(const CameraModel& camera, const Vec3& point) {
  const auto& e = camera.extrinsics;
  const double xc = e[0] * point.x + e[1] * point.y + e[2] * point.z + e[3];
  const double yc = e[4] * point.x + e[5] * point.y + e[6] * point.z + e[7];
  const double zc = e[8] * point.x + e[9] * point.y + e[10] * point.z + e[11];

  Projection out;
  out.depth = zc;
  if (zc == 0.0) {
    out.pixel = {camera.cx(), camera.cy()};
    return out;
  }
  out.pixel = {camera.fx() * xc / zc + camera.cx(), camera.fy() * yc / zc + camera.cy()};
  out.visible = zc > 0.0 && out.pixel.x >= 0.0 && out.pixel.x < camera.width && out.pixel.y >= 0.0 &&
                out.pixel.y < camera.height;
  return out;
}

Trajectory propagate_constant_velocity(const KinematicState& state, std::size_t steps, double dt,
                                       double initial_heading) {
  if (steps < 1) throw DomainError("propagate_constant_velocity: steps must be >= 1");
  if (!(dt > 0.0) || !std::isfinite(dt)) throw DomainError("propagate_constant_velocity: dt must be positive");
  const double speed = norm(state.velocity);
  const double heading =
      speed < 1e-9 ? normalize_angle(initial_heading) : std::atan2(state.velocity.y, state.velocity.x);
  Trajectory traj;
  traj.dt = dt;
  traj.states.reserve(steps);
  for (std::size_t k = 1; k <= steps; ++k) {
    const double elapsed = static_cast<double>(k) * dt;
    traj.states.push_back({state.position + elapsed * state.velocity, heading, state.velocity});
  }
  return traj;
}

namespace {

bool finite(Vec2 v) { return std::isfinite(v.x) && std::isfinite(v.y); }

void validate_trajectory(const Trajectory& traj, const std::string& path, std::size_t frames) {
  if (traj.states.size() != frames) {
    throw SchemaError(path + ".states", "length " + std::to_string(traj.states.size()) +
                                            " does not match num_frames " + std::to_string(frames));
  }
  for (std::size_t k = 0; k < traj.states.size(); ++k) {
    const auto& s = traj.states[k];
    if (!finite(s.position) || !finite(s.velocity) || !std::isfinite(s.heading)) {
      throw SchemaError(path + ".states[" + std::to_string(k) + "]", "non-finite value");
    }
  }
}

void validate_camera(const CameraModel& cam, const std::string& path) {
  const auto& k = cam.intrinsics;
  if (!(k[0] > 0.0) || !(k[4] > 0.0)) throw SchemaError(path + ".intrinsics", "fx and fy must be positive");
  if (k[1] != 0.0 || k[3] != 0.0 || k[6] != 0.0 || k[7] != 0.0 || k[8] != 1.0) {
    throw SchemaError(path + ".intrinsics", "expected zero-skew pinhole [fx 0 cx; 0 fy cy; 0 0 1]");
  }
  if (cam.width <= 0 || cam.height <= 0) throw SchemaError(path, "width and height must be positive");
  const auto& e = cam.extrinsics;
  for (double v : e) {
    if (!std::isfinite(v)) throw SchemaError(path + ".extrinsics", "non-finite value");
  }
  if (e[12] != 0.0 || e[13] != 0.0 || e[14] != 0.0 || e[15] != 1.0) {
    throw SchemaError(path + ".extrinsics", "last row must be [0 0 0 1]");
  }
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double d = 0.0;
      for (int c = 0; c < 3; ++c) d += e[i * 4 + c] * e[j * 4 + c];
      if (std::fabs(d - (i == j ? 1.0 : 0.0)) > 1e-6) {
        throw SchemaError(path + ".extrinsics", "rotation block is not orthonormal");
      }
    }
  }
}

}  // namespace

void validate_scenario(const Scenario& sc) {
  if (!(sc.dt > 0.0) || !std::isfinite(sc.dt)) throw SchemaError("meta.dt", "must be positive");
  if (sc.num_frames < 1) throw SchemaError("meta.num_frames", "must be >= 1");
  if (sc.ego.dt != sc.dt) throw SchemaError("ego", "dt differs from meta.dt");
  validate_trajectory(sc.ego, "ego", sc.num_frames);
  std::set<std::string> ids;
  for (std::size_t i = 0; i < sc.agents.size(); ++i) {
    const auto& a = sc.agents[i];
    const std::string path = "agents[" + std::to_string(i) + "]";
    if (a.id.empty()) throw SchemaError(path + ".id", "must be non-empty");
    if (!ids.insert(a.id).second) throw SchemaError(path + ".id", "duplicate agent id '" + a.id + "'");
    if (!(a.size.length > 0.0) || !(a.size.width > 0.0) || !(a.size.height > 0.0)) {
      throw SchemaError(path + ".size", "all components must be positive (agent '" + a.id + "')");
    }
    if (a.trajectory.dt != sc.dt) throw SchemaError(path, "dt differs from meta.dt (agent '" + a.id + "')");
    try {
      validate_trajectory(a.trajectory, path, sc.num_frames);
    } catch (const SchemaError& err) {
      throw SchemaError(err.path(), std::string(err.what()).substr(err.path().size() + 2) + " (agent '" +
                                        a.id + "')");
    }
  }
  for (std::size_t c = 0; c < sc.cameras.size(); ++c) {
    validate_camera(sc.cameras[c], "cameras[" + std::to_string(c) + "]");
  }
}

namespace {

const json& field(const json& obj, const char* key, const std::string& path) {
  if (!obj.is_object()) throw SchemaError(path.empty() ? "<root>" : path, "expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) throw SchemaError(path.empty() ? std::string(key) : path + "." + key, "missing field");
  return *it;
}

double number(const json& v, const std::string& path) {
  if (!v.is_number()) throw SchemaError(path, "expected a number");
  return v.get<double>();
}

std::string string(const json& v, const std::string& path) {
  if (!v.is_string()) throw SchemaError(path, "expected a string");
  return v.get<std::string>();
}

template <std::size_t N>
std::array<double, N> fixed_array(const json& v, const std::string& path) {
  if (!v.is_array() || v.size() != N) throw SchemaError(path, "expected an array of " + std::to_string(N) + " numbers");
  std::array<double, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = number(v[i], path + "[" + std::to_string(i) + "]");
  return out;
}

// Missing velocities are filled by central differences (one-sided at the ends).
Trajectory parse_trajectory(const json& obj, const std::string& path, double dt) {
  const json& states = field(obj, "states", path);
  const std::string spath = path + ".states";
  if (!states.is_array()) throw SchemaError(spath, "expected an array");
  Trajectory traj;
  traj.dt = dt;
  std::vector<bool> has_velocity;
  for (std::size_t k = 0; k < states.size(); ++k) {
    const std::string p = spath + "[" + std::to_string(k) + "]";
    const json& s = states[k];
    TrajectoryState st;
    st.position = {number(field(s, "x", p), p + ".x"), number(field(s, "y", p), p + ".y")};
    st.heading = normalize_angle(number(field(s, "heading", p), p + ".heading"));
    const bool vx = s.contains("vx"), vy = s.contains("vy");
    if (vx != vy) throw SchemaError(p, "vx and vy must be given together");
    if (vx) st.velocity = {number(s["vx"], p + ".vx"), number(s["vy"], p + ".vy")};
    has_velocity.push_back(vx);
    traj.states.push_back(st);
  }
  const std::size_t n = traj.states.size();
  for (std::size_t k = 0; k < n; ++k) {
    if (has_velocity[k] || n < 2) continue;
    const std::size_t lo = k == 0 ? 0 : k - 1;
    const std::size_t hi = k + 1 == n ? k : k + 1;
    traj.states[k].velocity =
        (1.0 / (static_cast<double>(hi - lo) * dt)) * (traj.states[hi].position - traj.states[lo].position);
  }
  return traj;
}

}  // namespace

Scenario scenario_from_json(const json& doc) {
  Scenario sc;
  const json& meta = field(doc, "meta", "");
  sc.id = string(field(meta, "id", "meta"), "meta.id");
  sc.dt = number(field(meta, "dt", "meta"), "meta.dt");
  const json& nf = field(meta, "num_frames", "meta");
  if (!nf.is_number_integer() || nf.get<long long>() < 1) throw SchemaError("meta.num_frames", "expected a positive integer");
  sc.num_frames = nf.get<std::size_t>();

  sc.ego = parse_trajectory(field(doc, "ego", ""), "ego", sc.dt);

  if (doc.contains("agents")) {
    const json& agents = doc["agents"];
    if (!agents.is_array()) throw SchemaError("agents", "expected an array");
    for (std::size_t i = 0; i < agents.size(); ++i) {
      const std::string p = "agents[" + std::to_string(i) + "]";
      AgentTrack a;
      a.id = string(field(agents[i], "id", p), p + ".id");
      const std::string cls = string(field(agents[i], "class", p), p + ".class");
      const auto parsed = parse_agent_class(cls);
      if (!parsed) throw SchemaError(p + ".class", "unknown class '" + cls + "' (agent '" + a.id + "')");
      a.cls = *parsed;
      const auto size = fixed_array<3>(field(agents[i], "size", p), p + ".size");
      a.size = {size[0], size[1], size[2]};
      a.trajectory = parse_trajectory(agents[i], p, sc.dt);
      if (a.trajectory.size() != sc.num_frames) {
        throw SchemaError(p + ".states", "length " + std::to_string(a.trajectory.size()) +
                                             " does not match num_frames " + std::to_string(sc.num_frames) +
                                             " (agent '" + a.id + "')");
      }
      sc.agents.push_back(std::move(a));
    }
  }

  if (doc.contains("cameras")) {
    const json& cams = doc["cameras"];
    if (!cams.is_array()) throw SchemaError("cameras", "expected an array");
    for (std::size_t i = 0; i < cams.size(); ++i) {
      const std::string p = "cameras[" + std::to_string(i) + "]";
      CameraModel cam;
      cam.name = string(field(cams[i], "name", p), p + ".name");
      cam.intrinsics = fixed_array<9>(field(cams[i], "intrinsics", p), p + ".intrinsics");
      cam.extrinsics = fixed_array<16>(field(cams[i], "extrinsics", p), p + ".extrinsics");
      const json& w = field(cams[i], "width", p);
      const json& h = field(cams[i], "height", p);
      if (!w.is_number_integer() || !h.is_number_integer()) throw SchemaError(p, "width/height must be integers");
      cam.width = w.get<int>();
      cam.height = h.get<int>();
      sc.cameras.push_back(std::move(cam));
    }
  }

  validate_scenario(sc);
  return sc;
}

json states_to_json(const Trajectory& trajectory) {
  json states = json::array();
  for (const auto& s : trajectory.states) {
    states.push_back({{"x", s.position.x},
                      {"y", s.position.y},
                      {"heading", s.heading},
                      {"vx", s.velocity.x},
                      {"vy", s.velocity.y}});
  }
  return states;
}

json scenario_to_json(const Scenario& sc) {
  json doc;
  doc["meta"] = {{"id", sc.id}, {"dt", sc.dt}, {"num_frames", sc.num_frames}};
  doc["ego"] = {{"states", states_to_json(sc.ego)}};
  doc["agents"] = json::array();
  for (const auto& a : sc.agents) {
    doc["agents"].push_back({{"id", a.id},
                             {"class", std::string(to_string(a.cls))},
                             {"size", {a.size.length, a.size.width, a.size.height}},
                             {"states", states_to_json(a.trajectory)}});
  }
  doc["cameras"] = json::array();
  for (const auto& c : sc.cameras) {
    doc["cameras"].push_back({{"name", c.name},
                              {"intrinsics", c.intrinsics},
                              {"extrinsics", c.extrinsics},
                              {"width", c.width},
                              {"height", c.height}});
  }
  return doc;
}

std::string canonical_scenario_text(const Scenario& scenario) { return scenario_to_json(scenario).dump(2) + "\n"; }

Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open scenario " + path.string());
  json doc;
  try {
    doc = json::parse(is);
  } catch (const json::parse_error& e) {
    throw SchemaError("<root>", std::string("invalid JSON: ") + e.what());
  }
  return scenario_from_json(doc);
}

void save_scenario(const Scenario& scenario, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << canonical_scenario_text(scenario);
  if (!os) throw IoError("write failed: " + path.string());
}

}  // namespace rfg
