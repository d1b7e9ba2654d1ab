#include "rfg/selfcheck.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <numbers>
#include <optional>

#include "rfg/align.hpp"
#include "rfg/error.hpp"
#include "rfg/gradcheck.hpp"
#include "rfg/mask.hpp"
#include "rfg/mining.hpp"
#include "rfg/motion.hpp"
#include "rfg/rado.hpp"
#include "rfg/risk.hpp"

namespace rfg {

namespace {

using Failure = std::optional<std::string>;

constexpr double kGradTol = 1e-6;
constexpr double kFdStep = 1e-5;

std::string fmt(double v) { return format_g9(v); }

KinematicState random_state(Rng& rng, double extent, double speed) {
  return {{rng.uniform(-extent, extent), rng.uniform(-extent, extent)},
          {rng.uniform(-speed, speed), rng.uniform(-speed, speed)}};
}

AgentSnapshot random_agent(Rng& rng, std::size_t idx) {
  AgentSnapshot a;
  a.id = "a" + std::to_string(idx);
  a.class_label = kAllAgentClasses[rng.next_u64() % std::size(kAllAgentClasses)];
  a.state = random_state(rng, 40.0, 15.0);
  return a;
}

// ---------------------------------------------------------------------------------------------
// risk

Failure check_rigid_invariance(Rng& rng) {
  const RiskParams params;
  for (int trial = 0; trial < 1000; ++trial) {
    const KinematicState ego = random_state(rng, 20.0, 15.0);
    std::vector<AgentSnapshot> agents;
    const std::size_t count = 1 + rng.next_u64() % 4;
    for (std::size_t i = 0; i < count; ++i) agents.push_back(random_agent(rng, i));
    const double phi = rng.uniform(-std::numbers::pi, std::numbers::pi);
    const Vec2 shift{rng.uniform(-100.0, 100.0), rng.uniform(-100.0, 100.0)};
    auto move = [&](KinematicState s) {
      return KinematicState{rotate(s.position, phi) + shift, rotate(s.velocity, phi)};
    };
    std::vector<AgentSnapshot> moved = agents;
    for (auto& a : moved) a.state = move(a.state);
    const FrameRisk before = frame_risk(ego, agents, params);
    const FrameRisk after = frame_risk(move(ego), moved, params);
    for (std::size_t i = 0; i < count; ++i) {
      const double a = before.agents[i].risk, b = after.agents[i].risk;
      if (std::abs(a - b) > 1e-9 * std::max(1.0, std::abs(a))) {
        return "trial " + std::to_string(trial) + ": R " + fmt(a) + " became " + fmt(b);
      }
    }
  }
  return std::nullopt;
}

Failure check_distance_monotonicity(Rng& rng) {
  const RiskParams params;
  for (int trial = 0; trial < 1000; ++trial) {
    const KinematicState ego = random_state(rng, 20.0, 15.0);
    AgentSnapshot agent = random_agent(rng, 0);
    Vec2 r = agent.state.position - ego.position;
    if (norm(r) < 0.5) r = r + Vec2{1.0, 0.0};
    agent.state.position = ego.position + r;
    AgentSnapshot far = agent;
    far.state.position = ego.position + rng.uniform(1.01, 5.0) * r;
    const auto near_b = agent_risk(ego, agent, params), far_b = agent_risk(ego, far, params);
    if (near_b.regime != far_b.regime) return "trial " + std::to_string(trial) + ": regime changed under radial scaling";
    if (!(far_b.risk < near_b.risk)) {
      return "trial " + std::to_string(trial) + ": R " + fmt(near_b.risk) + " -> " + fmt(far_b.risk) + " moving outward";
    }
  }
  return std::nullopt;
}

Failure check_closing_speed_monotonicity(Rng& rng) {
  const RiskParams params;
  for (int trial = 0; trial < 1000; ++trial) {
    // Velocities along the line of sight keep the lateral factor at 1.
    const double ang = rng.uniform(-std::numbers::pi, std::numbers::pi);
    const Vec2 u{std::cos(ang), std::sin(ang)};
    const double dist = rng.uniform(1.0, 50.0);
    const double ve = rng.uniform(0.5, 15.0), vi = rng.uniform(0.5, 15.0);
    const KinematicState ego{{0.0, 0.0}, ve * u};
    AgentSnapshot agent{"a", AgentClass::Car, {dist * u, -vi * u}};
    AgentSnapshot faster = agent;
    faster.state.velocity = -(vi + rng.uniform(0.1, 5.0)) * u;
    const auto b0 = agent_risk(ego, agent, params), b1 = agent_risk(ego, faster, params);
    if (!(b1.closing_speed > b0.closing_speed) || b0.regime != b1.regime) {
      return "trial " + std::to_string(trial) + ": construction did not raise closing speed";
    }
    if (!(b1.risk > b0.risk)) {
      return "trial " + std::to_string(trial) + ": s " + fmt(b0.closing_speed) + " -> " + fmt(b1.closing_speed) +
             " but R " + fmt(b0.risk) + " -> " + fmt(b1.risk);
    }
  }
  return std::nullopt;
}

Failure check_lateral_bound(Rng& rng) {
  const RiskParams params;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto b = agent_risk(random_state(rng, 20.0, 15.0), random_agent(rng, 0), params);
    if (!(b.beta_lateral > 0.0 && b.beta_lateral <= 1.0)) return "beta " + fmt(b.beta_lateral) + " outside (0, 1]";
  }
  return std::nullopt;
}

Failure check_aggregation(Rng& rng) {
  RiskParams sum_p, max_p;
  max_p.aggregation = Aggregation::Max;
  for (int trial = 0; trial < 500; ++trial) {
    const KinematicState ego = random_state(rng, 20.0, 15.0);
    std::vector<AgentSnapshot> agents;
    for (std::size_t i = 0; i < 1 + rng.next_u64() % 5; ++i) agents.push_back(random_agent(rng, i));
    const double s = frame_risk(ego, agents, sum_p).value, m = frame_risk(ego, agents, max_p).value;
    if (m > s) return "max " + fmt(m) + " exceeds sum " + fmt(s);
  }
  return std::nullopt;
}

Failure check_risk_fixtures(Rng&) {
  const RiskParams params;
  const double head_on =
      agent_risk({{0.0, 0.0}, {10.0, 0.0}}, {"a", AgentClass::Car, {{20.0, 0.0}, {-10.0, 0.0}}}, params).risk;
  const double lateral =
      agent_risk({{0.0, 0.0}, {0.0, 0.0}}, {"a", AgentClass::Car, {{10.0, 0.0}, {0.0, 5.0}}}, params).risk;
  if (std::abs(head_on - 0.369453) > 1e-6) return "head-on R = " + fmt(head_on);
  if (std::abs(lateral - 0.0036788) > 1e-6) return "lateral R = " + fmt(lateral);
  return std::nullopt;
}

// ---------------------------------------------------------------------------------------------
// mining

Failure check_quantiles(Rng& rng) {
  std::vector<double> pool;
  for (int i = 1; i <= 100; ++i) pool.push_back(i);
  const double q = risk_quantiles(pool, std::vector<double>{0.95})[0];
  if (std::abs(q - 95.05) > 1e-12) return "pool 1..100 at 0.95 gave " + fmt(q);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> p(1 + rng.next_u64() % 50);
    for (auto& v : p) v = rng.uniform(0.0, 10.0);
    const std::vector<double> probs{0.0, 0.2, 0.5, 0.8, 0.95, 1.0};
    const auto qs = risk_quantiles(p, probs);
    const auto [lo, hi] = std::minmax_element(p.begin(), p.end());
    for (std::size_t k = 0; k < qs.size(); ++k) {
      if (qs[k] < *lo || qs[k] > *hi) return "quantile outside pool range";
      if (k > 0 && qs[k] < qs[k - 1]) return "quantiles not monotone in p";
    }
  }
  return std::nullopt;
}

Failure check_event_partition(Rng& rng) {
  for (int trial = 0; trial < 500; ++trial) {
    RiskProfile prof;
    prof.values.resize(1 + rng.next_u64() % 40);
    for (auto& v : prof.values) v = rng.uniform(0.0, 1.0);
    prof.per_frame_top_agent.assign(prof.values.size(), {});
    const double thr = rng.uniform(0.0, 1.0);
    const auto events = detect_events(prof, thr, 1 + rng.next_u64() % 4);
    std::vector<int> covered(prof.values.size(), 0);
    for (const auto& e : events) {
      for (std::size_t f = e.start_frame; f <= e.end_frame; ++f) ++covered[f];
    }
    for (std::size_t f = 0; f < prof.values.size(); ++f) {
      if (covered[f] != (prof.values[f] >= thr ? 1 : 0)) {
        return "trial " + std::to_string(trial) + ": frame " + std::to_string(f) + " covered " +
               std::to_string(covered[f]) + " times";
      }
    }
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------------------------
// synthesis

Scenario crossing_scenario() {
  Scenario sc;
  sc.id = "selfcheck_crossing";
  sc.dt = 0.5;
  sc.num_frames = 8;
  sc.ego = propagate_constant_velocity({{0.0, -0.5 * 8.0}, {0.0, 8.0}}, 7, sc.dt, std::numbers::pi / 2);
  sc.ego.states.insert(sc.ego.states.begin(), {{0.0, -4.0}, std::numbers::pi / 2, {0.0, 8.0}});
  AgentTrack car{"car", AgentClass::Car, {}, {}};
  car.trajectory = propagate_constant_velocity({{-25.0, 20.0}, {8.0, 0.0}}, 7, sc.dt);
  car.trajectory.states.insert(car.trajectory.states.begin(), {{-25.0, 20.0}, 0.0, {8.0, 0.0}});
  sc.agents.push_back(car);
  return sc;
}

Failure check_synthesis(Rng&) {
  const Scenario sc = crossing_scenario();
  const RiskParams params;
  SynthesisConfig cfg;
  cfg.num_modes = 2;
  cfg.iterations = 25;
  cfg.population = 24;
  cfg.seed = 11;
  const double base = scenario_scalar_risk(risk_profile(sc, params).values(), cfg.risk_mode);
  const SynthesisResult res = synthesize(sc, RiskTarget::scalar_target(1.5 * base), params, cfg);
  for (std::size_t i = 1; i < res.loss_trace.size(); ++i) {
    if (res.loss_trace[i] > res.loss_trace[i - 1]) return "loss trace increases at iteration " + std::to_string(i);
  }
  if (res.match.r_max < res.match.r_min) return "R_max below R_min";
  for (const auto& h : res.hypotheses) {
    Scenario re = sc;
    re.ego = h.ego;
    for (std::size_t i = 0; i < re.agents.size(); ++i) re.agents[i].trajectory = h.agents[i].trajectory;
    const double r = scenario_scalar_risk(risk_profile(re, params).values(), cfg.risk_mode);
    if (std::abs(r - h.induced_risk) > 1e-12) return "stored induced risk " + fmt(h.induced_risk) + " vs recomputed " + fmt(r);
  }
  const SynthesisResult again = synthesize(sc, RiskTarget::scalar_target(1.5 * base), params, cfg);
  if (again.best_params != res.best_params) return "repeat run with the same seed differs";
  return std::nullopt;
}

// ---------------------------------------------------------------------------------------------
// masks

Tensor random_latent(Rng& rng, Shape shape) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.normal();
  return t;
}

Failure check_motion_mask(Rng& rng) {
  const BlobParams bp;
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor lat = random_latent(rng, {2, 2, 3, 5, 6, 7});
    const MaskVolume m = motion_mask(lat, bp);
    if (min_value(m.data) < 0.0 || max_value(m.data) > 1.0) return "motion mask outside [0, 1]";
    Tensor shifted = lat;
    for (auto& v : shifted.data()) v += 3.25;
    if (max_abs_diff(motion_mask(shifted, bp).data, m.data) > 1e-12) return "constant shift changed the motion mask";
  }
  const Tensor still({1, 2, 3, 4, 5, 5}, 0.7);
  if (max_value(motion_mask(still, bp).data) != 0.0) return "static latent gave a nonzero motion mask";
  return std::nullopt;
}

CameraModel camera_toward(const Vec3& pos, const Vec3& target, double fx) {
  const double yaw = std::atan2(target.y - pos.y, target.x - pos.x);
  return CameraModel::look_at_yaw("cam", pos, yaw, fx, fx, 1600, 900);
}

Failure check_one_sigma(Rng&) {
  const CameraModel cam = camera_toward({0.0, 0.0, 0.0}, {10.0, 0.0, 0.0}, 800.0);
  // Grid equals the camera resolution scaled by 1/25; the principal point lands on (32, 18).
  BlobParams bp;
  bp.sigma_w = 1.5;
  bp.sigma_h = 1.5;
  const Vec3 p{10.0, 0.0, 0.0};
  const Tensor img = rasterize_points(cam, std::span<const Vec3>(&p, 1), bp, 36, 64);
  const double v = img.at({18, static_cast<std::size_t>(32)});
  if (std::abs(v - 1.0) > 1e-12) return "center value " + fmt(v);
  BlobParams unit;
  unit.sigma_w = unit.sigma_h = 1.0;
  const Tensor img1 = rasterize_points(cam, std::span<const Vec3>(&p, 1), unit, 36, 64);
  const double off = img1.at({18, 33});
  if (std::abs(off - 0.6065306597) > 1e-9) return "one-sigma value " + fmt(off);
  return std::nullopt;
}

Failure check_multiview(Rng& rng) {
  const BlobParams bp;
  const std::size_t H = 36, W = 64;
  int pairs = 0, attempts = 0;
  while (pairs < 100) {
    if (++attempts > 10000) return "could not draw visible camera pairs";
    const Vec3 p{rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0), rng.uniform(0.0, 2.0)};
    std::vector<CameraModel> cams;
    for (int k = 0; k < 2; ++k) {
      const double a = rng.uniform(-std::numbers::pi, std::numbers::pi), d = rng.uniform(8.0, 30.0);
      const Vec3 pos{p.x + d * std::cos(a), p.y + d * std::sin(a), rng.uniform(1.0, 2.0)};
      const Vec3 aim{p.x + rng.uniform(-2.0, 2.0), p.y + rng.uniform(-2.0, 2.0), 0.0};
      cams.push_back(camera_toward(pos, aim, 800.0));
    }
    const Projection a = project_point(cams[0], p), b = project_point(cams[1], p);
    if (!a.visible || !b.visible) continue;
    ++pairs;
    for (int k = 0; k < 2; ++k) {
      const Projection pr = k == 0 ? a : b;
      const Tensor img = rasterize_points(cams[k], std::span<const Vec3>(&p, 1), bp, H, W);
      const double ux = pr.pixel.x * W / cams[k].width, uy = pr.pixel.y * H / cams[k].height;
      // The discrete peak sits at the grid pixel nearest the projection (when it is inside the grid).
      const double px = std::clamp(std::round(ux), 0.0, static_cast<double>(W - 1));
      const double py = std::clamp(std::round(uy), 0.0, static_cast<double>(H - 1));
      const double peak = img.at({static_cast<std::size_t>(py), static_cast<std::size_t>(px)});
      if (std::abs(peak - max_value(img)) > 1e-12) {
        return "pair " + std::to_string(pairs) + ": camera " + std::to_string(k) + " peak not at projection";
      }
    }
  }
  return std::nullopt;
}

Failure check_fused_and_range(Rng& rng) {
  Scenario sc = crossing_scenario();
  sc.cameras.push_back(camera_toward({0.0, -20.0, 1.5}, {0.0, 10.0, 0.0}, 800.0));
  sc.cameras.push_back(camera_toward({-20.0, 0.0, 1.5}, {0.0, 15.0, 0.0}, 800.0));
  std::vector<AgentMotion> motions;
  for (const auto& a : sc.agents) motions.push_back({a.id, a.cls, a.size, a.trajectory, {}});
  const std::vector<std::vector<AgentMotion>> batch{motions};
  const BlobParams bp;
  const MaskVolume geo = geometric_mask(sc, batch, bp, 18, 32);
  const MaskVolume mot = motion_mask(random_latent(rng, {1, 2, 2, sc.num_frames, 18, 32}), bp);
  const MaskVolume fused = fuse_masks(geo, mot);
  for (std::size_t i = 0; i < fused.data.size(); ++i) {
    const double f = fused.data[i];
    if (f < 0.0 || f > 1.0 || geo.data[i] < 0.0 || geo.data[i] > 1.0) return "mask value outside [0, 1]";
    if (f > std::min(geo.data[i], mot.data[i]) + 1e-15) return "fused value exceeds min of components";
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------------------------
// alignment

Failure check_alignment(Rng& rng, bool corrupt) {
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor g = random_latent(rng, {2, 4, 8});
    const Tensor r = random_latent(rng, {2, 8});
    const AlignmentResult res = alignment_loss(g, r);
    if (res.loss < 0.0 || res.loss > 2.0) return "loss " + fmt(res.loss) + " outside [0, 2]";
    const double scaled = alignment_loss(scale(g, 3.7), scale(r, 0.2)).loss;
    if (std::abs(scaled - res.loss) > 1e-12) return "loss not scale invariant";
    std::vector<double> ag = res.grad_tokens.values();
    if (corrupt) ag[0] += 1e-3 * (1.0 + std::abs(ag[0]));
    const auto ng = central_difference(
        [&](std::span<const double> x) { return alignment_loss(Tensor(g.shape(), {x.begin(), x.end()}), r).loss; },
        g.values(), kFdStep);
    const auto nr = central_difference(
        [&](std::span<const double> x) { return alignment_loss(g, Tensor(r.shape(), {x.begin(), x.end()})).loss; },
        r.values(), kFdStep);
    const double eg = gradient_relative_error(ag, ng), er = gradient_relative_error(res.grad_appearance.values(), nr);
    if (eg > kGradTol || er > kGradTol) {
      return "instance " + std::to_string(trial) + ": relative error g " + fmt(eg) + ", r " + fmt(er);
    }
  }
  return std::nullopt;
}

Failure check_dropout(Rng& rng) {
  CompressionParams p = CompressionParams::random(6, 8, 4, rng);
  p.p_drop = 0.1;
  const Tensor feats = project_features(random_latent(rng, {10000, 3, 6}), p);
  const auto out = cross_attention(feats, p, rng, true);
  const double rate = static_cast<double>(std::count(out.dropped.begin(), out.dropped.end(), true)) / 10000.0;
  if (std::abs(rate - 0.1) > 0.01) return "drop rate " + fmt(rate);
  Rng untouched(5);
  const auto inf = cross_attention(feats, p, untouched, false);
  if (std::count(inf.dropped.begin(), inf.dropped.end(), true) != 0) return "inference dropped samples";
  for (std::size_t row = 0; row < inf.weights.size() / 3; ++row) {
    const double s = inf.weights[3 * row] + inf.weights[3 * row + 1] + inf.weights[3 * row + 2];
    if (std::abs(s - 1.0) > 1e-12) return "attention row does not sum to 1";
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------------------------
// losses

struct LossInstance {
  ToyVelocityModel model;
  ToyVelocityModel reference;
  FlowSample sample;
  Tensor mask;
  PreferencePair pair;
};

LossInstance random_instance(Rng& rng, ModelVariant variant) {
  LossInstance in;
  in.model = ToyVelocityModel::create(variant, 16, 8, 32, rng, 0.3);
  in.reference = ToyVelocityModel::create(variant, 16, 8, 32, rng, 0.3);
  in.sample = {random_latent(rng, {16}), random_latent(rng, {16}), random_latent(rng, {8}), rng.uniform(0.02, 0.98)};
  in.mask = Tensor({16});
  for (auto& v : in.mask.data()) v = rng.uniform() < 0.3 ? 0.0 : rng.uniform();
  in.mask[0] = 1.0;
  const double tw = rng.uniform(0.0, 0.5);
  in.pair = make_pair(in.sample, in.mask, tw, rng.uniform(tw + 0.05, 1.0));
  return in;
}

using LossFn = std::function<LossTerm(const ToyVelocityModel&, const LossInstance&)>;

Failure gradient_suite(Rng& rng, ModelVariant variant, const LossFn& loss, bool corrupt) {
  for (int trial = 0; trial < 50; ++trial) {
    const LossInstance in = random_instance(rng, variant);
    std::vector<double> analytic = loss(in.model, in).grad;
    if (corrupt) analytic[0] += 1e-3 * (1.0 + std::abs(analytic[0]));
    ToyVelocityModel probe = in.model;
    const auto numeric = central_difference(
        [&](std::span<const double> theta) {
          probe.assign(theta);
          return loss(probe, in).value;
        },
        in.model.flatten(), kFdStep);
    const double err = gradient_relative_error(analytic, numeric);
    if (err > kGradTol) return "instance " + std::to_string(trial) + ": relative error " + fmt(err);
  }
  return std::nullopt;
}

LossTerm sft_of(const ToyVelocityModel& m, const LossInstance& in) { return sft_loss(m, in.sample, in.mask, in.sample.t); }
LossTerm dpo_of(const ToyVelocityModel& m, const LossInstance& in) {
  return ra_dpo_loss(m, in.reference, in.pair, in.sample, 0.7, noise_weight(NoiseWeight::SnrProxy, in.pair.t_l)).loss;
}

Failure check_self_reference(Rng& rng) {
  for (auto variant : {ModelVariant::Linear, ModelVariant::OneHidden}) {
    for (int trial = 0; trial < 50; ++trial) {
      const LossInstance in = random_instance(rng, variant);
      const double w = rng.uniform(0.1, 2.0);
      const double v = ra_dpo_loss(in.model, in.model, in.pair, in.sample, 0.1, w).loss.value;
      if (std::abs(v - w * std::numbers::ln2) > 1e-12) return "θ = ref gave " + fmt(v) + ", expected " + fmt(w * std::numbers::ln2);
    }
  }
  return std::nullopt;
}

Failure check_dpo_direction(Rng& rng) {
  // Step against the winner-residual gradient with the loser-residual gradient projected out:
  // FM_θ(y_w) falls to first order while FM_θ(y_l) moves only to second order.
  for (int trial = 0; trial < 50; ++trial) {
    const LossInstance in = random_instance(rng, ModelVariant::Linear);
    const auto& s = in.sample;
    const LossTerm fw = masked_fm(in.model, in.pair.z_w, in.pair.t_w, s.cond, s.z0, s.noise, in.mask);
    const LossTerm fl = masked_fm(in.model, in.pair.z_l, in.pair.t_l, s.cond, s.z0, s.noise, in.mask);
    double wl = 0.0, ll = 0.0;
    for (std::size_t k = 0; k < fw.grad.size(); ++k) {
      wl += fw.grad[k] * fl.grad[k];
      ll += fl.grad[k] * fl.grad[k];
    }
    std::vector<double> dir(fw.grad.size());
    double dn = 0.0;
    for (std::size_t k = 0; k < dir.size(); ++k) {
      dir[k] = fw.grad[k] - (ll > 0.0 ? wl / ll : 0.0) * fl.grad[k];
      dn += dir[k] * dir[k];
    }
    if (dn == 0.0) continue;
    const double base = ra_dpo_loss(in.model, in.reference, in.pair, s, 0.1, 1.0).loss.value;
    std::vector<double> theta = in.model.flatten();
    for (std::size_t k = 0; k < theta.size(); ++k) theta[k] -= 1e-4 * dir[k] / std::sqrt(dn);
    ToyVelocityModel stepped = in.model;
    stepped.assign(theta);
    const DpoResult after = ra_dpo_loss(stepped, in.reference, in.pair, s, 0.1, 1.0);
    if (!(after.fm_w < fw.value)) return "construction did not lower the winner residual";
    if (!(after.loss.value < base)) {
      return "instance " + std::to_string(trial) + ": loss " + fmt(base) + " -> " + fmt(after.loss.value);
    }
  }
  return std::nullopt;
}

Failure check_mask_locality(Rng& rng) {
  for (int trial = 0; trial < 50; ++trial) {
    LossInstance in = random_instance(rng, ModelVariant::Linear);
    for (auto& v : in.mask.data()) v = v > 0.5 ? 1.0 : 0.0;
    in.mask[0] = 1.0;
    in.mask[1] = 0.0;
    const double before = sft_of(in.model, in).value;
    ToyVelocityModel moved = in.model;
    for (std::size_t i = 0; i < 16; ++i) {
      if (in.mask[i] == 0.0) moved.bias[i] += rng.uniform(-5.0, 5.0);
    }
    if (sft_of(moved, in).value != before) return "output outside the mask changed the loss";
  }
  return std::nullopt;
}

Failure check_total_and_ema(Rng& rng) {
  for (int trial = 0; trial < 100; ++trial) {
    LossTerm a{rng.normal(), {rng.normal(), rng.normal()}}, b{rng.normal(), {rng.normal(), rng.normal()}},
        c{rng.normal(), {}};
    const LossWeights w{rng.uniform(), rng.uniform(), rng.uniform()};
    const LossBundle bundle = total_loss(a, b, c, w);
    const double expect = w.sft * a.value + w.ra * b.value + w.align * c.value;
    if (std::abs(bundle.total - expect) > 1e-12) return "total is not the weighted sum";
  }
  Rng local(1);
  ToyVelocityModel ref = ToyVelocityModel::create(ModelVariant::Linear, 4, 2, 0, local);
  ToyVelocityModel model = ref;
  ref.assign(std::vector<double>(ref.num_params(), 0.0));
  model.assign(std::vector<double>(model.num_params(), 1.0));
  for (int k = 0; k < 10; ++k) ema_update(ref, model, 0.9999);
  const double expect = 1.0 - std::pow(0.9999, 10);
  for (double v : ref.flatten()) {
    if (std::abs(v - expect) > 1e-15) return "EMA recurrence gave " + fmt(v);
  }
  return std::nullopt;
}

}  // namespace

std::vector<CheckOutcome> run_selfcheck(const SelfcheckOptions& options) {
  struct Check {
    const char* name;
    std::function<Failure(Rng&)> run;
  };
  const bool bad = options.corrupt_gradient;
  const std::vector<Check> checks = {
      {"risk.analytic_fixtures", check_risk_fixtures},
      {"risk.rigid_transform_invariance", check_rigid_invariance},
      {"risk.distance_monotonicity", check_distance_monotonicity},
      {"risk.closing_speed_monotonicity", check_closing_speed_monotonicity},
      {"risk.lateral_bound", check_lateral_bound},
      {"risk.max_le_sum", check_aggregation},
      {"mining.quantiles", check_quantiles},
      {"mining.event_partition", check_event_partition},
      {"synthesis.monotone_and_consistent", check_synthesis},
      {"mask.motion", check_motion_mask},
      {"mask.one_sigma", check_one_sigma},
      {"mask.multiview_consistency", check_multiview},
      {"mask.fused_le_min", check_fused_and_range},
      {"align.gradient", [bad](Rng& r) { return check_alignment(r, bad); }},
      {"align.dropout", check_dropout},
      {"rado.gradient.sft.linear", [bad](Rng& r) { return gradient_suite(r, ModelVariant::Linear, sft_of, bad); }},
      {"rado.gradient.sft.one_hidden", [bad](Rng& r) { return gradient_suite(r, ModelVariant::OneHidden, sft_of, bad); }},
      {"rado.gradient.ra_dpo.linear", [bad](Rng& r) { return gradient_suite(r, ModelVariant::Linear, dpo_of, bad); }},
      {"rado.gradient.ra_dpo.one_hidden",
       [bad](Rng& r) { return gradient_suite(r, ModelVariant::OneHidden, dpo_of, bad); }},
      {"rado.self_reference", check_self_reference},
      {"rado.dpo_direction", check_dpo_direction},
      {"rado.mask_locality", check_mask_locality},
      {"rado.total_and_ema", check_total_and_ema},
  };

  std::vector<CheckOutcome> out;
  for (std::size_t i = 0; i < checks.size(); ++i) {
    Rng rng = Rng(options.seed).derive(i);
    const auto t0 = std::chrono::steady_clock::now();
    CheckOutcome o{checks[i].name, false, "", 0.0};
    try {
      const Failure f = checks[i].run(rng);
      o.passed = !f.has_value();
      if (f) o.detail = *f;
    } catch (const std::exception& e) {
      o.detail = std::string("exception: ") + e.what();
    }
    o.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.push_back(std::move(o));
  }
  return out;
}

}  // namespace rfg
