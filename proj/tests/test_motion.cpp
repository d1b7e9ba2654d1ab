#include <algorithm>
#include <cmath>
#include <numbers>

#include "doctest.h"
#include "rfg/error.hpp"
#include "rfg/motion.hpp"
#include "rfg/rng.hpp"

using namespace rfg;

namespace {

// Ego heading east at 5 m/s, one car coming the other way in the same lane.
Scenario head_on(std::size_t frames = 10, double dt = 0.2) {
  Scenario sc;
  sc.id = "head_on";
  sc.dt = dt;
  sc.num_frames = frames;
  sc.ego = propagate_constant_velocity({{-5.0 * dt, 0}, {5, 0}}, frames, dt);
  AgentTrack a;
  a.id = "oncoming";
  a.cls = AgentClass::Car;
  a.trajectory = propagate_constant_velocity({{40.0 + 5.0 * dt, 0}, {-5, 0}}, frames, dt);
  sc.agents.push_back(a);
  return sc;
}

MotionHypothesis with_risk(double r) {
  MotionHypothesis h;
  h.induced_risk = r;
  return h;
}

double scenario_risk_of(const Scenario& base, const MotionHypothesis& h, const RiskParams& rp, ScalarMode mode) {
  Scenario sc = base;
  sc.ego = h.ego;
  for (std::size_t i = 0; i < sc.agents.size(); ++i) sc.agents[i].trajectory = h.agents[i].trajectory;
  return scenario_scalar_risk(risk_profile(sc, rp).values(), mode);
}

}  // namespace

TEST_CASE("film_modulate examples") {
  Rng rng(41);
  Tensor f({2, 3});
  for (auto& v : f.data()) v = rng.uniform(-2, 2);
  CHECK(film_modulate(f, {Tensor::full({2, 3}, 1.0), Tensor::zeros({2, 3})}) == f);
  Tensor beta({2, 3});
  for (auto& v : beta.data()) v = rng.uniform(-2, 2);
  CHECK(film_modulate(f, {Tensor::zeros({2, 3}), beta}) == beta);

  Tensor gamma({2, 3});
  for (auto& v : gamma.data()) v = rng.uniform(-2, 2);
  const Tensor out = film_modulate(f, {gamma, beta});
  for (std::size_t i = 0; i < 6; ++i) CHECK(out[i] == gamma[i] * f[i] + beta[i]);

  CHECK_THROWS_AS(film_modulate(f, {Tensor({3, 2}), Tensor({2, 3})}), DimensionError);
}

TEST_CASE("film with a positive scalar gain keeps the argmax") {
  Rng rng(42);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor f({4, 5});
    for (auto& v : f.data()) v = rng.uniform(-3, 3);
    const double g = rng.uniform(0.01, 5);
    const Tensor out = film_modulate(f, {Tensor::full({4, 5}, g), Tensor::zeros({4, 5})});
    const auto argmax = [](const Tensor& t) {
      return std::max_element(t.data().begin(), t.data().end()) - t.data().begin();
    };
    CHECK(argmax(out) == argmax(f));
  }
}

TEST_CASE("risk_match_loss examples") {
  const std::vector<MotionHypothesis> exact{with_risk(1.5), with_risk(3.0)};
  CHECK(risk_match_loss(exact, RiskTarget::scalar_target(1.5, 2.0), 1, 1).loss == 0.0);

  const std::vector<MotionHypothesis> off{with_risk(4), with_risk(2)};
  const RiskMatch m = risk_match_loss(off, RiskTarget::scalar_target(1.0, 2.0), 1, 1);
  CHECK(m.loss == 3.0);
  CHECK(m.r_min == 2.0);
  CHECK(m.r_max == 4.0);
  CHECK(m.min_index == 1);
  CHECK(m.max_index == 0);

  CHECK_THROWS_AS(risk_match_loss(std::vector<MotionHypothesis>{with_risk(1)}, RiskTarget::scalar_target(1), 1, 1),
                  DomainError);

  Rng rng(43);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<MotionHypothesis> hs;
    double lo = 1e300, hi = -1e300;
    for (int i = 0; i < 5; ++i) {
      const double r = rng.uniform(0, 3);
      hs.push_back(with_risk(r));
      lo = std::min(lo, r);
      hi = std::max(hi, r);
    }
    const double rs = rng.uniform(0, 2), tau = rng.uniform(1.1, 3), lmin = rng.uniform(0, 2), lmax = rng.uniform(0, 2);
    const RiskMatch got = risk_match_loss(hs, RiskTarget::scalar_target(rs, tau), lmin, lmax);
    CHECK(got.loss == lmin * std::abs(lo - rs) + lmax * std::abs(hi - tau * rs));
  }
}

TEST_CASE("profile targets use the mean absolute per-frame deviation") {
  MotionHypothesis a = with_risk(1.0), b = with_risk(2.0);
  a.risk_profile = {1.0, 0.5, 0.0};
  b.risk_profile = {2.0, 1.0, 0.0};
  const std::vector<MotionHypothesis> hs{a, b};
  const RiskMatch m = risk_match_loss(hs, RiskTarget::profile_target({0.5, 0.5, 0.5}, 2.0), 1, 1);
  const double expect_min = (0.5 + 0.0 + 0.5) / 3, expect_max = (1.0 + 0.0 + 1.0) / 3;
  CHECK(std::abs(m.loss - (expect_min + expect_max)) < 1e-15);
  CHECK_THROWS(RiskTarget::profile_target({0.5, 0.5}).validate(3));
  CHECK_THROWS(RiskTarget::scalar_target(1.0, 1.0).validate(3));
}

TEST_CASE("boxes_from_trajectory examples") {
  const BoxSize size{4.0, 2.0, 1.6};
  const Trajectory still = propagate_constant_velocity({{1, 2}, {0, 0}}, 3, 0.1, 0.3);
  const auto sb = boxes_from_trajectory(still, size);
  for (const auto& b : sb) {
    CHECK(b.center == sb.front().center);
    CHECK(b.yaw == 0.3);
  }
  const auto up = boxes_from_trajectory(propagate_constant_velocity({{0, 0}, {0, 2}}, 2, 0.1), size);
  CHECK(up[0].yaw == std::numbers::pi / 2);

  const Trajectory line = propagate_constant_velocity({{0, 0}, {3, 1}}, 4, 0.25);
  const auto boxes = boxes_from_trajectory(line, size);
  REQUIRE(boxes.size() == 4);
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(boxes[k].center == Vec3{line.states[k].position.x, line.states[k].position.y, 0.8});
    CHECK(boxes[k].yaw == line.states[k].heading);
    CHECK(boxes[k].size.length == 4.0);
  }
}

TEST_CASE("zero perturbation returns the trajectory unchanged") {
  const Trajectory t = head_on().agents[0].trajectory;
  const std::vector<double> zeros(2 * 3 + 1, 0.0);
  const Trajectory same = perturb_trajectory(t, zeros, 3);
  for (std::size_t k = 0; k < t.size(); ++k) {
    CHECK(same.states[k].position == t.states[k].position);
    CHECK(same.states[k].velocity == t.states[k].velocity);
  }
  CHECK_THROWS_AS(perturb_trajectory(t, std::vector<double>(3, 0.0), 3), DimensionError);
}

TEST_CASE("synthesis config validation") {
  SynthesisConfig c;
  c.num_modes = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = SynthesisConfig{};
  c.v_max = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(synthesis_config_from_json({{"modes", 3}}), ConfigError);
  const SynthesisConfig back = synthesis_config_from_json(synthesis_config_to_json(SynthesisConfig{}));
  CHECK(synthesis_config_to_json(back) == synthesis_config_to_json(SynthesisConfig{}));
}

TEST_CASE("target equal to the baseline keeps the identity as the min mode") {
  const Scenario sc = head_on();
  const RiskParams rp;
  const double base = scenario_scalar_risk(risk_profile(sc, rp).values(), ScalarMode::MaxFrame);
  SynthesisConfig cfg;
  cfg.iterations = 40;
  cfg.population = 32;
  cfg.seed = 1;
  const RiskTarget target = RiskTarget::scalar_target(base, 2.0);
  const SynthesisResult res = synthesize(sc, target, rp, cfg);

  const std::vector<MotionHypothesis> identity(cfg.num_modes, evaluate_mode(sc, make_layout(sc, cfg),
                                                                            std::vector<double>(make_layout(sc, cfg).per_mode(), 0.0), rp, cfg));
  const double identity_loss = risk_match_loss(identity, target, 1, 1).loss;
  CHECK(res.match.loss <= identity_loss);
  CHECK(std::abs(res.match.r_min - base) <= 0.05 * base);
}

TEST_CASE("search is at least as good as brute force over a 5x5 offset grid") {
  const Scenario sc = head_on();
  const RiskParams rp;
  SynthesisConfig cfg;
  cfg.num_modes = 2;
  cfg.control_points = 1;
  cfg.speed_sigma = 0.0;
  cfg.max_speed_delta = 0.0;
  cfg.max_offset = 4.0;
  cfg.position_sigma = 2.0;
  cfg.iterations = 200;
  cfg.population = 64;
  cfg.seed = 11;
  const double base = scenario_scalar_risk(risk_profile(sc, rp).values(), ScalarMode::MaxFrame);
  const RiskTarget target = RiskTarget::scalar_target(0.6 * base, 2.0);

  const PerturbationLayout layout = make_layout(sc, cfg);
  REQUIRE(layout.per_mode() == 3);
  const double grid[] = {-4, -2, 0, 2, 4};
  std::vector<MotionHypothesis> cells;
  for (double dx : grid)
    for (double dy : grid) cells.push_back(evaluate_mode(sc, layout, std::vector<double>{dx, dy, 0.0}, rp, cfg));
  double brute = 1e300;
  for (const auto& a : cells) {
    for (const auto& b : cells) {
      if (!a.feasibility.feasible || !b.feasibility.feasible) continue;
      const double lo = std::min(a.induced_risk, b.induced_risk), hi = std::max(a.induced_risk, b.induced_risk);
      brute = std::min(brute, std::abs(lo - target.scalar) + std::abs(hi - target.tau * target.scalar));
    }
  }
  const SynthesisResult res = synthesize(sc, target, rp, cfg);
  CHECK(res.match.loss <= 1.05 * brute);
}

TEST_CASE("synthesis is deterministic, monotone and self-consistent") {
  const Scenario sc = head_on(12, 0.25);
  const RiskParams rp;
  SynthesisConfig cfg;
  cfg.iterations = 30;
  cfg.population = 24;
  cfg.seed = 99;
  const double base = scenario_scalar_risk(risk_profile(sc, rp).values(), ScalarMode::MaxFrame);
  const RiskTarget target = RiskTarget::scalar_target(1.4 * base, 2.0);
  const SynthesisResult a = synthesize(sc, target, rp, cfg), b = synthesize(sc, target, rp, cfg);
  CHECK(synthesis_to_json(sc, target, cfg, a).dump() == synthesis_to_json(sc, target, cfg, b).dump());

  for (std::size_t i = 1; i < a.loss_trace.size(); ++i) CHECK(a.loss_trace[i] <= a.loss_trace[i - 1]);
  REQUIRE(a.hypotheses.size() == cfg.num_modes);
  CHECK(a.match.r_max > a.match.r_min);
  CHECK(!a.degenerate_spread);
  for (std::size_t m = 0; m < a.hypotheses.size(); ++m) {
    const auto& h = a.hypotheses[m];
    if (m > 0) CHECK(h.induced_risk >= a.hypotheses[m - 1].induced_risk);
    CHECK(h.feasibility.feasible);
    CHECK(h.induced_risk >= 0.0);
    CHECK(std::abs(scenario_risk_of(sc, h, rp, cfg.risk_mode) - h.induced_risk) <= 1e-12);
    for (const auto& ag : h.agents) {
      CHECK(ag.trajectory.size() == sc.num_frames);
      CHECK(ag.boxes.size() == sc.num_frames);
    }
  }

  const auto parsed = hypotheses_from_json(synthesis_to_json(sc, target, cfg, a));
  REQUIRE(parsed.size() == a.hypotheses.size());
  CHECK(parsed[0].induced_risk == a.hypotheses[0].induced_risk);
}

TEST_CASE("a scenario without risk variation is flagged as degenerate") {
  Scenario sc = head_on();
  sc.agents.clear();
  SynthesisConfig cfg;
  cfg.perturb_ego = true;
  cfg.iterations = 3;
  cfg.population = 8;
  const SynthesisResult res = synthesize(sc, RiskTarget::scalar_target(1.0), RiskParams{}, cfg);
  CHECK(res.degenerate_spread);
  CHECK(res.match.r_min == 0.0);
}

TEST_CASE("infeasible kinematic limits raise a synthesis error") {
  const Scenario sc = head_on();
  SynthesisConfig cfg;
  cfg.v_max = 0.5;
  cfg.iterations = 3;
  cfg.population = 8;
  try {
    (void)synthesize(sc, RiskTarget::scalar_target(0.5), RiskParams{}, cfg);
    FAIL("expected SynthesisError");
  } catch (const SynthesisError& e) {
    CHECK(std::string(e.what()).find("limit 0.5") != std::string::npos);
  }
  CHECK_THROWS_AS(sample_risk_pool(sc, RiskParams{}, cfg, 16, 1), SynthesisError);
}

TEST_CASE("risk pools are seeded and feasible") {
  const Scenario sc = head_on(16, 0.5);
  const auto a = sample_risk_pool(sc, RiskParams{}, SynthesisConfig{}, 32, 5);
  const auto b = sample_risk_pool(sc, RiskParams{}, SynthesisConfig{}, 32, 5);
  CHECK(a == b);
  CHECK(a.size() == 32);
  for (double r : a) CHECK(r >= 0.0);
}
