#include <Eigen/Dense>
#include <cmath>
#include <filesystem>
#include <numbers>

#include "doctest.h"
#include "rfg/error.hpp"
#include "rfg/gradcheck.hpp"
#include "rfg/rado.hpp"

using namespace rfg;

namespace {

constexpr std::size_t kN = 4, kM = 3, kH = 5;

Tensor gaussian(Rng& rng, Shape shape) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.normal();
  return t;
}

Tensor random_mask(Rng& rng, std::size_t n) {
  Tensor m({n});
  for (auto& v : m.data()) v = rng.uniform();
  m[0] = 1.0;
  return m;
}

FlowSample random_sample(Rng& rng) {
  return {gaussian(rng, {kN}), gaussian(rng, {kN}), gaussian(rng, {kM}), rng.uniform(0.05, 0.95)};
}

ToyVelocityModel perturbed(const ToyVelocityModel& m, std::span<const double> dir, double step) {
  ToyVelocityModel out = m;
  std::vector<double> theta = m.flatten();
  for (std::size_t i = 0; i < theta.size(); ++i) theta[i] += step * dir[i];
  out.assign(theta);
  return out;
}

// Evaluates `loss` at θ by copying the model with new parameters.
template <class F>
std::vector<double> numeric_grad(const ToyVelocityModel& m, F loss) {
  return central_difference(
      [&](std::span<const double> theta) {
        ToyVelocityModel c = m;
        c.assign(theta);
        return loss(c);
      },
      m.flatten());
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST_CASE("noise_latent and masked_corrupt examples") {
  Rng rng(71);
  const Tensor z0 = gaussian(rng, {2, 2}), eps = gaussian(rng, {2, 2});
  CHECK(noise_latent(z0, eps, 0.0) == z0);
  CHECK(noise_latent(z0, eps, 1.0) == eps);
  CHECK(noise_latent(Tensor::zeros({1}), Tensor::full({1}, 2.0), 0.5)[0] == 1.0);
  CHECK_THROWS_AS(noise_latent(z0, eps, 1.5), DomainError);
  CHECK_THROWS_AS(noise_latent(z0, Tensor({4}), 0.5), DimensionError);

  const Tensor zt = gaussian(rng, {2, 2});
  CHECK(masked_corrupt(z0, zt, Tensor::zeros({2, 2})) == z0);
  CHECK(masked_corrupt(z0, zt, Tensor::full({2, 2}, 1.0)) == zt);
  CHECK(masked_corrupt(Tensor::zeros({1}), Tensor::full({1}, 4.0), Tensor::full({1}, 0.5))[0] == 2.0);
  CHECK_THROWS_AS(masked_corrupt(z0, zt, Tensor({3})), DimensionError);
}

TEST_CASE("make_pair examples") {
  Rng rng(72);
  const FlowSample s{gaussian(rng, {2, 2}), gaussian(rng, {2, 2}), gaussian(rng, {kM}), 0.5};
  const Tensor m = Tensor::matrix({{1, 0.3}, {0, 0.8}});

  const PreferencePair p0 = make_pair(s, m, 0.0, 0.6);
  CHECK(p0.z_w == s.z0);

  const PreferencePair none = make_pair(s, Tensor::zeros({2, 2}), 0.2, 0.8);
  CHECK(none.degenerate);
  CHECK(none.z_w == s.z0);
  CHECK(none.z_l == s.z0);

  const PreferencePair p = make_pair(s, m, 0.2, 0.8);
  CHECK(!p.degenerate);
  for (std::size_t i = 0; i < 4; ++i) {
    const double zw = m[i] * ((1 - 0.2) * s.z0[i] + 0.2 * s.noise[i]) + (1 - m[i]) * s.z0[i];
    const double zl = m[i] * ((1 - 0.8) * s.z0[i] + 0.8 * s.noise[i]) + (1 - m[i]) * s.z0[i];
    CHECK(p.z_w[i] == zw);
    CHECK(p.z_l[i] == zl);
  }
  CHECK_THROWS_AS(make_pair(s, m, 0.8, 0.2), DomainError);
  CHECK_THROWS_AS(make_pair(s, m, 0.5, 0.5), DomainError);
}

TEST_CASE("masked_fm examples") {
  Rng rng(73);
  ToyVelocityModel model = ToyVelocityModel::create(ModelVariant::Linear, kN, kM, 0, rng);
  const FlowSample s = random_sample(rng);
  const Tensor ones = Tensor::full({kN}, 1.0);

  // Zero weights with bias = eps - z0 reproduce the target exactly.
  std::vector<double> theta(model.num_params(), 0.0);
  model.assign(theta);
  for (std::size_t i = 0; i < kN; ++i) model.bias[i] = s.noise[i] - s.z0[i];
  const LossTerm perfect = masked_fm(model, s.z0, 0.3, s.cond, s.z0, s.noise, ones);
  CHECK(perfect.value == 0.0);
  for (double g : perfect.grad) CHECK(g == 0.0);

  // Shift the bias by one everywhere: δ = 1, so |δ|² / |M|₁ = n / n.
  for (std::size_t i = 0; i < kN; ++i) model.bias[i] += 1.0;
  CHECK(masked_fm(model, s.z0, 0.3, s.cond, s.z0, s.noise, ones).value == 1.0);

  CHECK_THROWS_AS(masked_fm(model, s.z0, 0.3, s.cond, s.z0, s.noise, Tensor::zeros({kN})), DomainError);
  CHECK_THROWS_AS(sft_loss(model, s, Tensor::zeros({kN}), 0.3), DomainError);
}

TEST_CASE("sft_loss is masked_fm on the corrupted latent") {
  Rng rng(74);
  for (auto variant : {ModelVariant::Linear, ModelVariant::OneHidden}) {
    const ToyVelocityModel model = ToyVelocityModel::create(variant, kN, kM, kH, rng);
    const FlowSample s = random_sample(rng);
    const Tensor m = random_mask(rng, kN);
    const double t = rng.uniform(0.05, 0.95);
    const LossTerm a = sft_loss(model, s, m, t);
    const LossTerm b = masked_fm(model, masked_corrupt(s.z0, noise_latent(s.z0, s.noise, t), m), t, s.cond, s.z0, s.noise, m);
    CHECK(a.value == b.value);
    CHECK(a.grad == b.grad);
  }
}

TEST_CASE("analytic gradients match central differences on 50 instances per variant") {
  Rng rng(75);
  for (auto variant : {ModelVariant::Linear, ModelVariant::OneHidden}) {
    CAPTURE(to_string(variant));
    double worst_fm = 0.0, worst_sft = 0.0, worst_dpo = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
      const ToyVelocityModel model = ToyVelocityModel::create(variant, kN, kM, kH, rng, 0.5);
      ToyVelocityModel ref = ToyVelocityModel::create(variant, kN, kM, kH, rng, 0.5);
      const FlowSample s = random_sample(rng);
      const Tensor m = random_mask(rng, kN);
      const Tensor z_in = gaussian(rng, {kN});

      const LossTerm fm = masked_fm(model, z_in, s.t, s.cond, s.z0, s.noise, m);
      const auto fm_num = numeric_grad(model, [&](const ToyVelocityModel& c) {
        return masked_fm(c, z_in, s.t, s.cond, s.z0, s.noise, m).value;
      });
      worst_fm = std::max(worst_fm, gradient_relative_error(fm.grad, fm_num));

      const LossTerm sft = sft_loss(model, s, m, s.t);
      const auto sft_num = numeric_grad(model, [&](const ToyVelocityModel& c) { return sft_loss(c, s, m, s.t).value; });
      worst_sft = std::max(worst_sft, gradient_relative_error(sft.grad, sft_num));

      const PreferencePair pair = make_pair(s, m, 0.2, 0.8);
      const double beta = rng.uniform(0.05, 2.0), w = noise_weight(NoiseWeight::SnrProxy, pair.t_l);
      const DpoResult dpo = ra_dpo_loss(model, ref, pair, s, beta, w);
      const auto dpo_num = numeric_grad(model, [&](const ToyVelocityModel& c) {
        return ra_dpo_loss(c, ref, pair, s, beta, w).loss.value;
      });
      worst_dpo = std::max(worst_dpo, gradient_relative_error(dpo.loss.grad, dpo_num));
    }
    CHECK(worst_fm <= 1e-6);
    CHECK(worst_sft <= 1e-6);
    CHECK(worst_dpo <= 1e-6);
  }
}

TEST_CASE("ra_dpo_loss matches the softplus formula and is neutral at the reference") {
  Rng rng(76);
  for (auto variant : {ModelVariant::Linear, ModelVariant::OneHidden}) {
    for (int trial = 0; trial < 20; ++trial) {
      const ToyVelocityModel model = ToyVelocityModel::create(variant, kN, kM, kH, rng, 0.5);
      const ToyVelocityModel ref = ToyVelocityModel::create(variant, kN, kM, kH, rng, 0.5);
      const FlowSample s = random_sample(rng);
      const PreferencePair pair = make_pair(s, random_mask(rng, kN), 0.3, 0.7);
      const double w = rng.uniform(0.5, 1.5), beta = rng.uniform(0.05, 1.0);

      const DpoResult self = ra_dpo_loss(model, model, pair, s, beta, w);
      CHECK(std::abs(self.loss.value - w * std::numbers::ln2) <= 1e-12);
      CHECK(std::abs(ra_dpo_loss(model, ref, pair, s, 0.0, w).loss.value - w * std::numbers::ln2) <= 1e-12);

      const DpoResult d = ra_dpo_loss(model, ref, pair, s, beta, w);
      const double x = beta * ((d.fm_ref_w - d.fm_w) - (d.fm_ref_l - d.fm_l));
      CHECK(std::abs(d.loss.value - w * std::log1p(std::exp(-x))) <= 1e-12);
    }
  }
  ToyVelocityModel m = ToyVelocityModel::create(ModelVariant::Linear, kN, kM, 0, rng);
  const FlowSample s = random_sample(rng);
  CHECK_THROWS_AS(ra_dpo_loss(m, m, make_pair(s, Tensor::zeros({kN}), 0.2, 0.8), s, 0.1, 1.0), DomainError);
}

TEST_CASE("favouring the winner pushes the loss below w ln 2") {
  Rng rng(77);
  for (auto variant : {ModelVariant::Linear, ModelVariant::OneHidden}) {
    for (int trial = 0; trial < 20; ++trial) {
      const ToyVelocityModel ref = ToyVelocityModel::create(variant, kN, kM, kH, rng, 0.5);
      const FlowSample s = random_sample(rng);
      const PreferencePair pair = make_pair(s, random_mask(rng, kN), 0.2, 0.8);
      const auto gw = masked_fm(ref, pair.z_w, pair.t_w, s.cond, s.z0, s.noise, pair.mask).grad;
      const auto gl = masked_fm(ref, pair.z_l, pair.t_l, s.cond, s.z0, s.noise, pair.mask).grad;
      // Descend on FM_w orthogonally to ∇FM_l and ascend on FM_l orthogonally to ∇FM_w.
      const double ww = dot(gw, gw), ll = dot(gl, gl), wl = dot(gw, gl);
      std::vector<double> dir(gw.size());
      for (std::size_t i = 0; i < dir.size(); ++i) dir[i] = (-gw[i] + wl / ll * gl[i]) + (gl[i] - wl / ww * gw[i]);
      const double step = 1e-3 / std::sqrt(dot(dir, dir));
      const ToyVelocityModel model = perturbed(ref, dir, step);

      const DpoResult d = ra_dpo_loss(model, ref, pair, s, 0.5, 1.0);
      REQUIRE(d.fm_w < d.fm_ref_w);
      REQUIRE(d.fm_l > d.fm_ref_l);
      CHECK(d.loss.value < std::numbers::ln2);
      const auto num = numeric_grad(model, [&](const ToyVelocityModel& c) {
        return ra_dpo_loss(c, ref, pair, s, 0.5, 1.0).loss.value;
      });
      CHECK(gradient_relative_error(d.loss.grad, num) <= 1e-6);
    }
  }
}

TEST_CASE("lowering FM on the winner alone lowers the loss") {
  Rng rng(78);
  for (int trial = 0; trial < 20; ++trial) {
    const ToyVelocityModel ref = ToyVelocityModel::create(ModelVariant::OneHidden, kN, kM, kH, rng, 0.5);
    const ToyVelocityModel model = ToyVelocityModel::create(ModelVariant::OneHidden, kN, kM, kH, rng, 0.5);
    const FlowSample s = random_sample(rng);
    const PreferencePair pair = make_pair(s, random_mask(rng, kN), 0.2, 0.8);
    const auto gw = masked_fm(model, pair.z_w, pair.t_w, s.cond, s.z0, s.noise, pair.mask).grad;
    const auto gl = masked_fm(model, pair.z_l, pair.t_l, s.cond, s.z0, s.noise, pair.mask).grad;
    const double wl = dot(gw, gl), ll = dot(gl, gl);
    std::vector<double> dir(gw.size());
    for (std::size_t i = 0; i < dir.size(); ++i) dir[i] = -gw[i] + wl / ll * gl[i];
    const double step = 1e-4 / std::sqrt(dot(dir, dir));

    const DpoResult before = ra_dpo_loss(model, ref, pair, s, 0.5, 1.0);
    const DpoResult after = ra_dpo_loss(perturbed(model, dir, step), ref, pair, s, 0.5, 1.0);
    REQUIRE(after.fm_w < before.fm_w);
    CHECK(std::abs(after.fm_l - before.fm_l) < 0.1 * (before.fm_w - after.fm_w));
    CHECK(after.fm_ref_w == before.fm_ref_w);
    CHECK(after.loss.value < before.loss.value);
  }
}

TEST_CASE("residuals outside a 0/1 mask never reach the loss") {
  Rng rng(79);
  for (auto variant : {ModelVariant::Linear, ModelVariant::OneHidden}) {
    ToyVelocityModel model = ToyVelocityModel::create(variant, kN, kM, kH, rng, 0.5);
    const FlowSample s = random_sample(rng);
    const Tensor m = Tensor::vector({1, 0, 1, 0});
    const double t = 0.4;
    const double base = sft_loss(model, s, m, t).value;

    // Model output outside the mask moves with the bias; the loss does not.
    ToyVelocityModel shifted = model;
    shifted.bias[1] += 3.0;
    shifted.bias[3] -= 2.0;
    CHECK(sft_loss(shifted, s, m, t).value == base);

    // Changing z0 off the mask reaches the loss only as model input.
    FlowSample moved = s;
    moved.z0[1] += 1.5;
    moved.z0[3] -= 0.7;
    const Tensor z_in = masked_corrupt(moved.z0, noise_latent(moved.z0, moved.noise, t), m);
    CHECK(sft_loss(model, moved, m, t).value == masked_fm(model, z_in, t, s.cond, s.z0, s.noise, m).value);
  }
}

TEST_CASE("noise weight schedules") {
  CHECK(noise_weight(NoiseWeight::Constant, 0.7) == 1.0);
  CHECK(noise_weight(NoiseWeight::SnrProxy, 0.5) == 0.8);
  CHECK(noise_weight(NoiseWeight::SnrProxy, 0.0) == 1.0);
}

TEST_CASE("total_loss examples") {
  const LossTerm sft{2.0, {1.0, 2.0}}, ra{3.0, {0.5, -1.0}}, al{4.0, {}};
  const LossBundle only = total_loss(sft, ra, al, {1, 0, 0});
  CHECK(only.total == 2.0);
  CHECK(only.grad == sft.grad);

  const LossTerm one{1.0, {}};
  CHECK(std::abs(total_loss(one, one, one, {0.5, 0.3, 0.2}).total - 1.0) <= 1e-15);

  Rng rng(80);
  for (int trial = 0; trial < 100; ++trial) {
    LossTerm a{rng.uniform(0, 5), {rng.normal(), rng.normal()}}, b{rng.uniform(0, 5), {rng.normal(), rng.normal()}};
    LossTerm c{rng.uniform(0, 2), {}};
    const LossWeights w{rng.uniform(0, 2), rng.uniform(0, 2), rng.uniform(0, 2)};
    const LossBundle r = total_loss(a, b, c, w);
    CHECK(r.total == w.sft * a.value + w.ra * b.value + w.align * c.value);
    for (std::size_t i = 0; i < 2; ++i) CHECK(r.grad[i] == w.sft * a.grad[i] + w.ra * b.grad[i]);
  }
}

TEST_CASE("ema_update examples") {
  Rng rng(81);
  const ToyVelocityModel model = ToyVelocityModel::create(ModelVariant::OneHidden, kN, kM, kH, rng);
  ToyVelocityModel ref = ToyVelocityModel::create(ModelVariant::OneHidden, kN, kM, kH, rng);
  const auto before = ref.flatten();
  ema_update(ref, model, 1.0);
  CHECK(ref.flatten() == before);
  ema_update(ref, model, 0.0);
  CHECK(ref.flatten() == model.flatten());

  ToyVelocityModel ones = model, zeros = model;
  ones.assign(std::vector<double>(model.num_params(), 1.0));
  zeros.assign(std::vector<double>(model.num_params(), 0.0));
  for (int i = 0; i < 10; ++i) ema_update(zeros, ones, 0.9999);
  for (double v : zeros.flatten()) {
    CHECK(std::abs(v - (1.0 - std::pow(0.9999, 10))) <= 1e-15);
    CHECK(std::abs(v - 0.00099955) <= 1e-8);
  }

  CHECK_THROWS_AS(ema_update(ref, model, 1.5), DomainError);
  ToyVelocityModel linear = ToyVelocityModel::create(ModelVariant::Linear, kN, kM, 0, rng);
  CHECK_THROWS_AS(ema_update(linear, model, 0.5), DimensionError);
}

TEST_CASE("model flattening and persistence round-trip") {
  Rng rng(82);
  const ToyVelocityModel m = ToyVelocityModel::create(ModelVariant::OneHidden, kN, kM, kH, rng);
  CHECK(m.num_params() == kN * kN + kN * kM + 2 * kN + kN * kH + kH * kN + kH * kM + 2 * kH);
  ToyVelocityModel c = ToyVelocityModel::create(ModelVariant::OneHidden, kN, kM, kH, rng);
  c.assign(m.flatten());
  CHECK(c.flatten() == m.flatten());
  CHECK_THROWS_AS(c.assign(std::vector<double>(3, 0.0)), DimensionError);

  const auto dir = std::filesystem::temp_directory_path() / "rfg_test_model";
  std::filesystem::remove_all(dir);
  save_model(m, dir, "model");
  const ToyVelocityModel back = load_model(dir / "model.json");
  CHECK(back.variant == ModelVariant::OneHidden);
  CHECK(back.flatten() == m.flatten());
  std::filesystem::remove_all(dir);
}

TEST_CASE("zero learning rate leaves the trace flat") {
  ToyTrainConfig cfg;
  cfg.steps = 20;
  cfg.lr = 0.0;
  const ToyTrainResult r = toy_train_demo(cfg);
  REQUIRE(r.trace.size() == 21);
  for (const auto& row : r.trace) CHECK(row.total == r.trace.front().total);
}

TEST_CASE("SFT-only training converges to the least-squares optimum") {
  ToyTrainConfig cfg;  // linear model, SFT only, lr 1e-2, seed 3, 2000 steps
  const ToyTrainResult r = toy_train_demo(cfg);
  const double initial = r.trace.front().sft, final_loss = r.trace.back().sft;
  CHECK(final_loss / initial <= 0.01);

  // Closed form: v is linear in θ, so the loss is a weighted least-squares problem.
  const ToyVelocityModel& model = r.model;
  const std::size_t p = model.num_params(), n = cfg.latent_dim, s = r.data.samples.size();
  Eigen::MatrixXd design(n * s, p);
  Eigen::VectorXd target(n * s);
  for (std::size_t i = 0; i < s; ++i) {
    const FlowSample& smp = r.data.samples[i];
    const Tensor& m = r.data.masks[i];
    const Tensor z_in = masked_corrupt(smp.z0, noise_latent(smp.z0, smp.noise, smp.t), m);
    double l1 = 0.0;
    for (double v : m.data()) l1 += std::abs(v);
    const double scale = 1.0 / std::sqrt(static_cast<double>(s) * l1);
    for (std::size_t j = 0; j < n; ++j) {
      std::vector<double> e(n, 0.0);
      e[j] = 1.0;
      const auto row = model.backward(z_in, smp.t, smp.cond, e);
      for (std::size_t k = 0; k < p; ++k) design(i * n + j, k) = scale * m[j] * row[k];
      target(i * n + j) = scale * m[j] * (smp.noise[j] - smp.z0[j]);
    }
  }
  const Eigen::VectorXd theta_star = design.completeOrthogonalDecomposition().solve(target);
  const double optimum = (design * theta_star - target).squaredNorm();
  std::vector<double> theta(theta_star.data(), theta_star.data() + p);
  ToyVelocityModel best = model;
  best.assign(theta);
  double check = 0.0;
  for (std::size_t i = 0; i < s; ++i) check += sft_loss(best, r.data.samples[i], r.data.masks[i], r.data.samples[i].t).value / s;
  CHECK(std::abs(check - optimum) <= 1e-9);
  CHECK(final_loss >= optimum - 1e-12);
  CHECK(final_loss - optimum <= 0.01 * (initial - optimum));
}

TEST_CASE("RA-DPO training separates winner and loser residuals") {
  ToyTrainConfig cfg;
  cfg.weights = {0.0, 1.0, 0.0};
  cfg.steps = 400;
  cfg.lr = 0.05;
  cfg.dpo_beta = 0.5;
  const ToyTrainResult r = toy_train_demo(cfg);
  // Mean gap over ten consecutive windows must fall window by window.
  const std::size_t window = r.trace.size() / 10;
  double prev = 1e300;
  for (std::size_t k = 0; k < 10; ++k) {
    double gap = 0.0;
    for (std::size_t i = k * window; i < (k + 1) * window; ++i) gap += r.trace[i].fm_w - r.trace[i].fm_l;
    gap /= window;
    CHECK(gap < prev);
    prev = gap;
  }
  CHECK(r.trace.back().ra_dpo < r.trace.front().ra_dpo);
}

TEST_CASE("divergence raises a training error with the step index") {
  ToyTrainConfig cfg;
  cfg.steps = 200;
  cfg.lr = 1e6;
  try {
    (void)toy_train_demo(cfg);
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).rfind("step " + std::to_string(e.step()), 0) == 0);
  }
}

TEST_CASE("trace CSV layout") {
  const std::vector<TrainTraceRow> rows{{0, 1.5, 0.25, 0.0, 1.75, 0.1, 0.2}};
  CHECK(trace_to_csv(rows) == "step,sft,ra_dpo,align,total,fm_w,fm_l\n0,1.5,0.25,0,1.75,0.1,0.2\n");
}
