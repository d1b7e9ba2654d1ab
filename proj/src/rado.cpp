#include "rfg/rado.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "json.hpp"
#include "rfg/align.hpp"
#include "rfg/error.hpp"
#include "rfg/mask.hpp"

namespace rfg {

namespace {

Tensor gaussian(Shape shape, double scale, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = scale * rng.normal();
  return t;
}

double softplus(double y) { return std::max(y, 0.0) + std::log1p(std::exp(-std::abs(y))); }
double sigmoid(double y) {
  if (y >= 0.0) return 1.0 / (1.0 + std::exp(-y));
  const double e = std::exp(y);
  return e / (1.0 + e);
}

void require_same(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

void axpy(std::vector<double>& y, double a, const std::vector<double>& x) {
  if (x.empty() || a == 0.0) return;
  if (y.size() < x.size()) y.resize(x.size(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

}  // namespace

std::string_view to_string(ModelVariant v) { return v == ModelVariant::Linear ? "linear" : "one_hidden"; }

ToyVelocityModel ToyVelocityModel::create(ModelVariant variant, std::size_t latent_dim, std::size_t cond_dim,
                                          std::size_t hidden_dim, Rng& rng, double init_scale) {
  if (latent_dim == 0) throw DimensionError("toy model: latent_dim must be >= 1");
  if (variant == ModelVariant::OneHidden && hidden_dim == 0) throw DimensionError("toy model: hidden_dim must be >= 1");
  ToyVelocityModel m;
  m.variant = variant;
  m.latent_dim = latent_dim;
  m.cond_dim = cond_dim;
  m.hidden_dim = variant == ModelVariant::OneHidden ? hidden_dim : 0;
  const std::size_t n = latent_dim, c = cond_dim, h = m.hidden_dim;
  m.a = gaussian({n, n}, init_scale, rng);
  m.b = gaussian({n, c}, init_scale, rng);
  m.u = gaussian({n}, init_scale, rng);
  m.bias = Tensor({n});
  if (variant == ModelVariant::OneHidden) {
    m.v_out = gaussian({n, h}, init_scale, rng);
    m.w_z = gaussian({h, n}, init_scale, rng);
    m.w_c = gaussian({h, c}, init_scale, rng);
    m.w_t = gaussian({h}, init_scale, rng);
    m.b_h = Tensor({h});
  }
  return m;
}

std::vector<const Tensor*> ToyVelocityModel::tensors() const {
  std::vector<const Tensor*> out{&a, &b, &u, &bias};
  if (variant == ModelVariant::OneHidden) out.insert(out.end(), {&v_out, &w_z, &w_c, &w_t, &b_h});
  return out;
}

std::vector<Tensor*> ToyVelocityModel::tensors() {
  std::vector<Tensor*> out{&a, &b, &u, &bias};
  if (variant == ModelVariant::OneHidden) out.insert(out.end(), {&v_out, &w_z, &w_c, &w_t, &b_h});
  return out;
}

std::vector<std::string> ToyVelocityModel::tensor_names(ModelVariant variant) {
  std::vector<std::string> out{"a", "b", "u", "bias"};
  if (variant == ModelVariant::OneHidden) out.insert(out.end(), {"v_out", "w_z", "w_c", "w_t", "b_h"});
  return out;
}

std::size_t ToyVelocityModel::num_params() const {
  std::size_t n = 0;
  for (const Tensor* t : tensors()) n += t->size();
  return n;
}

std::vector<double> ToyVelocityModel::flatten() const {
  std::vector<double> out;
  out.reserve(num_params());
  for (const Tensor* t : tensors()) out.insert(out.end(), t->values().begin(), t->values().end());
  return out;
}

void ToyVelocityModel::assign(std::span<const double> theta) {
  if (theta.size() != num_params()) {
    throw DimensionError("toy model: expected " + std::to_string(num_params()) + " parameters, got " +
                         std::to_string(theta.size()));
  }
  std::size_t off = 0;
  for (Tensor* t : tensors()) {
    std::copy_n(theta.begin() + static_cast<std::ptrdiff_t>(off), t->size(), t->data().begin());
    off += t->size();
  }
}

Tensor ToyVelocityModel::forward(const Tensor& z, double t, const Tensor& c) const {
  const std::size_t n = latent_dim, m = cond_dim, h = hidden_dim;
  if (z.size() != n || c.size() != m) {
    throw DimensionError("toy model: latent " + shape_str(z.shape()) + " / cond " + shape_str(c.shape()) +
                         " do not match dims " + std::to_string(n) + " / " + std::to_string(m));
  }
  Tensor v(z.shape());
  for (std::size_t i = 0; i < n; ++i) {
    double s = u[i] * t + bias[i];
    for (std::size_t j = 0; j < n; ++j) s += a[i * n + j] * z[j];
    for (std::size_t j = 0; j < m; ++j) s += b[i * m + j] * c[j];
    v[i] = s;
  }
  if (variant == ModelVariant::OneHidden) {
    std::vector<double> hid(h);
    for (std::size_t k = 0; k < h; ++k) {
      double s = w_t[k] * t + b_h[k];
      for (std::size_t j = 0; j < n; ++j) s += w_z[k * n + j] * z[j];
      for (std::size_t j = 0; j < m; ++j) s += w_c[k * m + j] * c[j];
      hid[k] = std::tanh(s);
    }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < h; ++k) v[i] += v_out[i * h + k] * hid[k];
  }
  return v;
}

std::vector<double> ToyVelocityModel::backward(const Tensor& z, double t, const Tensor& c,
                                               std::span<const double> grad_v) const {
  const std::size_t n = latent_dim, m = cond_dim, h = hidden_dim;
  if (z.size() != n || c.size() != m || grad_v.size() != n) throw DimensionError("toy model: backward input size mismatch");
  std::vector<double> g(num_params(), 0.0);
  double* ga = g.data();
  double* gb = ga + n * n;
  double* gu = gb + n * m;
  double* gbias = gu + n;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) ga[i * n + j] = grad_v[i] * z[j];
    for (std::size_t j = 0; j < m; ++j) gb[i * m + j] = grad_v[i] * c[j];
    gu[i] = grad_v[i] * t;
    gbias[i] = grad_v[i];
  }
  if (variant == ModelVariant::OneHidden) {
    double* gv = gbias + n;
    double* gwz = gv + n * h;
    double* gwc = gwz + h * n;
    double* gwt = gwc + h * m;
    double* gbh = gwt + h;
    for (std::size_t k = 0; k < h; ++k) {
      double s = w_t[k] * t + b_h[k];
      for (std::size_t j = 0; j < n; ++j) s += w_z[k * n + j] * z[j];
      for (std::size_t j = 0; j < m; ++j) s += w_c[k * m + j] * c[j];
      const double hk = std::tanh(s);
      double gh = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        gv[i * h + k] = grad_v[i] * hk;
        gh += v_out[i * h + k] * grad_v[i];
      }
      const double gpre = gh * (1.0 - hk * hk);
      for (std::size_t j = 0; j < n; ++j) gwz[k * n + j] = gpre * z[j];
      for (std::size_t j = 0; j < m; ++j) gwc[k * m + j] = gpre * c[j];
      gwt[k] = gpre * t;
      gbh[k] = gpre;
    }
  }
  return g;
}

Tensor noise_latent(const Tensor& z0, const Tensor& eps, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError("noise_latent: t = " + std::to_string(t) + " outside [0, 1]");
  require_same(z0, eps, "noise_latent");
  Tensor out(z0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 - t) * z0[i] + t * eps[i];
  return out;
}

Tensor masked_corrupt(const Tensor& z0, const Tensor& zt, const Tensor& mask) {
  require_same(z0, zt, "masked_corrupt");
  require_same(z0, mask, "masked_corrupt");
  Tensor out(z0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = mask[i] * zt[i] + (1.0 - mask[i]) * z0[i];
  return out;
}

PreferencePair make_pair(const FlowSample& sample, const Tensor& mask, double t_w, double t_l) {
  if (!(t_w < t_l)) {
    throw DomainError("make_pair: winner noise level " + std::to_string(t_w) + " must be below loser level " +
                      std::to_string(t_l));
  }
  PreferencePair p;
  p.t_w = t_w;
  p.t_l = t_l;
  p.z_w = masked_corrupt(sample.z0, noise_latent(sample.z0, sample.noise, t_w), mask);
  p.z_l = masked_corrupt(sample.z0, noise_latent(sample.z0, sample.noise, t_l), mask);
  p.mask = mask;
  p.degenerate = std::all_of(mask.values().begin(), mask.values().end(), [](double v) { return v == 0.0; });
  return p;
}

LossTerm masked_fm(const ToyVelocityModel& model, const Tensor& z_in, double t, const Tensor& cond, const Tensor& z0,
                   const Tensor& eps, const Tensor& mask) {
  require_same(z_in, z0, "masked_fm");
  require_same(z_in, eps, "masked_fm");
  require_same(z_in, mask, "masked_fm");
  double l1 = 0.0;
  for (double m : mask.values()) l1 += std::abs(m);
  if (!(l1 > 0.0)) throw DomainError("masked_fm: mask is empty (|M|_1 = 0)");
  const Tensor v = model.forward(z_in, t, cond);
  LossTerm out;
  std::vector<double> gv(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double r = mask[i] * (v[i] - (eps[i] - z0[i]));
    out.value += r * r;
    gv[i] = 2.0 * mask[i] * r / l1;
  }
  out.value /= l1;
  out.grad = model.backward(z_in, t, cond, gv);
  return out;
}

LossTerm sft_loss(const ToyVelocityModel& model, const FlowSample& sample, const Tensor& mask, double t) {
  const Tensor z_in = masked_corrupt(sample.z0, noise_latent(sample.z0, sample.noise, t), mask);
  return masked_fm(model, z_in, t, sample.cond, sample.z0, sample.noise, mask);
}

double noise_weight(NoiseWeight schedule, double t) {
  return schedule == NoiseWeight::Constant ? 1.0 : 1.0 / (1.0 + t * t);
}

DpoResult ra_dpo_loss(const ToyVelocityModel& model, const ToyVelocityModel& reference, const PreferencePair& pair,
                      const FlowSample& sample, double beta, double w_t) {
  if (pair.degenerate) throw DomainError("ra_dpo_loss: preference pair has an empty mask");
  const LossTerm fw = masked_fm(model, pair.z_w, pair.t_w, sample.cond, sample.z0, sample.noise, pair.mask);
  const LossTerm fl = masked_fm(model, pair.z_l, pair.t_l, sample.cond, sample.z0, sample.noise, pair.mask);
  const LossTerm rw = masked_fm(reference, pair.z_w, pair.t_w, sample.cond, sample.z0, sample.noise, pair.mask);
  const LossTerm rl = masked_fm(reference, pair.z_l, pair.t_l, sample.cond, sample.z0, sample.noise, pair.mask);

  const double x = beta * ((rw.value - fw.value) - (rl.value - fl.value));
  DpoResult out;
  out.fm_w = fw.value;
  out.fm_l = fl.value;
  out.fm_ref_w = rw.value;
  out.fm_ref_l = rl.value;
  out.loss.value = w_t * softplus(-x);
  const double coef = w_t * beta * sigmoid(-x);
  out.loss.grad.resize(fw.grad.size());
  for (std::size_t i = 0; i < fw.grad.size(); ++i) out.loss.grad[i] = coef * (fw.grad[i] - fl.grad[i]);
  return out;
}

LossBundle total_loss(const LossTerm& sft, const LossTerm& ra, const LossTerm& align, const LossWeights& weights) {
  LossBundle b;
  b.sft = sft.value;
  b.ra_dpo = ra.value;
  b.align = align.value;
  b.weights = weights;
  b.total = weights.sft * sft.value + weights.ra * ra.value + weights.align * align.value;
  axpy(b.grad, weights.sft, sft.grad);
  axpy(b.grad, weights.ra, ra.grad);
  axpy(b.grad, weights.align, align.grad);
  return b;
}

void ema_update(ToyVelocityModel& reference, const ToyVelocityModel& model, double gamma) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw DomainError("ema_update: decay must be in [0, 1]");
  if (reference.variant != model.variant || reference.num_params() != model.num_params()) {
    throw DimensionError("ema_update: reference and model architectures differ");
  }
  auto dst = reference.tensors();
  const auto src = model.tensors();
  for (std::size_t k = 0; k < dst.size(); ++k) {
    for (std::size_t i = 0; i < dst[k]->size(); ++i) {
      (*dst[k])[i] = gamma * (*dst[k])[i] + (1.0 - gamma) * (*src[k])[i];
    }
  }
}

ToyDataset make_toy_dataset(const ToyTrainConfig& config, Rng& rng) {
  const std::size_t n = config.latent_dim, s = config.num_samples;
  if (s == 0) throw DomainError("toy dataset: num_samples must be >= 1");
  std::size_t rows = 1;
  for (std::size_t r = 1; r * r <= n; ++r)
    if (n % r == 0) rows = r;
  const std::size_t cols = n / rows;

  // A blob drifting across the latent grid; its frame-to-frame change drives the masks.
  Tensor video({1, 1, 1, s + 1, rows, cols});
  const double cy0 = rng.uniform(0.0, static_cast<double>(rows - 1));
  const double cx0 = rng.uniform(0.0, static_cast<double>(cols - 1));
  const double vy = rng.uniform(-0.6, 0.6), vx = rng.uniform(0.4, 0.9);
  for (std::size_t f = 0; f <= s; ++f) {
    const double cy = cy0 + vy * static_cast<double>(f);
    const double cx = cx0 + vx * static_cast<double>(f);
    for (std::size_t y = 0; y < rows; ++y) {
      for (std::size_t x = 0; x < cols; ++x) {
        const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
        video[(f * rows + y) * cols + x] = std::exp(-(dx * dx + dy * dy) / 2.0);
      }
    }
  }
  BlobParams bp;
  bp.soft_threshold = config.soft_threshold;
  const MaskVolume mot = motion_mask(video, bp);

  ToyDataset d;
  for (std::size_t i = 0; i < s; ++i) {
    Tensor m({n}, std::vector<double>(mot.data.values().begin() + static_cast<std::ptrdiff_t>(i * n),
                                      mot.data.values().begin() + static_cast<std::ptrdiff_t>((i + 1) * n)));
    FlowSample fs{gaussian({n}, 1.0, rng), gaussian({n}, 1.0, rng), gaussian({config.cond_dim}, 1.0, rng),
                  rng.uniform(0.02, 0.98)};
    d.pairs.push_back(make_pair(fs, m, config.t_w, config.t_l));
    if (d.pairs.back().degenerate) throw DomainError("toy dataset: motion mask " + std::to_string(i) + " is empty");
    d.samples.push_back(std::move(fs));
    d.masks.push_back(std::move(m));
  }
  constexpr std::size_t kTokens = 4, kDim = 8;
  d.geo_tokens = gaussian({s, kTokens, kDim}, 1.0, rng);
  d.appearance = gaussian({s, kDim}, 1.0, rng);
  return d;
}

ToyTrainResult toy_train_demo(const ToyTrainConfig& config) {
  if (!(config.lr >= 0.0) || !std::isfinite(config.lr)) throw ConfigError("toy train: lr must be finite and >= 0");
  Rng rng(config.seed);
  ToyTrainResult res;
  res.data = make_toy_dataset(config, rng);
  res.model = ToyVelocityModel::create(config.variant, config.latent_dim, config.cond_dim, config.hidden_dim, rng);
  res.model.ema_decay = config.ema_decay;
  res.reference = res.model;

  const auto& data = res.data;
  const double inv_s = 1.0 / static_cast<double>(data.samples.size());
  const bool use_ra = config.weights.ra != 0.0;
  res.trace.reserve(config.steps + 1);
  std::vector<double> theta = res.model.flatten();

  for (std::size_t step = 0; step <= config.steps; ++step) {
    LossTerm sft, ra, align;
    double fm_w = 0.0, fm_l = 0.0;
    for (std::size_t i = 0; i < data.samples.size(); ++i) {
      const auto& smp = data.samples[i];
      const LossTerm s = sft_loss(res.model, smp, data.masks[i], smp.t);
      sft.value += inv_s * s.value;
      axpy(sft.grad, inv_s, s.grad);
      const auto& pair = data.pairs[i];
      if (use_ra) {
        const DpoResult r = ra_dpo_loss(res.model, res.reference, pair, smp, config.dpo_beta,
                                        noise_weight(config.schedule, pair.t_l));
        ra.value += inv_s * r.loss.value;
        axpy(ra.grad, inv_s, r.loss.grad);
        fm_w += inv_s * r.fm_w;
        fm_l += inv_s * r.fm_l;
      } else {
        fm_w += inv_s * masked_fm(res.model, pair.z_w, pair.t_w, smp.cond, smp.z0, smp.noise, pair.mask).value;
        fm_l += inv_s * masked_fm(res.model, pair.z_l, pair.t_l, smp.cond, smp.z0, smp.noise, pair.mask).value;
      }
    }
    const AlignmentResult al = alignment_loss(data.geo_tokens, data.appearance);
    align.value = al.loss;

    const LossBundle bundle = total_loss(sft, ra, align, config.weights);
    const TrainTraceRow row{step, bundle.sft, bundle.ra_dpo, bundle.align, bundle.total, fm_w, fm_l};
    for (double v : {row.sft, row.ra_dpo, row.align, row.total, row.fm_w, row.fm_l}) {
      if (!std::isfinite(v)) throw TrainingError(step, "non-finite loss");
    }
    res.trace.push_back(row);
    if (step == config.steps) break;

    for (std::size_t k = 0; k < bundle.grad.size(); ++k) theta[k] -= config.lr * bundle.grad[k];
    if (!std::all_of(theta.begin(), theta.end(), [](double v) { return std::isfinite(v); })) {
      throw TrainingError(step, "non-finite parameters after update");
    }
    res.model.assign(theta);
    const double step_align = config.lr * config.weights.align;
    if (step_align != 0.0) {
      for (std::size_t k = 0; k < res.data.geo_tokens.size(); ++k) res.data.geo_tokens[k] -= step_align * al.grad_tokens[k];
    }
    ema_update(res.reference, res.model, config.ema_decay);
  }
  return res;
}

std::string trace_to_csv(const std::vector<TrainTraceRow>& trace) {
  std::string out = "step,sft,ra_dpo,align,total,fm_w,fm_l\n";
  char buf[256];
  for (const auto& r : trace) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.step, r.sft, r.ra_dpo, r.align, r.total,
                  r.fm_w, r.fm_l);
    out += buf;
  }
  return out;
}

void save_model(const ToyVelocityModel& model, const std::filesystem::path& dir, const std::string& stem) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  nlohmann::json doc = {{"variant", std::string(to_string(model.variant))},
                        {"latent_dim", model.latent_dim},
                        {"cond_dim", model.cond_dim},
                        {"hidden_dim", model.hidden_dim},
                        {"ema_decay", model.ema_decay},
                        {"tensors", nlohmann::json::object()}};
  const auto names = ToyVelocityModel::tensor_names(model.variant);
  const auto ts = model.tensors();
  for (std::size_t k = 0; k < ts.size(); ++k) {
    const std::string file = stem + "_" + names[k] + ".rfgt";
    save_tensor(*ts[k], dir / file);
    doc["tensors"][names[k]] = file;
  }
  std::ofstream os(dir / (stem + ".json"));
  if (!os) throw IoError("cannot write " + (dir / (stem + ".json")).string());
  os << doc.dump(2) << "\n";
}

ToyVelocityModel load_model(const std::filesystem::path& manifest) {
  std::ifstream is(manifest);
  if (!is) throw IoError("cannot open " + manifest.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(manifest.string() + ": " + e.what());
  }
  try {
    ToyVelocityModel m;
    const auto variant = doc.at("variant").get<std::string>();
    if (variant != "linear" && variant != "one_hidden") throw ConfigError("model manifest: unknown variant '" + variant + "'");
    m.variant = variant == "linear" ? ModelVariant::Linear : ModelVariant::OneHidden;
    m.latent_dim = doc.at("latent_dim").get<std::size_t>();
    m.cond_dim = doc.at("cond_dim").get<std::size_t>();
    m.hidden_dim = doc.at("hidden_dim").get<std::size_t>();
    m.ema_decay = doc.at("ema_decay").get<double>();
    const auto names = ToyVelocityModel::tensor_names(m.variant);
    auto ts = m.tensors();
    for (std::size_t k = 0; k < ts.size(); ++k) {
      *ts[k] = load_tensor(manifest.parent_path() / doc.at("tensors").at(names[k]).get<std::string>());
    }
    const std::size_t n = m.latent_dim, c = m.cond_dim, h = m.hidden_dim;
    std::vector<Shape> want{{n, n}, {n, c}, {n}, {n}};
    if (m.variant == ModelVariant::OneHidden) want.insert(want.end(), {{n, h}, {h, n}, {h, c}, {h}, {h}});
    for (std::size_t k = 0; k < ts.size(); ++k) {
      if (ts[k]->shape() != want[k]) {
        throw DimensionError("model manifest: tensor '" + names[k] + "' has shape " + shape_str(ts[k]->shape()) +
                             ", expected " + shape_str(want[k]));
      }
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(manifest.string() + ": " + e.what());
  }
}

}  // namespace rfg
