#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "rfg/rng.hpp"
#include "rfg/tensor.hpp"

namespace rfg {

enum class ModelVariant { Linear, OneHidden };
std::string_view to_string(ModelVariant v);

/// Small velocity field v(z, t, c) whose parameter gradient is available in closed form.
///   Linear:    v = A z + B c + u t + b
///   OneHidden: v = A z + B c + u t + b + V tanh(Wz z + Wc c + wt t + bh)
/// Latents and conditioning of any shape are used flattened.
struct ToyVelocityModel {
  ModelVariant variant = ModelVariant::Linear;
  std::size_t latent_dim = 16;
  std::size_t cond_dim = 8;
  std::size_t hidden_dim = 32;
  Tensor a, b, u, bias;            // n×n, n×m, n, n
  Tensor v_out, w_z, w_c, w_t, b_h; // n×h, h×n, h×m, h, h (OneHidden only)
  double ema_decay = 0.9999;

  static ToyVelocityModel create(ModelVariant variant, std::size_t latent_dim, std::size_t cond_dim,
                                 std::size_t hidden_dim, Rng& rng, double init_scale = 0.1);

  /// Parameter tensors in the canonical flattening order.
  std::vector<const Tensor*> tensors() const;
  std::vector<Tensor*> tensors();
  static std::vector<std::string> tensor_names(ModelVariant variant);

  std::size_t num_params() const;
  std::vector<double> flatten() const;
  void assign(std::span<const double> theta);

  /// Output has the shape of `z`.
  Tensor forward(const Tensor& z, double t, const Tensor& c) const;
  /// d(<grad_v, v>)/dθ in flattening order.
  std::vector<double> backward(const Tensor& z, double t, const Tensor& c, std::span<const double> grad_v) const;
};

struct FlowSample {
  Tensor z0;
  Tensor noise;
  Tensor cond;
  double t = 0.5;
};

struct PreferencePair {
  double t_w = 0.0;
  double t_l = 1.0;
  Tensor z_w;
  Tensor z_l;
  Tensor mask;
  bool degenerate = false;  // mask is all zero, so z_w == z_l == z0
};

/// A scalar loss and its gradient w.r.t. the flat model parameters (empty = zero gradient).
struct LossTerm {
  double value = 0.0;
  std::vector<double> grad;
};

/// Rectified-flow interpolation (1 - t) z0 + t eps.
Tensor noise_latent(const Tensor& z0, const Tensor& eps, double t);
/// M ⊙ zt + (1 - M) ⊙ z0.
Tensor masked_corrupt(const Tensor& z0, const Tensor& zt, const Tensor& mask);
PreferencePair make_pair(const FlowSample& sample, const Tensor& mask, double t_w, double t_l);

/// |M ⊙ (v(z_in, t, c) - (eps - z0))|² / |M|₁ with its parameter gradient.
LossTerm masked_fm(const ToyVelocityModel& model, const Tensor& z_in, double t, const Tensor& cond, const Tensor& z0,
                   const Tensor& eps, const Tensor& mask);

/// Masked flow matching on the masked-corrupted latent at noise level t.
LossTerm sft_loss(const ToyVelocityModel& model, const FlowSample& sample, const Tensor& mask, double t);

enum class NoiseWeight { Constant, SnrProxy };
/// Constant: 1. SnrProxy: 1 / (1 + t²).
double noise_weight(NoiseWeight schedule, double t);

struct DpoResult {
  LossTerm loss;
  double fm_w = 0.0;      // model residuals on the winner / loser
  double fm_l = 0.0;
  double fm_ref_w = 0.0;  // reference residuals
  double fm_ref_l = 0.0;
};

/// -w·log σ(β[Δ(y_w) - Δ(y_l)]) with Δ(y) = -FM_θ(y) + FM_ref(y). Gradient flows through the
/// model terms only.
DpoResult ra_dpo_loss(const ToyVelocityModel& model, const ToyVelocityModel& reference, const PreferencePair& pair,
                      const FlowSample& sample, double beta, double w_t);

struct LossWeights {
  double sft = 1.0;
  double ra = 1.0;
  double align = 0.1;
};

struct LossBundle {
  double sft = 0.0;
  double ra_dpo = 0.0;
  double align = 0.0;
  double total = 0.0;
  LossWeights weights;
  double dpo_beta = 0.1;
  double noise_weight = 1.0;
  std::vector<double> grad;
};

LossBundle total_loss(const LossTerm& sft, const LossTerm& ra, const LossTerm& align, const LossWeights& weights);

/// reference ← γ·reference + (1 - γ)·model, per parameter.
void ema_update(ToyVelocityModel& reference, const ToyVelocityModel& model, double gamma);

struct ToyTrainConfig {
  ModelVariant variant = ModelVariant::Linear;
  std::size_t latent_dim = 16;
  std::size_t cond_dim = 8;
  std::size_t hidden_dim = 32;
  std::size_t num_samples = 4;
  std::size_t steps = 2000;
  double lr = 1e-2;
  std::uint64_t seed = 3;
  LossWeights weights{1.0, 0.0, 0.0};
  double dpo_beta = 0.1;
  NoiseWeight schedule = NoiseWeight::Constant;
  double t_w = 0.2;
  double t_l = 0.8;
  double ema_decay = 0.9999;
  double soft_threshold = 0.0;  // applied to the motion masks that drive corruption
};

struct TrainTraceRow {
  std::size_t step = 0;
  double sft = 0.0;
  double ra_dpo = 0.0;
  double align = 0.0;
  double total = 0.0;
  double fm_w = 0.0;
  double fm_l = 0.0;
};

/// Fixed synthetic dataset used by the trainer; exposed for verification.
struct ToyDataset {
  std::vector<FlowSample> samples;
  std::vector<Tensor> masks;
  std::vector<PreferencePair> pairs;
  Tensor geo_tokens;   // trainable geometric tokens for the alignment term
  Tensor appearance;   // fixed pooled appearance features
};

ToyDataset make_toy_dataset(const ToyTrainConfig& config, Rng& rng);

struct ToyTrainResult {
  std::vector<TrainTraceRow> trace;  // steps + 1 rows: before each update and after the last
  ToyVelocityModel model;
  ToyVelocityModel reference;
  ToyDataset data;
};

/// Full-batch gradient descent on the weighted objective. Throws TrainingError on NaN/Inf.
ToyTrainResult toy_train_demo(const ToyTrainConfig& config);

/// CSV `step,sft,ra_dpo,align,total,fm_w,fm_l`.
std::string trace_to_csv(const std::vector<TrainTraceRow>& trace);

/// One tensor file per parameter plus `<stem>.json` manifest in `dir`.
void save_model(const ToyVelocityModel& model, const std::filesystem::path& dir, const std::string& stem);
ToyVelocityModel load_model(const std::filesystem::path& manifest);

}  // namespace rfg
