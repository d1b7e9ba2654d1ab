#pragma once

#include <vector>

#include "json.hpp"
#include "rfg/rng.hpp"
#include "rfg/tensor.hpp"

namespace rfg {

/// y = x·weight + bias, weight is in×out.
struct AffineLayer {
  Tensor weight;
  Tensor bias;
};

/// Parameters of the geometry-token compressor. Projection layers are chained with tanh in
/// between (a single layer by default). When `use_projections` is false the attention uses
/// the projected features directly as keys and values.
struct CompressionParams {
  std::vector<AffineLayer> proj;
  Tensor queries;  // N_tok×D
  bool use_projections = false;
  Tensor w_q, w_k, w_v;  // D×D
  Tensor null_tokens;    // N_tok×D
  double p_drop = 0.1;

  std::size_t model_dim() const { return queries.dim(1); }
  std::size_t num_tokens() const { return queries.dim(0); }

  /// Random Gaussian parameters (scale 1/sqrt(fan_in)) with identity attention projections.
  static CompressionParams random(std::size_t source_dim, std::size_t model_dim, std::size_t num_tokens, Rng& rng);
};

/// Features (B·N_c)×P×D_src -> (B·N_c)×P×D.
Tensor project_features(const Tensor& features, const CompressionParams& params);

struct AttentionOutput {
  Tensor tokens;             // (B·N_c)×N_tok×D, after dropout
  Tensor weights;            // (B·N_c)×N_tok×P attention weights
  std::vector<bool> dropped; // per sample
};

/// Single-head cross-attention softmax(Q Wq (F Wk)ᵀ / sqrt(D)) · F Wv. In training mode each
/// sample is replaced by the null tokens with probability p_drop (one draw per sample, in
/// sample order). Inference never drops and never touches `rng`.
AttentionOutput cross_attention(const Tensor& projected, const CompressionParams& params, Rng& rng, bool training);
Tensor compress_tokens(const Tensor& projected, const CompressionParams& params, Rng& rng, bool training);

/// K layers of (B·N_c)×N_s×D tokens -> (B·N_c)×D: mean over layers of the spatial mean.
Tensor pool_appearance(const std::vector<Tensor>& layer_tokens);

struct AlignmentResult {
  double loss = 0.0;
  Tensor grad_tokens;  // same shape as the geometric tokens
  Tensor grad_appearance;
};

/// 1 - mean_i cos(g_i, r_i) with g_i the token mean; vectors are normalized as v / (|v| + eps).
/// A zero vector with eps <= 0 is a domain error.
AlignmentResult alignment_loss(const Tensor& geo_tokens, const Tensor& appearance, double eps = 1e-12);

/// Low-rank structured features (B·N_c)×P×D: shared patch basis mixed per sample plus noise.
Tensor synthesize_geo_features(std::size_t samples, std::size_t patches, std::size_t dim, Rng& rng);

CompressionParams compression_params_from_json(const nlohmann::json& doc, std::size_t source_dim, Rng& rng);

}  // namespace rfg
