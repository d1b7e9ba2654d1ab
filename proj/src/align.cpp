#include "rfg/align.hpp"

#include <cmath>
#include <set>

#include "rfg/error.hpp"

namespace rfg {

namespace {

Tensor gaussian(Shape shape, double scale, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = scale * rng.normal();
  return t;
}

// Slice `i` of a rank-3 tensor as a rows×cols matrix.
Tensor slice3(const Tensor& t, std::size_t i) {
  const std::size_t rows = t.dim(1), cols = t.dim(2);
  const auto begin = t.data().begin() + static_cast<std::ptrdiff_t>(i * rows * cols);
  return Tensor({rows, cols}, std::vector<double>(begin, begin + static_cast<std::ptrdiff_t>(rows * cols)));
}

void put3(Tensor& t, std::size_t i, const Tensor& m) {
  std::copy(m.data().begin(), m.data().end(), t.data().begin() + static_cast<std::ptrdiff_t>(i * m.size()));
}

}  // namespace

CompressionParams CompressionParams::random(std::size_t source_dim, std::size_t model_dim, std::size_t num_tokens,
                                            Rng& rng) {
  CompressionParams p;
  p.proj.push_back({gaussian({source_dim, model_dim}, 1.0 / std::sqrt(static_cast<double>(source_dim)), rng),
                    Tensor({model_dim})});
  p.queries = gaussian({num_tokens, model_dim}, 1.0, rng);
  p.w_q = p.w_k = p.w_v = Tensor::identity(model_dim);
  p.null_tokens = gaussian({num_tokens, model_dim}, 0.02, rng);
  return p;
}

Tensor project_features(const Tensor& features, const CompressionParams& params) {
  if (features.rank() != 3) throw DimensionError("project_features: expected rank-3 features, got " + shape_str(features.shape()));
  if (params.proj.empty()) throw DimensionError("project_features: no projection layers");
  const std::size_t n = features.dim(0), p = features.dim(1);
  Tensor x = features.reshaped({n * p, features.dim(2)});
  for (std::size_t l = 0; l < params.proj.size(); ++l) {
    const auto& layer = params.proj[l];
    if (layer.weight.rank() != 2 || layer.weight.dim(0) != x.dim(1) || layer.bias.shape() != Shape{layer.weight.dim(1)}) {
      throw DimensionError("project_features: layer " + std::to_string(l) + " weight " + shape_str(layer.weight.shape()) +
                           " / bias " + shape_str(layer.bias.shape()) + " incompatible with input width " +
                           std::to_string(x.dim(1)));
    }
    Tensor y = matmul(x, layer.weight);
    const std::size_t out = layer.weight.dim(1);
    for (std::size_t r = 0; r < y.dim(0); ++r) {
      for (std::size_t c = 0; c < out; ++c) {
        double& v = y[r * out + c];
        v += layer.bias[c];
        if (l + 1 < params.proj.size()) v = std::tanh(v);
      }
    }
    x = std::move(y);
  }
  return x.reshaped({n, p, x.dim(1)});
}

AttentionOutput cross_attention(const Tensor& projected, const CompressionParams& params, Rng& rng, bool training) {
  if (projected.rank() != 3) throw DimensionError("compress_tokens: expected rank-3 input, got " + shape_str(projected.shape()));
  if (params.queries.rank() != 2) throw DimensionError("compress_tokens: queries must be N_tok×D");
  const std::size_t n = projected.dim(0), p = projected.dim(1), d = projected.dim(2);
  const std::size_t ntok = params.queries.dim(0);
  if (params.queries.dim(1) != d) {
    throw DimensionError("compress_tokens: queries " + shape_str(params.queries.shape()) + " vs feature width " + std::to_string(d));
  }
  if (params.null_tokens.shape() != params.queries.shape()) {
    throw DimensionError("compress_tokens: null tokens " + shape_str(params.null_tokens.shape()) + " must match queries " +
                         shape_str(params.queries.shape()));
  }
  if (params.use_projections) {
    for (const Tensor* w : {&params.w_q, &params.w_k, &params.w_v}) {
      if (w->shape() != Shape{d, d}) throw DimensionError("compress_tokens: attention projections must be D×D");
    }
  }
  if (!(params.p_drop >= 0.0 && params.p_drop <= 1.0)) throw DomainError("compress_tokens: p_drop must be in [0, 1]");

  const Tensor q = params.use_projections ? matmul(params.queries, params.w_q) : params.queries;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  AttentionOutput out{Tensor({n, ntok, d}), Tensor({n, ntok, p}), std::vector<bool>(n, false)};
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor f = slice3(projected, i);
    const Tensor k = params.use_projections ? matmul(f, params.w_k) : f;
    const Tensor v = params.use_projections ? matmul(f, params.w_v) : f;
    const Tensor weights = softmax_rows(scale(matmul(q, transpose(k)), inv_sqrt_d));
    put3(out.weights, i, weights);
    if (training && rng.bernoulli(params.p_drop)) {
      out.dropped[i] = true;
      put3(out.tokens, i, params.null_tokens);
    } else {
      put3(out.tokens, i, matmul(weights, v));
    }
  }
  return out;
}

Tensor compress_tokens(const Tensor& projected, const CompressionParams& params, Rng& rng, bool training) {
  return cross_attention(projected, params, rng, training).tokens;
}

Tensor pool_appearance(const std::vector<Tensor>& layer_tokens) {
  if (layer_tokens.empty()) throw DomainError("pool_appearance: no layers");
  const Shape& shape = layer_tokens.front().shape();
  if (shape.size() != 3 || shape[1] == 0) throw DimensionError("pool_appearance: layers must be (B·N_c)×N_s×D with N_s >= 1");
  const std::size_t n = shape[0], ns = shape[1], d = shape[2];
  Tensor out({n, d});
  for (const auto& layer : layer_tokens) {
    if (layer.shape() != shape) throw DimensionError("pool_appearance: layers must share one shape");
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < d; ++c) {
        double s = 0.0;
        for (std::size_t t = 0; t < ns; ++t) s += layer[(i * ns + t) * d + c];
        out[i * d + c] += s / static_cast<double>(ns);
      }
    }
  }
  return scale(out, 1.0 / static_cast<double>(layer_tokens.size()));
}

AlignmentResult alignment_loss(const Tensor& geo_tokens, const Tensor& appearance, double eps) {
  if (geo_tokens.rank() != 3 || appearance.rank() != 2 || geo_tokens.dim(0) != appearance.dim(0) ||
      geo_tokens.dim(2) != appearance.dim(1) || geo_tokens.dim(1) == 0 || geo_tokens.dim(0) == 0) {
    throw DimensionError("alignment_loss: tokens " + shape_str(geo_tokens.shape()) + " vs appearance " +
                         shape_str(appearance.shape()));
  }
  const std::size_t n = geo_tokens.dim(0), ntok = geo_tokens.dim(1), d = geo_tokens.dim(2);
  AlignmentResult out{0.0, Tensor(geo_tokens.shape()), Tensor(appearance.shape())};
  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<double> g(d), dg(d);
  double cos_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(g.begin(), g.end(), 0.0);
    for (std::size_t k = 0; k < ntok; ++k)
      for (std::size_t c = 0; c < d; ++c) g[c] += geo_tokens[(i * ntok + k) * d + c];
    for (auto& v : g) v /= static_cast<double>(ntok);
    const double* r = appearance.data().data() + i * d;

    double gg = 0.0, rr = 0.0, gr = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      gg += g[c] * g[c];
      rr += r[c] * r[c];
      gr += g[c] * r[c];
    }
    const double gn = std::sqrt(gg), rn = std::sqrt(rr);
    if ((gn == 0.0 || rn == 0.0) && !(eps > 0.0)) {
      throw DomainError("alignment_loss: zero-norm vector in sample " + std::to_string(i) + " without epsilon guard");
    }
    const double ga = gn + eps, ra = rn + eps;
    cos_sum += gr / (ga * ra);

    // d cos / d g = r̂/ga - g (g·r̂) / (gn ga²), symmetric for r.
    const double g_coef = gn > 0.0 ? gr / (ra * gn * ga * ga) : 0.0;
    const double r_coef = rn > 0.0 ? gr / (ga * rn * ra * ra) : 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      dg[c] = -inv_n * (r[c] / (ra * ga) - g[c] * g_coef);
      out.grad_appearance[i * d + c] = -inv_n * (g[c] / (ga * ra) - r[c] * r_coef);
    }
    for (std::size_t k = 0; k < ntok; ++k)
      for (std::size_t c = 0; c < d; ++c) out.grad_tokens[(i * ntok + k) * d + c] = dg[c] / static_cast<double>(ntok);
  }
  out.loss = 1.0 - cos_sum * inv_n;
  return out;
}

Tensor synthesize_geo_features(std::size_t samples, std::size_t patches, std::size_t dim, Rng& rng) {
  constexpr std::size_t rank = 4;
  const Tensor basis = gaussian({rank, dim}, 1.0, rng);
  Tensor out({samples, patches, dim});
  for (std::size_t i = 0; i < samples; ++i) {
    for (std::size_t p = 0; p < patches; ++p) {
      double mix[rank];
      for (auto& m : mix) m = rng.normal();
      for (std::size_t c = 0; c < dim; ++c) {
        double v = 0.1 * rng.normal();
        for (std::size_t r = 0; r < rank; ++r) v += mix[r] * basis[r * dim + c];
        out[(i * patches + p) * dim + c] = v;
      }
    }
  }
  return out;
}

CompressionParams compression_params_from_json(const nlohmann::json& doc, std::size_t source_dim, Rng& rng) {
  static const std::set<std::string> known = {"model_dim", "num_tokens", "p_drop", "use_projections", "proj_layers"};
  if (!doc.is_object()) throw ConfigError("compression config: expected a JSON object");
  for (const auto& [key, value] : doc.items()) {
    if (!known.contains(key)) throw ConfigError("compression config: unknown key '" + key + "'");
  }
  const auto model_dim = doc.value("model_dim", std::size_t{1152});
  const auto num_tokens = doc.value("num_tokens", std::size_t{16});
  const auto layers = doc.value("proj_layers", std::size_t{1});
  if (model_dim == 0 || num_tokens == 0 || layers == 0) throw ConfigError("compression config: dimensions must be >= 1");
  CompressionParams p = CompressionParams::random(source_dim, model_dim, num_tokens, rng);
  for (std::size_t l = 1; l < layers; ++l) {
    p.proj.push_back({gaussian({model_dim, model_dim}, 1.0 / std::sqrt(static_cast<double>(model_dim)), rng), Tensor({model_dim})});
  }
  p.p_drop = doc.value("p_drop", 0.1);
  if (!(p.p_drop >= 0.0 && p.p_drop < 1.0)) throw ConfigError("compression config: p_drop must be in [0, 1)");
  p.use_projections = doc.value("use_projections", false);
  return p;
}

}  // namespace rfg
