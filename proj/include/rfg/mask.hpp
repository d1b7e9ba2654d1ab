#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "rfg/motion.hpp"
#include "rfg/scenario.hpp"
#include "rfg/tensor.hpp"

namespace rfg {

enum class MaskKind { Motion, Geometric, Fused };
std::string_view to_string(MaskKind kind);

/// B×N_c×T×H×W mask with values in [0, 1].
struct MaskVolume {
  Tensor data;
  MaskKind kind = MaskKind::Fused;

  std::size_t batch() const { return data.dim(0); }
  std::size_t cameras() const { return data.dim(1); }
  std::size_t frames() const { return data.dim(2); }
  std::size_t height() const { return data.dim(3); }
  std::size_t width() const { return data.dim(4); }
};

struct BlobParams {
  double sigma_w = 2.0;  // mask-grid pixels
  double sigma_h = 2.0;
  double soft_threshold = 0.0;
  std::size_t points_per_agent = 9;

  void validate() const;
};

/// Channel-averaged |x[t+1] - x[t]| of a B×N_c×C×T×H×W latent, min-max normalized per
/// (batch, camera), soft-thresholded, with the last frame replicated back to length T.
MaskVolume motion_mask(const Tensor& latent, const BlobParams& params);

/// Sample points for one agent at one frame: box center, the four footprint corners, then
/// points on the half segment toward the neighbouring frame (the next one; the previous one
/// for the last frame). All points sit at box-center height.
std::vector<Vec3> sample_agent_points(const AgentMotion& agent, std::size_t frame, std::size_t count);

/// Max over points of V·exp(-(x-u)²/2σw² - (y-v)²/2σh²) on an H×W grid whose pixel (x, y) maps
/// to camera pixel (x·width/W, y·height/H). Returns an H×W tensor.
Tensor rasterize_points(const CameraModel& camera, std::span<const Vec3> points, const BlobParams& params,
                        std::size_t height, std::size_t width);

/// One batch entry per motion set; output is B×N_c×T×H×W.
MaskVolume geometric_mask(const Scenario& scenario, std::span<const std::vector<AgentMotion>> batch,
                          const BlobParams& params, std::size_t height, std::size_t width);

/// clip(geo ⊙ mot, 0, 1).
MaskVolume fuse_masks(const MaskVolume& geo, const MaskVolume& mot);

/// Synthetic single-channel latent (B×N_c×1×T×H×W): the rasterized agent footprints per frame.
/// Stands in for a video latent when none is supplied.
Tensor render_agent_latent(const Scenario& scenario, std::span<const std::vector<AgentMotion>> batch,
                           const BlobParams& params, std::size_t height, std::size_t width);

/// Binary PGM (P5, maxval 255) bytes for one H×W slice, value round(255·m).
std::vector<unsigned char> encode_pgm(std::span<const double> slice, std::size_t height, std::size_t width);

/// Writes `b{b}_cam{c}_f{t}.pgm` for every slice; returns the file names in write order.
std::vector<std::string> export_masks(const MaskVolume& mask, const std::filesystem::path& dir);

}  // namespace rfg
