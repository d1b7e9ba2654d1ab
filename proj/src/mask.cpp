#include "rfg/mask.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "rfg/error.hpp"

namespace rfg {

std::string_view to_string(MaskKind kind) {
  switch (kind) {
    case MaskKind::Motion: return "motion";
    case MaskKind::Geometric: return "geometric";
    case MaskKind::Fused: return "fused";
  }
  return "fused";
}

void BlobParams::validate() const {
  if (!(sigma_w > 0.0) || !(sigma_h > 0.0)) throw ConfigError("blob params: sigmas must be > 0");
  if (!(soft_threshold >= 0.0 && soft_threshold < 1.0)) throw ConfigError("blob params: soft_threshold must be in [0, 1)");
  if (points_per_agent < 1) throw ConfigError("blob params: points_per_agent must be >= 1");
}

MaskVolume motion_mask(const Tensor& latent, const BlobParams& params) {
  params.validate();
  if (latent.rank() != 6) {
    throw DimensionError("motion_mask: expected B×N_c×C×T×H×W latent, got " + shape_str(latent.shape()));
  }
  for (auto d : latent.shape()) {
    if (d == 0) throw DimensionError("motion_mask: zero-sized dimension in " + shape_str(latent.shape()));
  }
  const auto& s = latent.shape();
  const std::size_t B = s[0], NC = s[1], C = s[2], T = s[3], H = s[4], W = s[5];
  const Tensor diff = temporal_diff(latent, 3);  // throws when T < 2
  const std::size_t plane = H * W;
  const std::size_t frames = T - 1;

  MaskVolume out{Tensor({B, NC, T, H, W}), MaskKind::Motion};
  std::vector<double> slice(frames * plane);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < NC; ++c) {
      std::fill(slice.begin(), slice.end(), 0.0);
      for (std::size_t ch = 0; ch < C; ++ch) {
        const std::size_t base = ((b * NC + c) * C + ch) * frames * plane;
        for (std::size_t i = 0; i < frames * plane; ++i) slice[i] += diff[base + i];
      }
      for (auto& v : slice) v /= static_cast<double>(C);

      const auto [lo_it, hi_it] = std::minmax_element(slice.begin(), slice.end());
      const double lo = *lo_it, range = *hi_it - *lo_it;
      const std::size_t dst = (b * NC + c) * T * plane;
      for (std::size_t i = 0; i < frames * plane; ++i) {
        double v = range > 0.0 ? (slice[i] - lo) / range : 0.0;
        v = std::max(0.0, v - params.soft_threshold) / (1.0 - params.soft_threshold);
        out.data[dst + i] = std::clamp(v, 0.0, 1.0);
      }
      std::copy_n(out.data.data().begin() + static_cast<std::ptrdiff_t>(dst + (frames - 1) * plane), plane,
                  out.data.data().begin() + static_cast<std::ptrdiff_t>(dst + frames * plane));
    }
  }
  return out;
}

std::vector<Vec3> sample_agent_points(const AgentMotion& agent, std::size_t frame, std::size_t count) {
  const auto& states = agent.trajectory.states;
  const auto& st = states.at(frame);
  const double z = agent.size.height / 2.0;
  std::vector<Vec3> pts;
  pts.push_back({st.position.x, st.position.y, z});
  const Vec2 fwd{std::cos(st.heading), std::sin(st.heading)};
  const Vec2 left{-fwd.y, fwd.x};
  const double hl = agent.size.length / 2.0, hw = agent.size.width / 2.0;
  for (const auto& [sl, sw] : {std::pair{1.0, 1.0}, {1.0, -1.0}, {-1.0, -1.0}, {-1.0, 1.0}}) {
    const Vec2 p = st.position + (sl * hl) * fwd + (sw * hw) * left;
    pts.push_back({p.x, p.y, z});
  }
  if (pts.size() >= count) {
    pts.resize(count);
    return pts;
  }
  const std::size_t seg = count - pts.size();
  Vec2 neighbour = st.position;
  if (frame + 1 < states.size()) {
    neighbour = states[frame + 1].position;
  } else if (frame > 0) {
    neighbour = states[frame - 1].position;
  }
  for (std::size_t j = 1; j <= seg; ++j) {
    const double frac = 0.5 * static_cast<double>(j) / static_cast<double>(seg);
    const Vec2 p = st.position + frac * (neighbour - st.position);
    pts.push_back({p.x, p.y, z});
  }
  return pts;
}

Tensor rasterize_points(const CameraModel& camera, std::span<const Vec3> points, const BlobParams& params,
                        std::size_t height, std::size_t width) {
  Tensor img({height, width});
  const double sx = static_cast<double>(width) / camera.width;
  const double sy = static_cast<double>(height) / camera.height;
  const double inv_w = 1.0 / (2.0 * params.sigma_w * params.sigma_w);
  const double inv_h = 1.0 / (2.0 * params.sigma_h * params.sigma_h);
  std::vector<double> gx(width), gy(height);
  for (const auto& p : points) {
    const Projection proj = project_point(camera, p);
    if (!proj.visible) continue;
    const double ux = proj.pixel.x * sx, uy = proj.pixel.y * sy;
    for (std::size_t x = 0; x < width; ++x) gx[x] = (static_cast<double>(x) - ux) * (static_cast<double>(x) - ux) * inv_w;
    for (std::size_t y = 0; y < height; ++y) gy[y] = (static_cast<double>(y) - uy) * (static_cast<double>(y) - uy) * inv_h;
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        double& v = img[y * width + x];
        v = std::max(v, std::exp(-gx[x] - gy[y]));
      }
    }
  }
  return clip(img, 0.0, 1.0);
}

MaskVolume geometric_mask(const Scenario& scenario, std::span<const std::vector<AgentMotion>> batch,
                          const BlobParams& params, std::size_t height, std::size_t width) {
  params.validate();
  if (scenario.cameras.empty()) throw DomainError("geometric_mask: scenario '" + scenario.id + "' has no cameras");
  if (batch.empty()) throw DomainError("geometric_mask: empty motion batch");
  if (height == 0 || width == 0) throw DimensionError("geometric_mask: mask grid must be non-empty");
  const std::size_t T = scenario.num_frames;
  for (const auto& motions : batch) {
    for (const auto& a : motions) {
      if (a.trajectory.size() != T) {
        throw DimensionError("geometric_mask: agent '" + a.id + "' has " + std::to_string(a.trajectory.size()) +
                             " frames, scenario horizon is " + std::to_string(T));
      }
    }
  }
  const std::size_t B = batch.size(), NC = scenario.cameras.size(), plane = height * width;
  MaskVolume out{Tensor({B, NC, T, height, width}), MaskKind::Geometric};
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < T; ++t) {
      std::vector<Vec3> points;
      for (const auto& a : batch[b]) {
        const auto pts = sample_agent_points(a, t, params.points_per_agent);
        points.insert(points.end(), pts.begin(), pts.end());
      }
      for (std::size_t c = 0; c < NC; ++c) {
        const Tensor img = rasterize_points(scenario.cameras[c], points, params, height, width);
        std::copy(img.data().begin(), img.data().end(),
                  out.data.data().begin() + static_cast<std::ptrdiff_t>(((b * NC + c) * T + t) * plane));
      }
    }
  }
  return out;
}

MaskVolume fuse_masks(const MaskVolume& geo, const MaskVolume& mot) {
  if (geo.kind != MaskKind::Geometric || mot.kind != MaskKind::Motion) {
    throw DimensionError(std::string("fuse_masks: expected (geometric, motion), got (") +
                         std::string(to_string(geo.kind)) + ", " + std::string(to_string(mot.kind)) + ")");
  }
  if (geo.data.shape() != mot.data.shape()) {
    throw DimensionError("fuse_masks: shape mismatch " + shape_str(geo.data.shape()) + " vs " +
                         shape_str(mot.data.shape()));
  }
  return {clip(hadamard(geo.data, mot.data), 0.0, 1.0), MaskKind::Fused};
}

Tensor render_agent_latent(const Scenario& scenario, std::span<const std::vector<AgentMotion>> batch,
                           const BlobParams& params, std::size_t height, std::size_t width) {
  const MaskVolume geo = geometric_mask(scenario, batch, params, height, width);
  const auto& s = geo.data.shape();
  return geo.data.reshaped({s[0], s[1], 1, s[2], s[3], s[4]});
}

std::vector<unsigned char> encode_pgm(std::span<const double> slice, std::size_t height, std::size_t width) {
  if (slice.size() != height * width) throw DimensionError("encode_pgm: slice size does not match H×W");
  const std::string header = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  std::vector<unsigned char> out(header.begin(), header.end());
  for (double m : slice) {
    out.push_back(static_cast<unsigned char>(std::lround(255.0 * std::clamp(m, 0.0, 1.0))));
  }
  return out;
}

std::vector<std::string> export_masks(const MaskVolume& mask, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  const std::size_t H = mask.height(), W = mask.width(), plane = H * W;
  std::vector<std::string> names;
  for (std::size_t b = 0; b < mask.batch(); ++b) {
    for (std::size_t c = 0; c < mask.cameras(); ++c) {
      for (std::size_t t = 0; t < mask.frames(); ++t) {
        const std::size_t off = ((b * mask.cameras() + c) * mask.frames() + t) * plane;
        const auto bytes = encode_pgm(mask.data.data().subspan(off, plane), H, W);
        const std::string name = "b" + std::to_string(b) + "_cam" + std::to_string(c) + "_f" + std::to_string(t) + ".pgm";
        std::ofstream os(dir / name, std::ios::binary);
        if (!os) throw IoError("cannot write " + (dir / name).string());
        os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!os) throw IoError("write failed: " + (dir / name).string());
        names.push_back(name);
      }
    }
  }
  return names;
}

}  // namespace rfg
