#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "planeinit/core.hpp"
#include "planeinit/geometry.hpp"
#include "planeinit/rng.hpp"

namespace planeinit {

enum class Trajectory { kOrbit, kLateral, kForward, kPureRotation, kRandomWalk };

inline const char* to_string(Trajectory t) {
  switch (t) {
    case Trajectory::kOrbit: return "orbit";
    case Trajectory::kLateral: return "lateral";
    case Trajectory::kForward: return "forward";
    case Trajectory::kPureRotation: return "pure_rotation";
    case Trajectory::kRandomWalk: return "random_walk";
  }
  return "orbit";
}

inline Trajectory trajectory_from_string(const std::string& s) {
  if (s == "orbit") return Trajectory::kOrbit;
  if (s == "lateral") return Trajectory::kLateral;
  if (s == "forward") return Trajectory::kForward;
  if (s == "pure_rotation") return Trajectory::kPureRotation;
  if (s == "random_walk") return Trajectory::kRandomWalk;
  throw DegenerateConfiguration("unknown trajectory type: " + s);
}

// Synthetic stand-in for a chessboard capture: a planar grid about 1 m in
// front of the cameras, optional off-plane clutter, pixel noise and outliers.
struct SceneConfig {
  int frames = 30;
  int plane_points = 100;          // rounded down to a near-square grid
  int clutter_points = 0;
  double grid_extent = 0.5;        // metres, side length of the grid
  Trajectory trajectory = Trajectory::kOrbit;
  double pixel_noise = 0.0;        // sigma, px
  double outlier_ratio = 0.0;      // fraction of observations replaced
  double rotation_noise_deg = 0.0;
  int image_width = 640;
  int image_height = 480;
  CameraIntrinsics intrinsics{500.0, 500.0, 320.0, 240.0};
  std::uint64_t seed = 1;

  void validate() const {
    if (frames < 2) throw DegenerateConfiguration("SceneConfig: frames < 2");
    if (plane_points < 4) throw DegenerateConfiguration("SceneConfig: plane_points < 4");
    if (pixel_noise < 0.0) throw DegenerateConfiguration("SceneConfig: negative pixel noise");
    if (outlier_ratio < 0.0 || outlier_ratio >= 1.0) {
      throw DegenerateConfiguration("SceneConfig: outlier ratio outside [0,1)");
    }
    if (rotation_noise_deg < 0.0) {
      throw DegenerateConfiguration("SceneConfig: negative rotation noise");
    }
  }
};

struct GroundTruth {
  std::vector<Pose> poses;                  // metric, world frame
  PlaneParams plane;                        // canonical sign
  std::vector<Landmark> landmarks;          // plane points first, then clutter
  std::vector<bool> on_plane;               // parallel to landmarks
  std::vector<std::map<TrackId, Vec2>> clean_pixels;  // per frame, noise-free
};

namespace detail {

// R_cw for a camera at `center` looking at `target` (z forward, y down-ish).
inline Quat look_at(const Vec3& center, const Vec3& target) {
  const Vec3 forward = (target - center).normalized();
  Vec3 right = Vec3(0.0, 1.0, 0.0).cross(forward);
  if (right.norm() < 1e-8) right = Vec3(1.0, 0.0, 0.0);
  right.normalize();
  const Vec3 down = forward.cross(right);
  Mat3 r_wc;
  r_wc.col(0) = right;
  r_wc.col(1) = down;
  r_wc.col(2) = forward;
  return Quat(r_wc.transpose());
}

inline std::vector<Pose> make_trajectory(const SceneConfig& cfg, Rng& rng) {
  const int m = cfg.frames;
  const Vec3 plane_center(0.0, 0.0, 1.0);
  std::vector<Pose> poses(m);
  switch (cfg.trajectory) {
    case Trajectory::kOrbit: {
      const double radius = 0.35;
      for (int i = 0; i < m; ++i) {
        const double s = (m > 1) ? static_cast<double>(i) / (m - 1) : 0.0;
        const double theta = s * 2.5;  // ~143 degrees of arc
        const Vec3 c(radius * std::cos(theta), radius * std::sin(theta),
                     0.15 * std::sin(2.0 * theta));
        poses[i].translation = c;
        poses[i].rotation = look_at(c, plane_center);
      }
      break;
    }
    case Trajectory::kLateral: {
      for (int i = 0; i < m; ++i) {
        const double s = (m > 1) ? static_cast<double>(i) / (m - 1) : 0.0;
        poses[i].translation = Vec3(-0.2 + 0.4 * s, 0.0, 0.0);
        poses[i].rotation = Quat::Identity();
      }
      break;
    }
    case Trajectory::kForward: {
      for (int i = 0; i < m; ++i) {
        const double s = (m > 1) ? static_cast<double>(i) / (m - 1) : 0.0;
        poses[i].translation = Vec3(0.0, 0.0, 0.5 * s);
        poses[i].rotation = Quat::Identity();
      }
      break;
    }
    case Trajectory::kPureRotation: {
      for (int i = 0; i < m; ++i) {
        const double s = (m > 1) ? static_cast<double>(i) / (m - 1) : 0.0;
        const double theta = s * 2.0 * M_PI;
        const Vec3 target = plane_center + Vec3(0.15 * std::cos(theta),
                                                0.15 * std::sin(theta), 0.0);
        poses[i].translation = Vec3::Zero();
        poses[i].rotation = look_at(Vec3::Zero(), target);
      }
      break;
    }
    case Trajectory::kRandomWalk: {
      Vec3 c = Vec3::Zero();
      for (int i = 0; i < m; ++i) {
        if (i > 0) c += 0.02 * rng.unit_vector();
        c.z() = std::clamp(c.z(), -0.4, 0.4);
        poses[i].translation = c;
        poses[i].rotation = look_at(c, plane_center);
      }
      break;
    }
  }
  return poses;
}

}  // namespace detail

// Compose each rotation (except the reference frame) with an independent
// random axis-angle perturbation of magnitude ~ N(0, sigma^2).
inline FrameWindow perturb_rotations(const FrameWindow& window, double sigma_deg,
                                     std::uint64_t seed) {
  if (sigma_deg < 0.0) throw DegenerateConfiguration("perturb_rotations: negative sigma");
  FrameWindow out = window;
  if (sigma_deg == 0.0) return out;
  Rng rng(seed);
  const double sigma_rad = sigma_deg * M_PI / 180.0;
  for (size_t i = 1; i < out.frames.size(); ++i) {
    const Vec3 axis = rng.unit_vector();
    const double angle = rng.normal(0.0, sigma_rad);
    Quat q = out.frames[i].rotation * quat_exp(axis * angle);
    q.normalize();
    out.frames[i].rotation = q;
  }
  return out;
}

// Generate a window plus its ground truth. Fully deterministic per config.
inline std::pair<FrameWindow, GroundTruth> generate_scene(const SceneConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);

  GroundTruth gt;
  gt.plane = PlaneParams(Vec3(0.0, 0.0, 1.0), -1.0);

  // Chessboard-like grid on the plane z = 1.
  const int side = std::max(2, static_cast<int>(std::floor(std::sqrt(double(cfg.plane_points)))));
  const int used = side * side >= cfg.plane_points ? cfg.plane_points : side * side;
  TrackId id = 0;
  for (int gy = 0; gy < side && id < used; ++gy) {
    for (int gx = 0; gx < side && id < used; ++gx) {
      const double half = 0.5 * cfg.grid_extent;
      const double x = -half + cfg.grid_extent * gx / (side - 1);
      const double y = -half + cfg.grid_extent * gy / (side - 1);
      gt.landmarks.push_back({id++, Vec3(x, y, 1.0)});
      gt.on_plane.push_back(true);
    }
  }
  // Clutter floats above the plane (towards the cameras), min 5 cm clearance.
  for (int c = 0; c < cfg.clutter_points; ++c) {
    const double half = 0.5 * cfg.grid_extent;
    const double x = rng.uniform(-half, half);
    const double y = rng.uniform(-half, half);
    const double height = rng.uniform(0.05, 0.3);
    gt.landmarks.push_back({id++, Vec3(x, y, 1.0 - height)});
    gt.on_plane.push_back(false);
  }

  gt.poses = detail::make_trajectory(cfg, rng);

  // Noise-free projections with a visibility check.
  gt.clean_pixels.resize(cfg.frames);
  for (int i = 0; i < cfg.frames; ++i) {
    for (const auto& lm : gt.landmarks) {
      try {
        const Projection proj = project(cfg.intrinsics, gt.poses[i], lm.position);
        if (proj.pixel.x() < 0.0 || proj.pixel.x() > cfg.image_width - 1 ||
            proj.pixel.y() < 0.0 || proj.pixel.y() > cfg.image_height - 1) {
          continue;
        }
        gt.clean_pixels[i][lm.id] = proj.pixel;
      } catch (const BehindCamera&) {
      }
    }
  }

  // Keep tracks seeded in the reference frame with >= 2 observations.
  std::vector<char> keep(gt.landmarks.size(), 0);
  for (const auto& [tid, px] : gt.clean_pixels[0]) {
    int count = 0;
    for (int i = 0; i < cfg.frames; ++i) count += gt.clean_pixels[i].count(tid);
    if (count >= 2) keep[tid] = 1;
    (void)px;
  }
  for (int i = 0; i < cfg.frames; ++i) {
    for (auto it = gt.clean_pixels[i].begin(); it != gt.clean_pixels[i].end();) {
      it = keep[it->first] ? std::next(it) : gt.clean_pixels[i].erase(it);
    }
    if (static_cast<int>(gt.clean_pixels[i].size()) < 4) {
      throw InvisibleScene("generate_scene: fewer than 4 visible tracks in frame " +
                           std::to_string(i));
    }
  }

  FrameWindow window;
  window.intrinsics = cfg.intrinsics;
  window.frames.resize(cfg.frames);
  for (int i = 0; i < cfg.frames; ++i) {
    window.frames[i].rotation = gt.poses[i].rotation;
    for (const auto& [tid, px] : gt.clean_pixels[i]) {
      Vec2 obs = px;
      if (cfg.pixel_noise > 0.0) {
        obs.x() += rng.normal(0.0, cfg.pixel_noise);
        obs.y() += rng.normal(0.0, cfg.pixel_noise);
      }
      if (cfg.outlier_ratio > 0.0 && rng.uniform() < cfg.outlier_ratio) {
        obs = Vec2(rng.uniform(0.0, cfg.image_width - 1.0),
                   rng.uniform(0.0, cfg.image_height - 1.0));
      }
      window.frames[i].observations.emplace(tid, obs);
    }
  }

  if (cfg.rotation_noise_deg > 0.0) {
    window = perturb_rotations(window, cfg.rotation_noise_deg, derive_seed(cfg.seed, 7001));
  }

  window.validate();
  return {std::move(window), std::move(gt)};
}

}  // namespace planeinit
