#pragma once

#include <optional>
#include <vector>

#include "planeinit/core.hpp"

namespace planeinit {

inline Mat3 skew(const Vec3& v) {
  Mat3 s;
  s << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return s;
}

// exp of a rotation vector as a unit quaternion.
inline Quat quat_exp(const Vec3& omega) {
  const double angle = omega.norm();
  if (angle < 1e-12) {
    Quat q(1.0, 0.5 * omega.x(), 0.5 * omega.y(), 0.5 * omega.z());
    q.normalize();
    return q;
  }
  const Vec3 axis = omega / angle;
  return Quat(Eigen::AngleAxisd(angle, axis));
}

// pi([x,y,z]) = [x/z, y/z], Eq.-style perspective division.
inline Vec2 normalize_pi(const Vec3& v) {
  if (std::abs(v.z()) <= tol::kHomogeneousZ) {
    throw DegenerateDepth("normalize_pi: |z| below threshold");
  }
  return Vec2(v.x() / v.z(), v.y() / v.z());
}

struct Projection {
  Vec2 pixel;
  double depth;  // z in the camera frame
};

// Pixel of world point P in a camera (R_cw, center C): pi(K (R (P - C))).
inline Projection project(const CameraIntrinsics& k, const Pose& pose, const Vec3& point) {
  const Vec3 xc = pose.rotation * (point - pose.translation);
  if (xc.z() <= tol::kMinDepth) {
    throw BehindCamera("project: point depth non-positive");
  }
  return {Vec2(k.fx * xc.x() / xc.z() + k.cx, k.fy * xc.y() / xc.z() + k.cy), xc.z()};
}

// Two-frame homography, camera-frame parameterization:
//   H = K (R_21 - t_21 n1^T / d1) K^{-1}
// t_21 is the position of camera 1 expressed in camera-2 coordinates and
// (n1, d1) the plane n1^T x + d1 = 0 in camera-1 coordinates.
inline Homography homography_from_pose_plane(const CameraIntrinsics& k, const Quat& r_21,
                                             const Vec3& t_21_in_c2, const Vec3& n_in_c1,
                                             double d_c1) {
  if (std::abs(d_c1) <= tol::kMinPlaneDistance) {
    throw DegeneratePlane("homography_from_pose_plane: |d| below threshold");
  }
  const Mat3 calibrated =
      r_21.toRotationMatrix() - (t_21_in_c2 / d_c1) * n_in_c1.transpose();
  return Homography::from(k.matrix() * calibrated * k.inverse_matrix());
}

// World-frame parameterization with the plane distance absorbed:
//   H = K R_i (I - t n^T) R_1^T K^{-1}
// where t = (C_i - C_1) / dist is the scaled camera-center offset and n the
// world-frame normal of the canonical plane (d <= 0).
inline Homography homography_world_form(const CameraIntrinsics& k, const Quat& r_i,
                                        const Quat& r_1, const Vec3& t_i1_world,
                                        const Vec3& n_world) {
  const Mat3 middle = Mat3::Identity() - t_i1_world * n_world.transpose();
  return Homography::from(k.matrix() * r_i.toRotationMatrix() * middle *
                          r_1.toRotationMatrix().transpose() * k.inverse_matrix());
}

// Pixel transfer p -> pi(H [p;1]).
inline Vec2 transfer(const Homography& h, const Vec2& p) {
  return normalize_pi(h.m * Vec3(p.x(), p.y(), 1.0));
}

// Planar depth of the ray through `pixel` in the given camera:
//   m = (-d - n^T C) / (n^T R_wc K^{-1} p)
// with C the camera center in world coordinates.
inline double recover_depth(const CameraIntrinsics& k, const Pose& pose,
                            const PlaneParams& plane, const Vec2& pixel) {
  const Vec3 ray_cam = k.inverse_matrix() * Vec3(pixel.x(), pixel.y(), 1.0);
  const Vec3 ray_world = pose.rotation.conjugate() * ray_cam;
  const double denom = plane.normal.dot(ray_world);
  if (std::abs(denom) <= tol::kRayPlaneDenominator) {
    throw RayParallelToPlane("recover_depth: ray parallel to plane");
  }
  const double m = (-plane.distance - plane.normal.dot(pose.translation)) / denom;
  if (m <= 0.0) {
    throw NegativeDepth("recover_depth: non-positive planar depth");
  }
  return m;
}

// Back-project one observation onto the plane and return the world point.
inline Vec3 backproject_on_plane(const CameraIntrinsics& k, const Pose& pose,
                                 const PlaneParams& plane, const Vec2& pixel) {
  const double m = recover_depth(k, pose, plane, pixel);
  const Vec3 ray_cam = k.inverse_matrix() * Vec3(pixel.x(), pixel.y(), 1.0);
  return pose.rotation.conjugate() * (m * ray_cam) + pose.translation;
}

struct ReconstructionStats {
  int dropped_tracks = 0;
};

// Planar map recovery: back-project every observation of a track with Eq.-(8)
// depths and average the resulting world points across frames. Tracks with no
// valid (positive-depth) observation are dropped and counted.
inline std::vector<Landmark> reconstruct_landmarks(const FrameWindow& window,
                                                   const std::vector<Pose>& poses,
                                                   const PlaneParams& plane,
                                                   ReconstructionStats* stats = nullptr) {
  if (window.frames.empty()) throw EmptyWindow("reconstruct_landmarks: empty window");
  if (poses.size() != window.frames.size()) {
    throw DegenerateConfiguration("reconstruct_landmarks: pose count mismatch");
  }
  std::map<TrackId, std::pair<Vec3, int>> sums;
  for (size_t i = 0; i < window.frames.size(); ++i) {
    for (const auto& [id, px] : window.frames[i].observations) {
      try {
        const Vec3 p = backproject_on_plane(window.intrinsics, poses[i], plane, px);
        auto [it, inserted] = sums.try_emplace(id, Vec3::Zero(), 0);
        it->second.first += p;
        it->second.second += 1;
      } catch (const Error&) {
        sums.try_emplace(id, Vec3::Zero(), 0);  // keep the track visible for the drop count
      }
    }
  }
  std::vector<Landmark> out;
  out.reserve(sums.size());
  int dropped = 0;
  for (const auto& [id, acc] : sums) {
    if (acc.second == 0) {
      ++dropped;
      continue;
    }
    out.push_back({id, acc.first / acc.second});
  }
  if (stats) stats->dropped_tracks = dropped;
  return out;
}

}  // namespace planeinit
