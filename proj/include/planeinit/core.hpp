#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace planeinit {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;
using TrackId = int;

// Central tolerance table. All geometric guards reference these values.
namespace tol {
inline constexpr double kHomogeneousZ = 1e-12;     // |z| floor for pi(.)
inline constexpr double kMinDepth = 1e-9;          // positive-depth guard in projection
inline constexpr double kMinPlaneDistance = 1e-12; // |d| floor in Eq.(2)
inline constexpr double kRayPlaneDenominator = 1e-12;
inline constexpr double kUnitNorm = 1e-9;          // quaternion / normal unit-norm check
inline constexpr double kMinHomographyDet = 1e-12;
inline constexpr double kMinParallaxAngle = 1e-6;  // rad, triangulation ray angle
inline constexpr double kPureRotationNorm = 1e-3;  // ||H'H - I|| threshold in decomposition
inline constexpr double kLowParallaxPx = 0.5;      // observability guard (median px)
inline constexpr double kDegenerateSvRatio = 1e-9; // DLT rank check, sigma_8/sigma_1
inline constexpr double kCappedResidual = 1e6;     // substitute for degenerate transfers
}  // namespace tol

// Error taxonomy. Every named failure mode in the library throws one of these.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DegenerateDepth : Error { using Error::Error; };
struct BehindCamera : Error { using Error::Error; };
struct DegeneratePlane : Error { using Error::Error; };
struct RayParallelToPlane : Error { using Error::Error; };
struct NegativeDepth : Error { using Error::Error; };
struct EmptyWindow : Error { using Error::Error; };
struct DegenerateConfiguration : Error { using Error::Error; };
struct InsufficientInliers : Error { using Error::Error; };
struct NumericalFailure : Error { using Error::Error; };
struct NoValidSolution : Error { using Error::Error; };
struct InsufficientParallax : Error { using Error::Error; };
struct InsufficientTracks : Error { using Error::Error; };
struct SolverDiverged : Error { using Error::Error; };
struct NoCluster : Error { using Error::Error; };
struct InvisibleScene : Error { using Error::Error; };
struct DegenerateTrajectory : Error { using Error::Error; };

// Pinhole intrinsics (zero skew, no distortion).
struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;

  CameraIntrinsics() = default;
  CameraIntrinsics(double fx_, double fy_, double cx_, double cy_)
      : fx(fx_), fy(fy_), cx(cx_), cy(cy_) {
    if (!(fx > 0.0) || !(fy > 0.0)) {
      throw DegenerateConfiguration("CameraIntrinsics: focal lengths must be positive");
    }
  }

  Mat3 matrix() const {
    Mat3 k;
    k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
    return k;
  }
  Mat3 inverse_matrix() const {
    Mat3 ki;
    ki << 1.0 / fx, 0.0, -cx / fx, 0.0, 1.0 / fy, -cy / fy, 0.0, 0.0, 1.0;
    return ki;
  }
};

// Rotations are stored as unit quaternions and rotate world coordinates into
// the camera frame: x_c = R_cw * x_w.
inline Quat make_rotation(double w, double x, double y, double z) {
  Quat q(w, x, y, z);
  const double n = q.norm();
  if (std::abs(n - 1.0) > 1e-6) {
    throw NumericalFailure("make_rotation: quaternion norm far from 1");
  }
  q.normalize();
  return q;
}

inline bool is_unit_rotation(const Quat& q, double tolerance = tol::kUnitNorm) {
  return std::abs(q.norm() - 1.0) <= tolerance;
}

// Camera pose. `rotation` maps world into camera coordinates; `translation`
// is the camera center in world coordinates, measured from the first camera
// of the window (scale-free units once the plane distance is absorbed).
struct Pose {
  Quat rotation = Quat::Identity();   // R_cw
  Vec3 translation = Vec3::Zero();    // camera center, world frame

  Vec3 center() const { return translation; }
  // Camera-frame translation t_cw with x_c = R_cw x_w + t_cw.
  Vec3 camera_frame_translation() const { return -(rotation * translation); }
};

// Scene plane n^T P + d = 0 with unit n. Canonical sign keeps d <= 0 so a
// camera at the origin looking toward the plane sees it at positive depth.
struct PlaneParams {
  Vec3 normal = Vec3::UnitZ();
  double distance = 0.0;

  PlaneParams() = default;
  PlaneParams(const Vec3& n, double d) : normal(n), distance(d) {
    const double nn = normal.norm();
    if (nn < tol::kUnitNorm) throw DegeneratePlane("PlaneParams: zero normal");
    normal /= nn;
    if (!std::isfinite(distance)) throw DegeneratePlane("PlaneParams: non-finite distance");
  }

  double signed_distance(const Vec3& p) const { return normal.dot(p) + distance; }

  PlaneParams canonicalized() const {
    PlaneParams out = *this;
    if (out.distance > 0.0) {
      out.normal = -out.normal;
      out.distance = -out.distance;
    } else if (out.distance == 0.0) {
      // Plane through the origin: fix the normal sign lexicographically.
      for (int i = 0; i < 3; ++i) {
        if (std::abs(out.normal[i]) > tol::kUnitNorm) {
          if (out.normal[i] < 0.0) out.normal = -out.normal;
          break;
        }
      }
    }
    return out;
  }
};

// 3x3 projective map between pixel coordinates of two views of the plane.
// Gauge: Frobenius norm sqrt(3) and non-negative (2,2) entry so the identity
// maps to itself.
struct Homography {
  Mat3 m = Mat3::Identity();

  static Homography from(const Mat3& raw) {
    const double f = raw.norm();
    if (!(f > 0.0) || !std::isfinite(f)) {
      throw NumericalFailure("Homography: non-finite or zero matrix");
    }
    Homography h;
    h.m = raw * (std::sqrt(3.0) / f);
    double sign = 0.0;
    if (std::abs(h.m(2, 2)) > tol::kHomogeneousZ) {
      sign = h.m(2, 2) > 0.0 ? 1.0 : -1.0;
    } else {
      for (int r = 0; r < 3 && sign == 0.0; ++r)
        for (int c = 0; c < 3 && sign == 0.0; ++c)
          if (std::abs(h.m(r, c)) > tol::kHomogeneousZ) sign = h.m(r, c) > 0.0 ? 1.0 : -1.0;
      if (sign == 0.0) sign = 1.0;
    }
    h.m *= sign;
    if (std::abs(h.m.determinant()) <= tol::kMinHomographyDet) {
      throw DegenerateConfiguration("Homography: singular after normalization");
    }
    return h;
  }
};

struct Landmark {
  TrackId id = 0;
  Vec3 position = Vec3::Zero();  // world frame
};

// A feature track seen in the reference frame (p1) and another frame (p2).
struct Correspondence {
  TrackId id = 0;
  Vec2 p1 = Vec2::Zero();
  Vec2 p2 = Vec2::Zero();
};

// One frame of a sliding window: known world-to-camera rotation plus the
// tracked pixel observations, keyed by track id (ordered map keeps all
// residual stacking deterministic).
struct Frame {
  Quat rotation = Quat::Identity();        // R_cw
  std::map<TrackId, Vec2> observations;
};

// Sliding window handed to the initializers. Frame 0 is the reference; every
// track observed in a later frame must also be observed there.
struct FrameWindow {
  CameraIntrinsics intrinsics;
  std::vector<Frame> frames;

  int frame_count() const { return static_cast<int>(frames.size()); }

  void validate() const {
    if (frames.size() < 2) throw EmptyWindow("FrameWindow: needs at least 2 frames");
    const auto& ref = frames.front().observations;
    for (size_t i = 1; i < frames.size(); ++i) {
      if (!is_unit_rotation(frames[i].rotation)) {
        throw NumericalFailure("FrameWindow: non-unit rotation");
      }
      for (const auto& [id, px] : frames[i].observations) {
        if (!ref.count(id)) {
          throw DegenerateConfiguration("FrameWindow: track missing from reference frame");
        }
        (void)px;
      }
    }
  }

  // Tracks observed both in the reference frame and frame i.
  std::vector<Correspondence> correspondences(int i) const {
    const auto& ref = frames.at(0).observations;
    std::vector<Correspondence> out;
    out.reserve(frames.at(i).observations.size());
    for (const auto& [id, px] : frames.at(i).observations) {
      auto it = ref.find(id);
      if (it != ref.end()) out.push_back({id, it->second, px});
    }
    return out;
  }

  // Restrict all frames to the given track set (ids need not all exist).
  FrameWindow filtered(const std::vector<TrackId>& keep) const {
    FrameWindow out;
    out.intrinsics = intrinsics;
    out.frames.resize(frames.size());
    for (size_t i = 0; i < frames.size(); ++i) {
      out.frames[i].rotation = frames[i].rotation;
      for (TrackId id : keep) {
        auto it = frames[i].observations.find(id);
        if (it != frames[i].observations.end()) out.frames[i].observations.emplace(id, it->second);
      }
    }
    return out;
  }
};

// What every initialization method returns.
struct InitializationResult {
  std::string method;
  std::vector<Pose> poses;            // per frame, camera-to-world convention
  PlaneParams plane;                  // in the reconstruction's scale gauge
  std::vector<Landmark> landmarks;
  double total_time_ms = 0.0;
  double optim_time_ms = 0.0;
  bool converged = true;
  bool low_confidence = false;        // parallax observability guard tripped
  int dropped_tracks = 0;             // tracks lost during landmark recovery
};

}  // namespace planeinit
