#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <string>
#include <vector>

#include "planeinit/core.hpp"
#include "planeinit/estimation.hpp"

namespace planeinit {

// Similarity fitted as argmin sum ||(R p[t] + T) - s p_gt[t]||^2 — rotation
// and translation act on the estimate, the scale on the ground truth.
struct SimilarityTransform {
  double scale = 1.0;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  // Estimate point expressed in ground-truth coordinates.
  Vec3 to_ground_truth(const Vec3& p) const { return (rotation * p + translation) / scale; }
};

// One benchmark row.
struct MetricsReport {
  std::string method;
  int frames = 0;
  std::uint64_t seed = 0;
  double ate = 0.0;       // scene units
  double pne_deg = 0.0;
  double pde = 0.0;
  double avg_time_ms = 0.0;
  double optim_time_ms = 0.0;
  bool converged = true;
  std::string error;      // empty on success
};

namespace detail {

inline void check_not_collinear(const std::vector<Vec3>& pts) {
  Vec3 centroid = Vec3::Zero();
  for (const auto& p : pts) centroid += p;
  centroid /= static_cast<double>(pts.size());
  Mat3 cov = Mat3::Zero();
  for (const auto& p : pts) {
    const Vec3 d = p - centroid;
    cov += d * d.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
  const auto& ev = eig.eigenvalues();  // ascending
  if (ev(2) <= 1e-24 || ev(1) <= 1e-12 * ev(2)) {
    throw DegenerateTrajectory("umeyama_align: collinear or coincident positions");
  }
}

}  // namespace detail

// Closed-form minimizer of the Eq.-(9) objective.
inline SimilarityTransform umeyama_align(const std::vector<Vec3>& traj,
                                         const std::vector<Vec3>& traj_gt) {
  if (traj.size() != traj_gt.size()) {
    throw DegenerateTrajectory("umeyama_align: length mismatch");
  }
  if (traj.size() < 3) throw DegenerateTrajectory("umeyama_align: needs >= 3 positions");
  detail::check_not_collinear(traj);
  detail::check_not_collinear(traj_gt);

  const double n = static_cast<double>(traj.size());
  Vec3 mean_x = Vec3::Zero(), mean_y = Vec3::Zero();
  for (size_t i = 0; i < traj.size(); ++i) {
    mean_x += traj[i];
    mean_y += traj_gt[i];
  }
  mean_x /= n;
  mean_y /= n;

  Mat3 cross = Mat3::Zero();  // sum of y~ x~^T
  double y_sq = 0.0;
  for (size_t i = 0; i < traj.size(); ++i) {
    const Vec3 x = traj[i] - mean_x;
    const Vec3 y = traj_gt[i] - mean_y;
    cross += y * x.transpose();
    y_sq += y.squaredNorm();
  }

  Eigen::JacobiSVD<Mat3> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) d(2, 2) = -1.0;
  // R maximizing sum y~^T R x~ is U D V^T of cross = U S V^T.
  const Mat3 rotation = svd.matrixU() * d * svd.matrixV().transpose();

  const double gain = (rotation.transpose() * cross).trace();  // sum y~^T R x~
  if (!(y_sq > 0.0)) throw DegenerateTrajectory("umeyama_align: coincident ground truth");
  const double scale = gain / y_sq;
  if (!(scale > 0.0)) {
    throw DegenerateTrajectory("umeyama_align: non-positive scale");
  }

  SimilarityTransform out;
  out.scale = scale;
  out.rotation = rotation;
  out.translation = scale * mean_y - rotation * mean_x;
  return out;
}

// Absolute translation error: RMSE of the aligned positions, Eq. (10).
inline double ate(const std::vector<Vec3>& traj, const std::vector<Vec3>& traj_gt) {
  const SimilarityTransform sim = umeyama_align(traj, traj_gt);
  double sum = 0.0;
  for (size_t i = 0; i < traj.size(); ++i) {
    sum += (sim.to_ground_truth(traj[i]) - traj_gt[i]).squaredNorm();
  }
  return std::sqrt(sum / static_cast<double>(traj.size()));
}

// Plane normal error in degrees; the absolute inner product makes
// anti-parallel normals (the same plane) score zero.
inline double pne(const PlaneParams& plane, const PlaneParams& plane_gt) {
  const double c = std::abs(plane.normal.dot(plane_gt.normal));
  return std::acos(std::min(1.0, c)) * 180.0 / M_PI;
}

// Plane distance error |d - d_gt| on canonically signed planes.
inline double pde(const PlaneParams& plane, const PlaneParams& plane_gt) {
  return std::abs(plane.canonicalized().distance - plane_gt.canonicalized().distance);
}

// Map a plane through the trajectory's similarity into ground-truth space.
inline PlaneParams transform_plane(const PlaneParams& plane, const SimilarityTransform& sim) {
  const Vec3 n = (sim.rotation * plane.normal).normalized();
  const double d = (plane.distance - n.dot(sim.translation)) / sim.scale;
  return PlaneParams(n, d).canonicalized();
}

// Full metric pipeline for one initialization run: Umeyama alignment, ATE,
// then PNE/PDE of the plane refit on the aligned landmarks by 3-point RANSAC.
inline MetricsReport compute_metrics(const InitializationResult& result,
                                     const std::vector<Pose>& gt_poses,
                                     const PlaneParams& gt_plane,
                                     double plane_fit_threshold = 0.01,
                                     std::uint64_t plane_fit_seed = 1) {
  MetricsReport report;
  report.method = result.method;
  report.frames = static_cast<int>(result.poses.size());
  report.converged = result.converged;
  report.avg_time_ms = result.total_time_ms / std::max(1, report.frames);
  report.optim_time_ms = result.optim_time_ms;

  std::vector<Vec3> est, gt;
  for (const auto& p : result.poses) est.push_back(p.translation);
  for (const auto& p : gt_poses) gt.push_back(p.translation);
  const SimilarityTransform sim = umeyama_align(est, gt);

  double sum = 0.0;
  for (size_t i = 0; i < est.size(); ++i) {
    sum += (sim.to_ground_truth(est[i]) - gt[i]).squaredNorm();
  }
  report.ate = std::sqrt(sum / static_cast<double>(est.size()));

  if (result.landmarks.size() < 3) {
    throw DegenerateConfiguration("compute_metrics: too few landmarks for a plane fit");
  }
  std::vector<Landmark> aligned;
  aligned.reserve(result.landmarks.size());
  for (const auto& lm : result.landmarks) {
    aligned.push_back({lm.id, sim.to_ground_truth(lm.position)});
  }
  const PlaneParams fit =
      fit_plane_ransac(aligned, plane_fit_threshold, plane_fit_seed).model;
  report.pne_deg = pne(fit, gt_plane);
  report.pde = pde(fit, gt_plane);
  return report;
}

}  // namespace planeinit
