#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <optional>
#include <vector>

#include "planeinit/core.hpp"
#include "planeinit/estimation.hpp"
#include "planeinit/geometry.hpp"
#include "planeinit/gpo.hpp"
#include "planeinit/solver.hpp"

namespace planeinit {

enum class BaMode { kBa, kPba, kFpba };
enum class InitSource { kPnp, kDbscan };

// Linear two-view triangulation with parallax and cheirality guards.
inline Landmark triangulate(const Vec2& obs1, const Vec2& obs2, const Pose& pose1,
                            const Pose& pose2, const CameraIntrinsics& k, TrackId id = 0) {
  const Mat3 k_inv = k.inverse_matrix();
  const Vec3 ray1 = (pose1.rotation.conjugate() * (k_inv * Vec3(obs1.x(), obs1.y(), 1.0))).normalized();
  const Vec3 ray2 = (pose2.rotation.conjugate() * (k_inv * Vec3(obs2.x(), obs2.y(), 1.0))).normalized();
  const double angle = std::acos(std::clamp(ray1.dot(ray2), -1.0, 1.0));
  if (angle <= tol::kMinParallaxAngle) {
    throw InsufficientParallax("triangulate: rays nearly parallel");
  }

  auto projection_matrix = [&](const Pose& pose) {
    Eigen::Matrix<double, 3, 4> m;
    m.leftCols<3>() = pose.rotation.toRotationMatrix();
    m.col(3) = -(pose.rotation * pose.translation);
    return (k.matrix() * m).eval();
  };
  const auto m1 = projection_matrix(pose1);
  const auto m2 = projection_matrix(pose2);

  Eigen::Matrix4d a;
  a.row(0) = obs1.x() * m1.row(2) - m1.row(0);
  a.row(1) = obs1.y() * m1.row(2) - m1.row(1);
  a.row(2) = obs2.x() * m2.row(2) - m2.row(0);
  a.row(3) = obs2.y() * m2.row(2) - m2.row(1);

  Eigen::JacobiSVD<Eigen::Matrix4d> svd(a, Eigen::ComputeFullV);
  const Eigen::Vector4d x = svd.matrixV().col(3);
  if (std::abs(x(3)) < 1e-15) throw NumericalFailure("triangulate: point at infinity");
  const Vec3 p = x.head<3>() / x(3);

  if ((pose1.rotation * (p - pose1.translation)).z() <= tol::kMinDepth ||
      (pose2.rotation * (p - pose2.translation)).z() <= tol::kMinDepth) {
    throw NegativeDepth("triangulate: point behind a camera");
  }
  return {id, p};
}

// Fixed-rotation PnP: linear least squares on the projection equations
// followed by a Gauss-Newton polish of the reprojection error.
inline Pose pnp_pose(const std::vector<Landmark>& landmarks, const std::vector<Vec2>& observations,
                     const CameraIntrinsics& k, const Quat& rotation_known) {
  if (landmarks.size() < 4 || landmarks.size() != observations.size()) {
    throw DegenerateConfiguration("pnp_pose: needs >= 4 correspondences");
  }
  std::vector<Vec3> points;
  points.reserve(landmarks.size());
  for (const auto& lm : landmarks) points.push_back(lm.position);

  Vec3 center = detail::solve_translation_linear(k, rotation_known, points, observations);

  const Mat3 kr = k.matrix() * rotation_known.toRotationMatrix();
  for (int iter = 0; iter < 10; ++iter) {
    Mat3 jtj = Mat3::Zero();
    Vec3 jtr = Vec3::Zero();
    for (size_t i = 0; i < points.size(); ++i) {
      const Vec3 g = kr * (points[i] - center);
      if (g.z() <= tol::kMinDepth) continue;
      const double iz = 1.0 / g.z();
      Eigen::Matrix<double, 2, 3> dpi;
      dpi << iz, 0.0, -g.x() * iz * iz, 0.0, iz, -g.y() * iz * iz;
      const Eigen::Matrix<double, 2, 3> j = -(dpi * kr);
      const Vec2 r = Vec2(g.x() * iz, g.y() * iz) - observations[i];
      jtj += j.transpose() * j;
      jtr += j.transpose() * r;
    }
    jtj.diagonal().array() += 1e-12;
    const Vec3 step = jtj.ldlt().solve(-jtr);
    if (!step.allFinite()) break;
    center += step;
    if (step.norm() < 1e-14) break;
  }
  if (!center.allFinite()) throw DegenerateConfiguration("pnp_pose: diverged");
  return Pose{rotation_known, center};
}

// DBSCAN over unit normals with angular distance; returns the normalized
// mean of the largest cluster.
inline Vec3 cluster_normals_dbscan(const std::vector<Vec3>& normals, double eps_deg,
                                   int min_pts) {
  const int n = static_cast<int>(normals.size());
  if (n < min_pts) throw NoCluster("cluster_normals_dbscan: too few candidates");
  const double eps = eps_deg * M_PI / 180.0;

  auto angular = [&](int i, int j) {
    return std::acos(std::clamp(normals[i].dot(normals[j]), -1.0, 1.0));
  };
  std::vector<std::vector<int>> neighbors(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (angular(i, j) <= eps) neighbors[i].push_back(j);
    }
  }

  std::vector<int> label(n, -1);  // -1 unvisited/noise
  int cluster_count = 0;
  for (int i = 0; i < n; ++i) {
    if (label[i] != -1 || static_cast<int>(neighbors[i].size()) < min_pts) continue;
    const int cid = cluster_count++;
    std::vector<int> queue = {i};
    label[i] = cid;
    while (!queue.empty()) {
      const int p = queue.back();
      queue.pop_back();
      if (static_cast<int>(neighbors[p].size()) < min_pts) continue;  // border point
      for (int q : neighbors[p]) {
        if (label[q] == -1) {
          label[q] = cid;
          queue.push_back(q);
        }
      }
    }
  }
  if (cluster_count == 0) throw NoCluster("cluster_normals_dbscan: all points are noise");

  std::vector<int> sizes(cluster_count, 0);
  for (int i = 0; i < n; ++i) {
    if (label[i] >= 0) sizes[label[i]]++;
  }
  const int best = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
  Vec3 mean = Vec3::Zero();
  for (int i = 0; i < n; ++i) {
    if (label[i] == best) mean += normals[i];
  }
  if (mean.norm() < 1e-12) throw NoCluster("cluster_normals_dbscan: degenerate cluster mean");
  return mean.normalized();
}

namespace detail {

// Cheirality-valid normals (camera-1 frame) from one frame pair's decomposition.
inline void collect_normal_candidates(const std::vector<DecompositionSolution>& sols,
                                      const CameraIntrinsics& k,
                                      const std::vector<Correspondence>& corrs,
                                      std::vector<Vec3>& out) {
  const Mat3 k_inv = k.inverse_matrix();
  for (const auto& sol : sols) {
    if (sol.normal_unconstrained) continue;
    bool ok = true;
    for (const auto& c : corrs) {
      const Vec3 ray = k_inv * Vec3(c.p1.x(), c.p1.y(), 1.0);
      const double ndotr = sol.normal.dot(ray);
      if (ndotr <= tol::kRayPlaneDenominator) {
        ok = false;
        break;
      }
      if ((sol.rotation * (ray / ndotr) - sol.t_over_d).z() <= tol::kMinDepth) {
        ok = false;
        break;
      }
    }
    if (ok) out.push_back(sol.normal);
  }
}

// Per-frame translations from planar landmarks and known rotations.
inline std::vector<Pose> poses_from_landmarks(const FrameWindow& window,
                                              const std::vector<Landmark>& landmarks) {
  std::map<TrackId, Vec3> by_id;
  for (const auto& lm : landmarks) by_id[lm.id] = lm.position;

  std::vector<Pose> poses(window.frames.size());
  poses[0].rotation = window.frames[0].rotation;
  poses[0].translation = Vec3::Zero();
  for (size_t i = 1; i < window.frames.size(); ++i) {
    std::vector<Landmark> pts;
    std::vector<Vec2> obs;
    for (const auto& [id, px] : window.frames[i].observations) {
      auto it = by_id.find(id);
      if (it == by_id.end()) continue;
      pts.push_back({id, it->second});
      obs.push_back(px);
    }
    poses[i] = pnp_pose(pts, obs, window.intrinsics, window.frames[i].rotation);
  }
  return poses;
}

}  // namespace detail

struct AggregationConfig {
  RansacConfig ransac;
  double plane_fit_threshold = 0.02;  // scene units in the d = -1 gauge
  double dbscan_eps_deg = 5.0;
  int dbscan_min_pts = 4;
};

// PnP-chain baseline: bootstrap from the (1,2) homography decomposition, then
// alternate fixed-rotation PnP and triangulation frame by frame.
inline InitializationResult init_pnp_chain(const FrameWindow& window, bool ransac_filter,
                                           const AggregationConfig& cfg = {},
                                           std::uint64_t seed = 0) {
  const auto t_start = std::chrono::steady_clock::now();
  window.validate();
  const int m = window.frame_count();
  const CameraIntrinsics& k = window.intrinsics;

  const auto corrs12 = window.correspondences(1);
  const auto h_result = ransac_homography(corrs12, cfg.ransac.threshold_px,
                                          cfg.ransac.max_iterations, derive_seed(seed, 12),
                                          cfg.ransac.confidence);

  std::vector<Correspondence> inlier12;
  for (const auto& c : corrs12) {
    if (std::binary_search(h_result.inliers.begin(), h_result.inliers.end(), c.id)) {
      inlier12.push_back(c);
    }
  }

  const auto solutions = decompose_homography(h_result.model, k);
  DecompositionSolution best;
  if (m >= 3) {
    const Quat r31 = window.frames[2].rotation * window.frames[0].rotation.conjugate();
    best = select_decomposition(solutions, k, inlier12, window.correspondences(2), r31);
  } else {
    best = select_decomposition(solutions, k, inlier12);
  }

  // Camera-2 center under the d_c1 = -1 gauge: C2 = R2^T (t/d) in window
  // world coordinates (the Eq.-2 translation is -t_over_d at d = -1).
  std::vector<Pose> poses(m);
  for (int i = 0; i < m; ++i) poses[i].rotation = window.frames[i].rotation;
  poses[0].translation = Vec3::Zero();
  poses[1].translation = poses[1].rotation.conjugate() * best.t_over_d;

  // Triangulate the bootstrap pair.
  const auto& ref_obs = window.frames[0].observations;
  std::map<TrackId, Vec3> map_points;
  auto try_triangulate = [&](TrackId id, const Vec2& p1, const Vec2& p2, const Pose& pose2) {
    try {
      map_points[id] = triangulate(p1, p2, poses[0], pose2, k, id).position;
    } catch (const Error&) {
    }
  };
  for (const auto& c : ransac_filter ? inlier12 : corrs12) {
    try_triangulate(c.id, c.p1, c.p2, poses[1]);
  }
  if (map_points.size() < 4) {
    throw InsufficientTracks("init_pnp_chain: bootstrap triangulation starved");
  }

  // Remaining frames: PnP on known points, then extend the map.
  for (int i = 2; i < m; ++i) {
    std::vector<Landmark> pts;
    std::vector<Vec2> obs;
    for (const auto& [id, px] : window.frames[i].observations) {
      auto it = map_points.find(id);
      if (it == map_points.end()) continue;
      if (ransac_filter &&
          !std::binary_search(h_result.inliers.begin(), h_result.inliers.end(), id)) {
        continue;
      }
      pts.push_back({id, it->second});
      obs.push_back(px);
    }
    poses[i] = pnp_pose(pts, obs, k, window.frames[i].rotation);

    for (const auto& [id, px] : window.frames[i].observations) {
      if (map_points.count(id)) continue;
      if (ransac_filter &&
          !std::binary_search(h_result.inliers.begin(), h_result.inliers.end(), id)) {
        continue;
      }
      auto it = ref_obs.find(id);
      if (it != ref_obs.end()) try_triangulate(id, it->second, px, poses[i]);
    }
  }

  InitializationResult result;
  result.method = "PNP_CHAIN";
  result.poses = std::move(poses);
  for (const auto& [id, p] : map_points) result.landmarks.push_back({id, p});
  result.plane = fit_plane_ransac(result.landmarks, cfg.plane_fit_threshold,
                                  derive_seed(seed, 77))
                     .model;
  const auto t_end = std::chrono::steady_clock::now();
  result.total_time_ms = std::chrono::duration<double, std::milli>(t_end - t_start).count();
  result.optim_time_ms = 0.0;
  return result;
}

// DBSCAN aggregation baseline: cluster the cheirality-valid decomposition
// normals of every (1, i) pair, back-project the map from the reference frame
// and recover translations by fixed-rotation PnP.
inline InitializationResult init_dbscan(const FrameWindow& window,
                                        const AggregationConfig& cfg = {},
                                        std::uint64_t seed = 0) {
  const auto t_start = std::chrono::steady_clock::now();
  window.validate();
  const CameraIntrinsics& k = window.intrinsics;

  std::vector<Vec3> candidates;
  std::vector<std::vector<TrackId>> inlier_sets;
  for (int i = 1; i < window.frame_count(); ++i) {
    const auto corrs = window.correspondences(i);
    if (corrs.size() < 8) continue;
    try {
      const auto h_result = ransac_homography(corrs, cfg.ransac.threshold_px,
                                              cfg.ransac.max_iterations,
                                              derive_seed(seed, 1000 + i), cfg.ransac.confidence);
      std::vector<Correspondence> inliers;
      for (const auto& c : corrs) {
        if (std::binary_search(h_result.inliers.begin(), h_result.inliers.end(), c.id)) {
          inliers.push_back(c);
        }
      }
      inlier_sets.push_back(h_result.inliers);
      detail::collect_normal_candidates(decompose_homography(h_result.model, k), k, inliers,
                                        candidates);
    } catch (const Error&) {
      // Starved or degenerate pairs contribute no candidates.
    }
  }

  const Vec3 n_c1 = cluster_normals_dbscan(candidates, cfg.dbscan_eps_deg, cfg.dbscan_min_pts);
  const Vec3 n_world = window.frames[0].rotation.conjugate() * n_c1;
  const PlaneParams plane = PlaneParams(n_world, -1.0);

  // Track set: intersection of the per-pair inliers when it stays usable.
  std::vector<TrackId> keep;
  for (const auto& [id, px] : window.frames[0].observations) keep.push_back(id);
  std::sort(keep.begin(), keep.end());
  std::vector<TrackId> intersection = keep;
  for (const auto& s : inlier_sets) {
    std::vector<TrackId> next;
    std::set_intersection(intersection.begin(), intersection.end(), s.begin(), s.end(),
                          std::back_inserter(next));
    intersection = std::move(next);
  }
  if (intersection.size() >= 4) keep = std::move(intersection);

  InitializationResult result;
  result.method = "DBSCAN";
  const Pose ref_pose{window.frames[0].rotation, Vec3::Zero()};
  for (TrackId id : keep) {
    const Vec2& px = window.frames[0].observations.at(id);
    try {
      result.landmarks.push_back({id, backproject_on_plane(k, ref_pose, plane, px)});
    } catch (const Error&) {
      ++result.dropped_tracks;
    }
  }
  if (result.landmarks.size() < 4) {
    throw InsufficientTracks("init_dbscan: too few back-projected landmarks");
  }
  result.poses = detail::poses_from_landmarks(window, result.landmarks);
  result.plane = plane;
  const auto t_end = std::chrono::steady_clock::now();
  result.total_time_ms = std::chrono::duration<double, std::milli>(t_end - t_start).count();
  result.optim_time_ms = 0.0;
  return result;
}

// Reprojection-error model shared by the three bundle-adjustment modes.
// Tangent layout: [centers (3 per frame 2..m) | landmarks (3 or 2 each)
// | plane tangent (3, PBA only)]. Frame 1 is pinned at the origin.
class BaModel {
 public:
  struct State {
    std::vector<Vec3> centers;       // frames 2..m
    std::vector<Vec3> points;        // BA
    std::vector<Vec2> plane_coords;  // PBA / FPBA
    Quat plane_rotation = Quat::Identity();
  };

  BaModel(const FrameWindow& window, BaMode mode, const std::vector<TrackId>& tracks,
          double huber_delta = 0.0)
      : mode_(mode), k_(window.intrinsics), huber_delta_(huber_delta), track_ids_(tracks) {
    for (const auto& f : window.frames) {
      FrameData fd;
      fd.kr = k_.matrix() * f.rotation.toRotationMatrix();
      fd.obs.assign(track_ids_.size(), std::nullopt);
      for (size_t j = 0; j < track_ids_.size(); ++j) {
        auto it = f.observations.find(track_ids_[j]);
        if (it != f.observations.end()) {
          fd.obs[j] = it->second;
          residual_count_ += 2;
        }
      }
      frames_.push_back(std::move(fd));
    }
  }

  int point_dim() const { return mode_ == BaMode::kBa ? 3 : 2; }
  int plane_dim() const { return mode_ == BaMode::kPba ? 3 : 0; }
  int tangent_dim() const {
    return 3 * (static_cast<int>(frames_.size()) - 1) +
           point_dim() * static_cast<int>(track_ids_.size()) + plane_dim();
  }
  int residual_count() const { return residual_count_; }
  const std::vector<TrackId>& track_ids() const { return track_ids_; }

  Vec3 landmark_position(const State& s, size_t j) const {
    if (mode_ == BaMode::kBa) return s.points[j];
    const Vec2& u = s.plane_coords[j];
    return s.plane_rotation * Vec3(u.x(), u.y(), 1.0);
  }

  State plus(const State& s, const Eigen::VectorXd& dx) const {
    State out = s;
    int off = 0;
    for (auto& c : out.centers) {
      c += dx.segment<3>(off);
      off += 3;
    }
    if (mode_ == BaMode::kBa) {
      for (auto& p : out.points) {
        p += dx.segment<3>(off);
        off += 3;
      }
    } else {
      for (auto& u : out.plane_coords) {
        u += dx.segment<2>(off);
        off += 2;
      }
      if (mode_ == BaMode::kPba) {
        out.plane_rotation = quat_exp(dx.segment<3>(off)) * s.plane_rotation;
        out.plane_rotation.normalize();
        off += 3;
      }
    }
    return out;
  }

  Eigen::VectorXd residuals(const State& s) const {
    Eigen::VectorXd r(residual_count_);
    int row = 0;
    for (size_t fi = 0; fi < frames_.size(); ++fi) {
      const Vec3 center = fi == 0 ? Vec3::Zero() : s.centers[fi - 1];
      for (size_t j = 0; j < track_ids_.size(); ++j) {
        if (!frames_[fi].obs[j]) continue;
        const Vec3 g = frames_[fi].kr * (landmark_position(s, j) - center);
        if (std::abs(g.z()) <= tol::kHomogeneousZ) {
          r.segment<2>(row).setConstant(tol::kCappedResidual);
        } else {
          Vec2 res = Vec2(g.x() / g.z(), g.y() / g.z()) - *frames_[fi].obs[j];
          if (huber_delta_ > 0.0) res *= std::sqrt(huber_weight(res.norm()));
          r.segment<2>(row) = res;
        }
        row += 2;
      }
    }
    return r;
  }

  Eigen::MatrixXd jacobian(const State& s) const {
    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(residual_count_, tangent_dim());
    assemble(s, &jac, nullptr, nullptr);
    return jac;
  }

  void normal_equations(const State& s, Eigen::MatrixXd& jtj, Eigen::VectorXd& jtr) const {
    jtj.setZero(tangent_dim(), tangent_dim());
    jtr.setZero(tangent_dim());
    assemble(s, nullptr, &jtj, &jtr);
  }

 private:
  struct FrameData {
    Mat3 kr;
    std::vector<std::optional<Vec2>> obs;
  };

  double huber_weight(double norm) const {
    return norm <= huber_delta_ ? 1.0 : huber_delta_ / norm;
  }

  // Shared Jacobian assembly: writes the dense Jacobian and/or accumulates
  // the normal equations.
  void assemble(const State& s, Eigen::MatrixXd* jac, Eigen::MatrixXd* jtj,
                Eigen::VectorXd* jtr) const {
    const int n_tracks = static_cast<int>(track_ids_.size());
    const int pdim = point_dim();
    const int plane_off = 3 * (static_cast<int>(frames_.size()) - 1) + pdim * n_tracks;
    int row = 0;
    for (size_t fi = 0; fi < frames_.size(); ++fi) {
      const Vec3 center = fi == 0 ? Vec3::Zero() : s.centers[fi - 1];
      const int coff = fi == 0 ? -1 : 3 * (static_cast<int>(fi) - 1);
      for (int j = 0; j < n_tracks; ++j) {
        if (!frames_[fi].obs[j]) continue;
        const Vec3 p = landmark_position(s, j);
        const Vec3 g = frames_[fi].kr * (p - center);
        if (std::abs(g.z()) <= tol::kHomogeneousZ) {
          row += 2;
          continue;  // capped residual, zero gradient
        }
        const double iz = 1.0 / g.z();
        Eigen::Matrix<double, 2, 3> dpi;
        dpi << iz, 0.0, -g.x() * iz * iz, 0.0, iz, -g.y() * iz * iz;
        const Eigen::Matrix<double, 2, 3> base = dpi * frames_[fi].kr;

        Vec2 res = Vec2(g.x() * iz, g.y() * iz) - *frames_[fi].obs[j];
        double w = 1.0;
        if (huber_delta_ > 0.0) w = std::sqrt(huber_weight(res.norm()));
        res *= w;

        const Eigen::Matrix<double, 2, 3> j_center = -w * base;
        Eigen::Matrix<double, 2, 3> j_point3;
        Eigen::Matrix<double, 2, 2> j_point2;
        Eigen::Matrix<double, 2, 3> j_plane;
        const int poff = plane_off - pdim * n_tracks + pdim * j;
        if (mode_ == BaMode::kBa) {
          j_point3 = w * base;
        } else {
          j_point2 = w * base * s.plane_rotation.toRotationMatrix().leftCols<2>();
          if (mode_ == BaMode::kPba) j_plane = -w * base * skew(p);
        }

        if (jac) {
          if (coff >= 0) jac->block<2, 3>(row, coff) = j_center;
          if (mode_ == BaMode::kBa) {
            jac->block<2, 3>(row, poff) = j_point3;
          } else {
            jac->block<2, 2>(row, poff) = j_point2;
            if (mode_ == BaMode::kPba) jac->block<2, 3>(row, plane_off) = j_plane;
          }
        }
        if (jtj) {
          auto scatter = [&](int off_a, const auto& block_a, int off_b, const auto& block_b) {
            jtj->block(off_a, off_b, block_a.cols(), block_b.cols()) +=
                block_a.transpose() * block_b;
          };
          if (coff >= 0) {
            scatter(coff, j_center, coff, j_center);
            jtr->segment<3>(coff) += j_center.transpose() * res;
          }
          if (mode_ == BaMode::kBa) {
            scatter(poff, j_point3, poff, j_point3);
            jtr->segment<3>(poff) += j_point3.transpose() * res;
            if (coff >= 0) {
              scatter(coff, j_center, poff, j_point3);
              scatter(poff, j_point3, coff, j_center);
            }
          } else {
            scatter(poff, j_point2, poff, j_point2);
            jtr->segment<2>(poff) += j_point2.transpose() * res;
            if (coff >= 0) {
              scatter(coff, j_center, poff, j_point2);
              scatter(poff, j_point2, coff, j_center);
            }
            if (mode_ == BaMode::kPba) {
              scatter(plane_off, j_plane, plane_off, j_plane);
              jtr->segment<3>(plane_off) += j_plane.transpose() * res;
              scatter(poff, j_point2, plane_off, j_plane);
              scatter(plane_off, j_plane, poff, j_point2);
              if (coff >= 0) {
                scatter(coff, j_center, plane_off, j_plane);
                scatter(plane_off, j_plane, coff, j_center);
              }
            }
          }
        }
        row += 2;
      }
    }
  }

  BaMode mode_;
  CameraIntrinsics k_;
  double huber_delta_ = 0.0;
  std::vector<TrackId> track_ids_;
  std::vector<FrameData> frames_;
  int residual_count_ = 0;
};

inline const char* to_string(BaMode m) {
  switch (m) {
    case BaMode::kBa: return "BA";
    case BaMode::kPba: return "PBA";
    case BaMode::kFpba: return "FPBA";
  }
  return "BA";
}

// Bundle adjustment over translations and landmarks (rotations stay fixed).
// PBA also optimizes the plane normal with landmarks lifted from 2-parameter
// in-plane coordinates; FPBA keeps the init plane constant.
inline InitializationResult bundle_adjust(const FrameWindow& window,
                                          const InitializationResult& init, BaMode mode,
                                          bool ransac_filter, const SolverConfig& solver_cfg,
                                          const RansacConfig& ransac_cfg = {},
                                          std::uint64_t seed = 0) {
  const auto t_start = std::chrono::steady_clock::now();
  window.validate();
  if (init.poses.size() != window.frames.size()) {
    throw DegenerateConfiguration("bundle_adjust: init pose count mismatch");
  }

  FrameWindow active = window;
  if (ransac_filter) {
    const auto keep = plane_consistent_tracks(window, ransac_cfg, derive_seed(seed, 101));
    if (keep.size() < 4) throw InsufficientTracks("bundle_adjust: RANSAC intersection too small");
    active = window.filtered(keep);
  }

  // Move the whole init into the |d| = 1 gauge for the planar modes.
  double rescale = 1.0;
  PlaneParams plane = init.plane.canonicalized();
  if (mode != BaMode::kBa) {
    if (std::abs(plane.distance) <= tol::kMinPlaneDistance) {
      throw DegeneratePlane("bundle_adjust: init plane through the origin");
    }
    rescale = 1.0 / std::abs(plane.distance);
    plane = PlaneParams(plane.normal, -1.0);
  }

  std::map<TrackId, Vec3> init_points;
  for (const auto& lm : init.landmarks) init_points[lm.id] = rescale * lm.position;

  std::vector<TrackId> tracks;
  for (const auto& [id, px] : active.frames[0].observations) {
    if (init_points.count(id)) tracks.push_back(id);
  }
  if (tracks.size() < 4) throw InsufficientTracks("bundle_adjust: too few initialized tracks");

  BaModel model(active, mode, tracks, solver_cfg.huber_delta);
  BaModel::State state;
  const Vec3 origin = init.poses[0].translation;
  for (size_t i = 1; i < init.poses.size(); ++i) {
    state.centers.push_back(rescale * (init.poses[i].translation - origin));
  }
  state.plane_rotation = Quat::FromTwoVectors(Vec3::UnitZ(), plane.normal);
  state.plane_rotation.normalize();
  for (TrackId id : tracks) {
    const Vec3 p = init_points[id];
    if (mode == BaMode::kBa) {
      state.points.push_back(p);
    } else {
      const Vec3 h = state.plane_rotation.conjugate() * p;
      state.plane_coords.push_back(Vec2(h.x(), h.y()));
    }
  }

  const auto t_opt_start = std::chrono::steady_clock::now();
  const SolveSummary summary = solve_dogleg(model, state, solver_cfg);
  const auto t_opt_end = std::chrono::steady_clock::now();

  InitializationResult result;
  result.method = to_string(mode);
  result.poses.resize(active.frames.size());
  for (size_t i = 0; i < active.frames.size(); ++i) {
    result.poses[i].rotation = active.frames[i].rotation;
    result.poses[i].translation = i == 0 ? Vec3::Zero() : state.centers[i - 1];
  }
  for (size_t j = 0; j < tracks.size(); ++j) {
    result.landmarks.push_back({tracks[j], model.landmark_position(state, j)});
  }
  if (mode == BaMode::kBa) {
    result.plane =
        fit_plane_ransac(result.landmarks, 0.02, derive_seed(seed, 55)).model;
  } else {
    result.plane = PlaneParams(state.plane_rotation * Vec3::UnitZ(), -1.0);
  }
  result.converged = summary.converged;

  const auto t_end = std::chrono::steady_clock::now();
  result.optim_time_ms =
      std::chrono::duration<double, std::milli>(t_opt_end - t_opt_start).count();
  result.total_time_ms = std::chrono::duration<double, std::milli>(t_end - t_start).count() +
                         init.total_time_ms;
  return result;
}

}  // namespace planeinit
