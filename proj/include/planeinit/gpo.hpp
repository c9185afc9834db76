#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <optional>
#include <vector>

#include "planeinit/core.hpp"
#include "planeinit/estimation.hpp"
#include "planeinit/geometry.hpp"
#include "planeinit/solver.hpp"

namespace planeinit {

// Optimization unknowns: the world-frame plane normal (as a unit quaternion
// rotating the z reference axis) and one scaled translation per non-reference
// frame. The camera-to-plane distance is absorbed: translation i equals
// (C_i - C_1) / dist with dist the reference camera's plane distance.
struct GpoState {
  Quat normal_rotation = Quat::Identity();
  std::vector<Vec3> translations;  // frames 2..m

  Vec3 normal() const { return normal_rotation * Vec3::UnitZ(); }
};

struct GpoResult {
  GpoState state;
  double final_cost = 0.0;
  int iterations = 0;
  bool converged = false;
  int residual_count = 0;
  int degenerate_transfers = 0;
  bool low_confidence = false;
  std::vector<double> accepted_costs;
};

// Zero translations and a normal along the reference camera's optical axis.
inline GpoState initial_state(const FrameWindow& window) {
  window.validate();
  GpoState st;
  const Vec3 axis = window.frames.front().rotation.conjugate() * Vec3::UnitZ();
  st.normal_rotation = Quat::FromTwoVectors(Vec3::UnitZ(), axis);
  st.normal_rotation.normalize();
  st.translations.assign(window.frames.size() - 1, Vec3::Zero());
  return st;
}

// Homography-transfer least-squares problem of Eq.-(5) shape, with residuals
// stacked frames-outer and tracks (sorted by id) inner.
class GpoModel {
 public:
  using State = GpoState;

  GpoModel(const FrameWindow& window, double huber_delta = 0.0)
      : k_(window.intrinsics), huber_delta_(huber_delta) {
    const Mat3 k_inv = k_.inverse_matrix();
    const Mat3 r1_t = window.frames.front().rotation.toRotationMatrix().transpose();
    const auto& ref_obs = window.frames.front().observations;

    frames_.reserve(window.frames.size() - 1);
    for (size_t i = 1; i < window.frames.size(); ++i) {
      FrameData fd;
      fd.a = k_.matrix() * window.frames[i].rotation.toRotationMatrix();
      for (const auto& [id, px] : window.frames[i].observations) {
        auto it = ref_obs.find(id);
        if (it == ref_obs.end()) continue;
        const Vec2& p1 = it->second;
        fd.rays.push_back(r1_t * (k_inv * Vec3(p1.x(), p1.y(), 1.0)));
        fd.pixels.push_back(px);
      }
      residual_count_ += 2 * static_cast<int>(fd.pixels.size());
      frames_.push_back(std::move(fd));
    }
  }

  int tangent_dim() const { return 3 + 3 * static_cast<int>(frames_.size()); }
  int residual_count() const { return residual_count_; }

  State plus(const State& s, const Eigen::VectorXd& dx) const {
    State out = s;
    out.normal_rotation = quat_exp(dx.head<3>()) * s.normal_rotation;
    out.normal_rotation.normalize();
    for (size_t i = 0; i < out.translations.size(); ++i) {
      out.translations[i] += dx.segment<3>(3 + 3 * static_cast<int>(i));
    }
    return out;
  }

  Eigen::VectorXd residuals(const State& s) const {
    int degenerate = 0;
    Eigen::VectorXd r(residual_count_);
    const Vec3 n = s.normal();
    int row = 0;
    for (size_t fi = 0; fi < frames_.size(); ++fi) {
      const FrameData& fd = frames_[fi];
      const Vec3& t = s.translations[fi];
      for (size_t j = 0; j < fd.rays.size(); ++j) {
        const Vec3& q1 = fd.rays[j];
        const Vec3 g = fd.a * (q1 - n.dot(q1) * t);
        if (std::abs(g.z()) <= tol::kHomogeneousZ) {
          r.segment<2>(row).setConstant(tol::kCappedResidual);
          ++degenerate;
        } else {
          Vec2 res = fd.pixels[j] - Vec2(g.x() / g.z(), g.y() / g.z());
          if (huber_delta_ > 0.0) res *= std::sqrt(huber_weight(res.norm()));
          r.segment<2>(row) = res;
        }
        row += 2;
      }
    }
    degenerate_transfers_ = degenerate;
    return r;
  }

  void normal_equations(const State& s, Eigen::MatrixXd& jtj, Eigen::VectorXd& jtr) const {
    const int dim = tangent_dim();
    jtj.setZero(dim, dim);
    jtr.setZero(dim);
    const Vec3 n = s.normal();
    const Mat3 n_cross = skew(n);

    for (size_t fi = 0; fi < frames_.size(); ++fi) {
      const FrameData& fd = frames_[fi];
      const Vec3& t = s.translations[fi];
      const int toff = 3 + 3 * static_cast<int>(fi);
      const Vec3 at = fd.a * t;
      for (size_t j = 0; j < fd.rays.size(); ++j) {
        const Vec3& q1 = fd.rays[j];
        const double alpha = n.dot(q1);
        const Vec3 g = fd.a * q1 - alpha * at;
        if (std::abs(g.z()) <= tol::kHomogeneousZ) continue;  // capped: zero gradient

        const double iz = 1.0 / g.z();
        Eigen::Matrix<double, 2, 3> dpi;
        dpi << iz, 0.0, -g.x() * iz * iz, 0.0, iz, -g.y() * iz * iz;
        Vec2 res = fd.pixels[j] - Vec2(g.x() * iz, g.y() * iz);

        // r = p - pi(g):  dr/dt = alpha * dpi * A,  dr/dn_tangent = -(dpi A t) (q1^T [n]x).
        Eigen::Matrix<double, 2, 3> j_t = alpha * (dpi * fd.a);
        const Vec2 dpi_at = dpi * at;
        const Eigen::RowVector3d q1_ncross = q1.transpose() * n_cross;
        Eigen::Matrix<double, 2, 3> j_n = -dpi_at * q1_ncross;

        if (huber_delta_ > 0.0) {
          const double w = std::sqrt(huber_weight(res.norm()));
          res *= w;
          j_t *= w;
          j_n *= w;
        }

        jtj.block<3, 3>(0, 0) += j_n.transpose() * j_n;
        jtj.block<3, 3>(0, toff) += j_n.transpose() * j_t;
        jtj.block<3, 3>(toff, toff) += j_t.transpose() * j_t;
        jtr.head<3>() += j_n.transpose() * res;
        jtr.segment<3>(toff) += j_t.transpose() * res;
      }
    }
    // Mirror the border-to-block couplings.
    for (size_t fi = 0; fi < frames_.size(); ++fi) {
      const int toff = 3 + 3 * static_cast<int>(fi);
      jtj.block<3, 3>(toff, 0) = jtj.block<3, 3>(0, toff).transpose();
    }
  }

  // Dense Jacobian, used by the finite-difference checks.
  Eigen::MatrixXd jacobian(const State& s) const {
    const int dim = tangent_dim();
    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(residual_count_, dim);
    const Vec3 n = s.normal();
    const Mat3 n_cross = skew(n);
    int row = 0;
    for (size_t fi = 0; fi < frames_.size(); ++fi) {
      const FrameData& fd = frames_[fi];
      const Vec3& t = s.translations[fi];
      const int toff = 3 + 3 * static_cast<int>(fi);
      const Vec3 at = fd.a * t;
      for (size_t j = 0; j < fd.rays.size(); ++j) {
        const Vec3& q1 = fd.rays[j];
        const double alpha = n.dot(q1);
        const Vec3 g = fd.a * q1 - alpha * at;
        if (std::abs(g.z()) > tol::kHomogeneousZ) {
          const double iz = 1.0 / g.z();
          Eigen::Matrix<double, 2, 3> dpi;
          dpi << iz, 0.0, -g.x() * iz * iz, 0.0, iz, -g.y() * iz * iz;
          Eigen::Matrix<double, 2, 3> j_t = alpha * (dpi * fd.a);
          const Vec2 dpi_at = dpi * at;
          Eigen::Matrix<double, 2, 3> j_n = -dpi_at * (q1.transpose() * n_cross);
          if (huber_delta_ > 0.0) {
            const Vec2 res = fd.pixels[j] - Vec2(g.x() * iz, g.y() * iz);
            const double w = std::sqrt(huber_weight(res.norm()));
            j_t *= w;
            j_n *= w;
          }
          jac.block<2, 3>(row, 0) = j_n;
          jac.block<2, 3>(row, toff) = j_t;
        }
        row += 2;
      }
    }
    return jac;
  }

  int schur_border_dim() const { return 3; }
  int schur_block_dim() const { return 3; }
  int schur_block_count() const { return static_cast<int>(frames_.size()); }

  int last_degenerate_transfers() const { return degenerate_transfers_; }

 private:
  struct FrameData {
    Mat3 a;                    // K * R_i
    std::vector<Vec3> rays;    // R_1^T K^{-1} p_1 per shared track
    std::vector<Vec2> pixels;  // observation in frame i
  };

  double huber_weight(double norm) const {
    return norm <= huber_delta_ ? 1.0 : huber_delta_ / norm;
  }

  CameraIntrinsics k_;
  double huber_delta_ = 0.0;
  std::vector<FrameData> frames_;
  int residual_count_ = 0;
  mutable int degenerate_transfers_ = 0;
};

// Residual vector of Eq. (5) at an arbitrary state.
inline Eigen::VectorXd gpo_residuals(const GpoState& state, const FrameWindow& window) {
  return GpoModel(window).residuals(state);
}

// Median rotation-compensated pixel displacement; below ~half a pixel the
// translations (and hence the plane) are effectively unobservable.
inline double median_parallax_px(const FrameWindow& window) {
  const Mat3 k = window.intrinsics.matrix();
  const Mat3 k_inv = window.intrinsics.inverse_matrix();
  const Mat3 r1_t = window.frames.front().rotation.toRotationMatrix().transpose();
  const auto& ref = window.frames.front().observations;
  std::vector<double> displacements;
  for (size_t i = 1; i < window.frames.size(); ++i) {
    const Mat3 h_rot = k * window.frames[i].rotation.toRotationMatrix() * r1_t * k_inv;
    for (const auto& [id, px] : window.frames[i].observations) {
      auto it = ref.find(id);
      if (it == ref.end()) continue;
      const Vec3 g = h_rot * Vec3(it->second.x(), it->second.y(), 1.0);
      if (std::abs(g.z()) <= tol::kHomogeneousZ) continue;
      displacements.push_back((Vec2(g.x() / g.z(), g.y() / g.z()) - px).norm());
    }
  }
  if (displacements.empty()) return 0.0;
  std::nth_element(displacements.begin(), displacements.begin() + displacements.size() / 2,
                   displacements.end());
  return displacements[displacements.size() / 2];
}

// Global plane optimization over a window with known rotations.
inline GpoResult solve_gpo(const FrameWindow& window, const SolverConfig& config,
                           std::optional<GpoState> start = std::nullopt) {
  window.validate();
  for (int i = 1; i < window.frame_count(); ++i) {
    if (window.correspondences(i).size() < 4) {
      throw InsufficientTracks("solve_gpo: fewer than 4 shared tracks with frame " +
                               std::to_string(i));
    }
  }

  GpoModel model(window, config.huber_delta);
  GpoState state = start ? *start : initial_state(window);
  if (state.translations.size() + 1 != window.frames.size()) {
    throw DegenerateConfiguration("solve_gpo: state size does not match window");
  }

  const SolveSummary summary = solve_dogleg(model, state, config);

  GpoResult out;
  out.state = std::move(state);
  out.final_cost = summary.final_cost;
  out.iterations = summary.iterations;
  out.converged = summary.converged;
  out.residual_count = model.residual_count();
  out.accepted_costs = summary.accepted_costs;
  model.residuals(out.state);
  out.degenerate_transfers = model.last_degenerate_transfers();
  out.low_confidence = median_parallax_px(window) < tol::kLowParallaxPx;
  return out;
}

// Intersection of per-pair homography-RANSAC inliers over pairs (1, i).
inline std::vector<TrackId> plane_consistent_tracks(const FrameWindow& window,
                                                    const RansacConfig& cfg,
                                                    std::uint64_t seed) {
  std::vector<TrackId> keep;
  for (const auto& [id, px] : window.frames.front().observations) keep.push_back(id);
  std::sort(keep.begin(), keep.end());

  for (int i = 1; i < window.frame_count(); ++i) {
    const auto corrs = window.correspondences(i);
    if (corrs.size() < 4) {
      throw InsufficientTracks("plane_consistent_tracks: pair with <4 correspondences");
    }
    const auto res = ransac_homography(corrs, cfg.threshold_px, cfg.max_iterations,
                                       derive_seed(seed, static_cast<std::uint64_t>(i)),
                                       cfg.confidence);
    std::vector<TrackId> next;
    std::set_intersection(keep.begin(), keep.end(), res.inliers.begin(), res.inliers.end(),
                          std::back_inserter(next));
    keep = std::move(next);
  }
  return keep;
}

// Full GPO pipeline: RANSAC track filtering (optional), the optimization, and
// planar map recovery under the d = -1 gauge.
inline InitializationResult run_gpo_pipeline(const FrameWindow& window, bool use_ransac,
                                             const SolverConfig& solver_cfg,
                                             const RansacConfig& ransac_cfg = {},
                                             std::uint64_t seed = 0) {
  const auto t_start = std::chrono::steady_clock::now();
  window.validate();

  FrameWindow active = window;
  if (use_ransac) {
    const auto keep = plane_consistent_tracks(window, ransac_cfg, derive_seed(seed, 101));
    if (keep.size() < 4) {
      throw InsufficientTracks("run_gpo_pipeline: RANSAC intersection too small");
    }
    active = window.filtered(keep);
  }

  const auto t_opt_start = std::chrono::steady_clock::now();
  GpoResult gpo = solve_gpo(active, solver_cfg);
  const auto t_opt_end = std::chrono::steady_clock::now();

  InitializationResult result;
  result.method = use_ransac ? "GPO" : "GPO_noRANSAC";
  result.plane = PlaneParams(gpo.state.normal(), -1.0);
  result.poses.resize(active.frames.size());
  for (size_t i = 0; i < active.frames.size(); ++i) {
    result.poses[i].rotation = active.frames[i].rotation;
    result.poses[i].translation = i == 0 ? Vec3::Zero() : gpo.state.translations[i - 1];
  }
  ReconstructionStats stats;
  result.landmarks = reconstruct_landmarks(active, result.poses, result.plane, &stats);
  result.dropped_tracks = stats.dropped_tracks;
  result.converged = gpo.converged;
  result.low_confidence = gpo.low_confidence;

  const auto t_end = std::chrono::steady_clock::now();
  result.optim_time_ms = std::chrono::duration<double, std::milli>(t_opt_end - t_opt_start).count();
  result.total_time_ms = std::chrono::duration<double, std::milli>(t_end - t_start).count();
  return result;
}

}  // namespace planeinit
