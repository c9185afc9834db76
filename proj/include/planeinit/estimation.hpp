#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <optional>
#include <vector>

#include "planeinit/core.hpp"
#include "planeinit/geometry.hpp"
#include "planeinit/rng.hpp"

namespace planeinit {

template <class ModelT>
struct RansacResult {
  ModelT model;
  std::vector<TrackId> inliers;  // sorted ids
  int iterations = 0;
};

struct RansacConfig {
  double threshold_px = 3.0;     // symmetric transfer error bound
  double confidence = 0.999;     // early-exit confidence
  int max_iterations = 1000;
  int min_inliers = 8;           // 2x the minimal sample
};

// One {R, t/d, n} triplet of the homography decomposition, in the Eq.-(2)
// parameterization H ~ K (R - t_over_d n^T) K^{-1} with n in camera-1 frame.
struct DecompositionSolution {
  Quat rotation = Quat::Identity();
  Vec3 t_over_d = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();
  bool normal_unconstrained = false;  // pure-rotation branch
};

namespace detail {

struct NormalizationTransform {
  Mat3 t = Mat3::Identity();
};

// Hartley normalization: centroid to origin, mean distance sqrt(2).
inline NormalizationTransform normalizing_transform(const std::vector<Vec2>& pts) {
  Vec2 centroid = Vec2::Zero();
  for (const auto& p : pts) centroid += p;
  centroid /= static_cast<double>(pts.size());
  double mean_dist = 0.0;
  for (const auto& p : pts) mean_dist += (p - centroid).norm();
  mean_dist /= static_cast<double>(pts.size());
  const double scale = mean_dist > 1e-15 ? std::sqrt(2.0) / mean_dist : 1.0;
  NormalizationTransform out;
  out.t << scale, 0.0, -scale * centroid.x(), 0.0, scale, -scale * centroid.y(), 0.0, 0.0, 1.0;
  return out;
}

inline double symmetric_transfer_error(const Homography& h, const Mat3& h_inv,
                                       const Correspondence& c) {
  const Vec3 fwd = h.m * Vec3(c.p1.x(), c.p1.y(), 1.0);
  const Vec3 bwd = h_inv * Vec3(c.p2.x(), c.p2.y(), 1.0);
  if (std::abs(fwd.z()) <= tol::kHomogeneousZ || std::abs(bwd.z()) <= tol::kHomogeneousZ) {
    return std::numeric_limits<double>::infinity();
  }
  const double e_fwd = (Vec2(fwd.x() / fwd.z(), fwd.y() / fwd.z()) - c.p2).norm();
  const double e_bwd = (Vec2(bwd.x() / bwd.z(), bwd.y() / bwd.z()) - c.p1).norm();
  return std::max(e_fwd, e_bwd);
}

// Iterations needed for the standard RANSAC stopping rule.
inline int ransac_iterations_needed(double inlier_ratio, int sample_size, double confidence,
                                    int cap) {
  if (inlier_ratio <= 0.0) return cap;
  const double p_good = std::pow(inlier_ratio, sample_size);
  if (p_good >= 1.0 - 1e-12) return 1;
  const double n = std::log(1.0 - confidence) / std::log(1.0 - p_good);
  if (!std::isfinite(n) || n >= static_cast<double>(cap)) return cap;
  return std::max(1, static_cast<int>(std::ceil(n)));
}

}  // namespace detail

// Least-squares homography from >= 4 correspondences (normalized DLT).
inline Homography estimate_homography_dlt(const std::vector<Correspondence>& corrs) {
  const int n = static_cast<int>(corrs.size());
  if (n < 4) throw DegenerateConfiguration("estimate_homography_dlt: needs >= 4 points");

  std::vector<Vec2> pts1(n), pts2(n);
  for (int i = 0; i < n; ++i) {
    pts1[i] = corrs[i].p1;
    pts2[i] = corrs[i].p2;
  }
  const Mat3 t1 = detail::normalizing_transform(pts1).t;
  const Mat3 t2 = detail::normalizing_transform(pts2).t;

  Eigen::MatrixXd a(2 * n, 9);
  for (int i = 0; i < n; ++i) {
    const Vec3 q1 = t1 * Vec3(pts1[i].x(), pts1[i].y(), 1.0);
    const Vec3 q2 = t2 * Vec3(pts2[i].x(), pts2[i].y(), 1.0);
    const double x = q1.x(), y = q1.y(), u = q2.x(), v = q2.y();
    a.row(2 * i) << -x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u;
    a.row(2 * i + 1) << 0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v;
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  // A collinear sample makes the nullspace two-dimensional.
  if (sv(7) <= tol::kDegenerateSvRatio * sv(0)) {
    throw DegenerateConfiguration("estimate_homography_dlt: rank-deficient configuration");
  }
  const Eigen::VectorXd h = svd.matrixV().col(8);
  Mat3 hn;
  hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
  return Homography::from(t2.inverse() * hn * t1);
}

// 4-point RANSAC over pixel correspondences. Deterministic given the seed;
// the winning model is refit by DLT on its inlier set.
inline RansacResult<Homography> ransac_homography(const std::vector<Correspondence>& corrs,
                                                  double threshold_px, int max_iters,
                                                  std::uint64_t seed,
                                                  double confidence = 0.999) {
  const int n = static_cast<int>(corrs.size());
  if (n < 4) throw DegenerateConfiguration("ransac_homography: needs >= 4 correspondences");

  Rng rng(seed);
  std::optional<Homography> best_model;
  std::vector<int> best_inlier_idx;
  int iters_used = 0;
  int needed = max_iters;

  for (int iter = 0; iter < max_iters && iter < needed; ++iter) {
    iters_used = iter + 1;
    const std::vector<int> sample = rng.sample_distinct(4, n);
    std::vector<Correspondence> minimal(4);
    for (int i = 0; i < 4; ++i) minimal[i] = corrs[sample[i]];

    Homography h;
    try {
      h = estimate_homography_dlt(minimal);
    } catch (const DegenerateConfiguration&) {
      continue;
    }
    const Mat3 h_inv = h.m.inverse();

    std::vector<int> inlier_idx;
    inlier_idx.reserve(n);
    for (int i = 0; i < n; ++i) {
      if (detail::symmetric_transfer_error(h, h_inv, corrs[i]) < threshold_px) {
        inlier_idx.push_back(i);
      }
    }
    if (inlier_idx.size() > best_inlier_idx.size()) {
      best_inlier_idx = std::move(inlier_idx);
      best_model = h;
      needed = detail::ransac_iterations_needed(
          static_cast<double>(best_inlier_idx.size()) / n, 4, confidence, max_iters);
    }
  }

  if (!best_model || static_cast<int>(best_inlier_idx.size()) < 8) {
    throw InsufficientInliers("ransac_homography: best inlier count below 8");
  }

  // Refit on the consensus set, then restate the inliers for the refit model.
  std::vector<Correspondence> consensus;
  consensus.reserve(best_inlier_idx.size());
  for (int i : best_inlier_idx) consensus.push_back(corrs[i]);
  Homography refit = *best_model;
  try {
    refit = estimate_homography_dlt(consensus);
  } catch (const DegenerateConfiguration&) {
  }
  const Mat3 refit_inv = refit.m.inverse();
  RansacResult<Homography> out;
  out.model = refit;
  out.iterations = iters_used;
  for (int i = 0; i < n; ++i) {
    if (detail::symmetric_transfer_error(refit, refit_inv, corrs[i]) < threshold_px) {
      out.inliers.push_back(corrs[i].id);
    }
  }
  std::sort(out.inliers.begin(), out.inliers.end());
  if (static_cast<int>(out.inliers.size()) < 8) {
    throw InsufficientInliers("ransac_homography: refit inlier count below 8");
  }
  return out;
}

namespace detail {

inline double opposite_of_minor(const Mat3& m, int row, int col) {
  const int x1 = col == 0 ? 1 : 0;
  const int x2 = col == 2 ? 1 : 2;
  const int y1 = row == 0 ? 1 : 0;
  const int y2 = row == 2 ? 1 : 2;
  return m(y1, x2) * m(y2, x1) - m(y1, x1) * m(y2, x2);
}

inline double sign_nonneg(double x) { return x >= 0.0 ? 1.0 : -1.0; }

inline Mat3 closest_rotation(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 r = svd.matrixU() * svd.matrixV().transpose();
  if (r.determinant() < 0.0) {
    Mat3 d = Mat3::Identity();
    d(2, 2) = -1.0;
    r = svd.matrixU() * d * svd.matrixV().transpose();
  }
  return r;
}

}  // namespace detail

// Analytic decomposition of a plane-induced homography into up to four
// {R, t/d, n} triplets (Malis-Vargas closed form). The calibrated matrix is
// normalized by its middle singular value before decomposing.
inline std::vector<DecompositionSolution> decompose_homography(const Homography& h,
                                                               const CameraIntrinsics& k) {
  Mat3 hc = k.inverse_matrix() * h.m * k.matrix();
  Eigen::JacobiSVD<Mat3> svd(hc);
  const double mid = svd.singularValues()(1);
  if (!(mid > 0.0) || !std::isfinite(mid)) {
    throw NumericalFailure("decompose_homography: degenerate singular values");
  }
  hc /= mid;
  if (hc.determinant() < 0.0) hc = -hc;

  const Mat3 s = hc.transpose() * hc - Mat3::Identity();
  if (s.cwiseAbs().maxCoeff() < tol::kPureRotationNorm) {
    DecompositionSolution sol;
    sol.rotation = Quat(detail::closest_rotation(hc));
    sol.t_over_d = Vec3::Zero();
    sol.normal = Vec3::UnitZ();
    sol.normal_unconstrained = true;
    return {sol};
  }

  const double m00 = detail::opposite_of_minor(s, 0, 0);
  const double m11 = detail::opposite_of_minor(s, 1, 1);
  const double m22 = detail::opposite_of_minor(s, 2, 2);
  const double rt_m00 = std::sqrt(std::max(0.0, m00));
  const double rt_m11 = std::sqrt(std::max(0.0, m11));
  const double rt_m22 = std::sqrt(std::max(0.0, m22));
  const double e12 = detail::sign_nonneg(detail::opposite_of_minor(s, 1, 2));
  const double e02 = detail::sign_nonneg(detail::opposite_of_minor(s, 0, 2));
  const double e01 = detail::sign_nonneg(detail::opposite_of_minor(s, 0, 1));

  int idx = 0;
  if (std::abs(s(0, 0)) < std::abs(s(1, 1))) {
    idx = std::abs(s(1, 1)) < std::abs(s(2, 2)) ? 2 : 1;
  } else if (std::abs(s(0, 0)) < std::abs(s(2, 2))) {
    idx = 2;
  }

  Vec3 npa, npb;
  switch (idx) {
    case 0:
      npa = Vec3(s(0, 0), s(0, 1) + rt_m22, s(0, 2) + e12 * rt_m11);
      npb = Vec3(s(0, 0), s(0, 1) - rt_m22, s(0, 2) - e12 * rt_m11);
      break;
    case 1:
      npa = Vec3(s(0, 1) + rt_m22, s(1, 1), s(1, 2) - e02 * rt_m00);
      npb = Vec3(s(0, 1) - rt_m22, s(1, 1), s(1, 2) + e02 * rt_m00);
      break;
    default:
      npa = Vec3(s(0, 2) + e01 * rt_m11, s(1, 2) + rt_m00, s(2, 2));
      npb = Vec3(s(0, 2) - e01 * rt_m11, s(1, 2) - rt_m00, s(2, 2));
      break;
  }
  if (npa.norm() < 1e-15 || npb.norm() < 1e-15) {
    throw NumericalFailure("decompose_homography: zero normal candidate");
  }

  const double trace_s = s.trace();
  const double v = 2.0 * std::sqrt(std::max(0.0, 1.0 + trace_s - m00 - m11 - m22));
  const double e_sii = detail::sign_nonneg(s(idx, idx));
  const double r_norm = std::sqrt(std::max(0.0, 2.0 + trace_s + v));
  const double t_norm = std::sqrt(std::max(0.0, 2.0 + trace_s - v));
  if (v < 1e-12) {
    throw NumericalFailure("decompose_homography: vanishing normalizer");
  }

  const Vec3 na = npa.normalized();
  const Vec3 nb = npb.normalized();
  const Vec3 ta_star = 0.5 * t_norm * (e_sii * r_norm * nb - t_norm * na);
  const Vec3 tb_star = 0.5 * t_norm * (e_sii * r_norm * na - t_norm * nb);

  const Mat3 ra = detail::closest_rotation(hc * (Mat3::Identity() - (2.0 / v) * ta_star * na.transpose()));
  const Mat3 rb = detail::closest_rotation(hc * (Mat3::Identity() - (2.0 / v) * tb_star * nb.transpose()));
  const Vec3 ta = ra * ta_star;
  const Vec3 tb = rb * tb_star;

  // H = R + t n^T maps to the Eq.-(2) form R - (t/d) n^T via t_over_d = -t.
  std::vector<DecompositionSolution> out(4);
  out[0] = {Quat(ra), -ta, na, false};
  out[1] = {Quat(ra), ta, -na, false};
  out[2] = {Quat(rb), -tb, nb, false};
  out[3] = {Quat(rb), tb, -nb, false};
  for (auto& sol : out) {
    if (!sol.rotation.coeffs().allFinite() || !sol.t_over_d.allFinite()) {
      throw NumericalFailure("decompose_homography: non-finite solution");
    }
  }
  return out;
}

// Recompose a solution back into a pixel homography (Eq. 2 with d = -1).
inline Homography compose_solution(const DecompositionSolution& sol, const CameraIntrinsics& k) {
  const Mat3 calibrated =
      sol.rotation.toRotationMatrix() - sol.t_over_d * sol.normal.transpose();
  return Homography::from(k.matrix() * calibrated * k.inverse_matrix());
}

namespace detail {

// Linear translation-only solve of the projection equations with R known.
// Returns the camera center in the coordinate frame of the landmarks.
inline Vec3 solve_translation_linear(const CameraIntrinsics& k, const Quat& r_cw,
                                     const std::vector<Vec3>& points,
                                     const std::vector<Vec2>& pixels) {
  const int n = static_cast<int>(points.size());
  Eigen::MatrixXd a(2 * n, 3);
  Eigen::VectorXd b(2 * n);
  for (int i = 0; i < n; ++i) {
    const Vec3 q = r_cw * points[i];
    const double u = (pixels[i].x() - k.cx) / k.fx;
    const double v = (pixels[i].y() - k.cy) / k.fy;
    // Rows of [I -u_hat; ...] * t_cam = u_hat*q_z - q_xy with t_cam = -R c.
    a.row(2 * i) << 1.0, 0.0, -u;
    b(2 * i) = u * q.z() - q.x();
    a.row(2 * i + 1) << 0.0, 1.0, -v;
    b(2 * i + 1) = v * q.z() - q.y();
  }
  const Eigen::Matrix3d ata = a.transpose() * a;
  Eigen::LDLT<Mat3> ldlt(ata);
  if (ldlt.info() != Eigen::Success || ldlt.isNegative()) {
    throw DegenerateConfiguration("solve_translation_linear: singular normal matrix");
  }
  const Vec3 t_cam = ldlt.solve(a.transpose() * b);
  if (!t_cam.allFinite()) {
    throw DegenerateConfiguration("solve_translation_linear: non-finite solution");
  }
  return -(r_cw.conjugate() * t_cam);
}

}  // namespace detail

// Cheirality filter plus multi-view consistency scoring. corrs_13 (tracks
// shared between the reference frame and a third view, with R_31 the
// relative rotation) sharpens the choice when available; with two views the
// recomposed transfer error decides and ties break on lexicographic n.
inline DecompositionSolution select_decomposition(
    const std::vector<DecompositionSolution>& solutions, const CameraIntrinsics& k,
    const std::vector<Correspondence>& corrs_12,
    const std::vector<Correspondence>& corrs_13 = {}, const Quat& r_31 = Quat::Identity()) {
  if (solutions.empty()) throw NoValidSolution("select_decomposition: no candidates");

  const Mat3 k_inv = k.inverse_matrix();
  std::vector<DecompositionSolution> survivors;
  for (const auto& sol : solutions) {
    if (sol.normal_unconstrained) {
      survivors.push_back(sol);
      continue;
    }
    // Under the gauge d = -1 the view-1 depth of a plane point is 1/(n.ray)
    // and the Eq.-2 translation becomes t_eq2 = t_over_d * d = -t_over_d.
    bool ok = true;
    for (const auto& c : corrs_12) {
      const Vec3 ray = k_inv * Vec3(c.p1.x(), c.p1.y(), 1.0);
      const double ndotr = sol.normal.dot(ray);
      if (ndotr <= tol::kRayPlaneDenominator) {
        ok = false;
        break;
      }
      const Vec3 x1 = ray / ndotr;
      const Vec3 x2 = sol.rotation * x1 - sol.t_over_d;
      if (x2.z() <= tol::kMinDepth) {
        ok = false;
        break;
      }
    }
    if (ok) survivors.push_back(sol);
  }
  if (survivors.empty()) {
    throw NoValidSolution("select_decomposition: all solutions fail cheirality");
  }
  if (survivors.size() == 1) return survivors.front();

  const bool third_view = corrs_13.size() >= 4;
  std::vector<double> scores(survivors.size(), 0.0);
  for (size_t si = 0; si < survivors.size(); ++si) {
    const auto& sol = survivors[si];
    double err = 0.0;
    if (third_view && !sol.normal_unconstrained) {
      // Plane (n, d=-1) in the view-1 frame; landmarks by planar back-projection,
      // then the third view's translation from a linear fixed-rotation solve.
      const PlaneParams plane(sol.normal, -1.0);
      std::vector<Vec3> points;
      std::vector<Vec2> pixels;
      points.reserve(corrs_13.size());
      try {
        for (const auto& c : corrs_13) {
          points.push_back(backproject_on_plane(k, Pose{}, plane, c.p1));
          pixels.push_back(c.p2);
        }
        const Vec3 c3 = detail::solve_translation_linear(k, r_31, points, pixels);
        for (size_t i = 0; i < points.size(); ++i) {
          const auto proj = project(k, Pose{r_31, c3}, points[i]);
          err += (proj.pixel - pixels[i]).squaredNorm();
        }
      } catch (const Error&) {
        err = std::numeric_limits<double>::infinity();
      }
    } else if (third_view) {
      const Mat3 h31 = k.matrix() * r_31.toRotationMatrix() * k_inv;
      for (const auto& c : corrs_13) {
        try {
          err += (transfer(Homography::from(h31), c.p1) - c.p2).squaredNorm();
        } catch (const Error&) {
          err = std::numeric_limits<double>::infinity();
        }
      }
    } else {
      Homography h = compose_solution(sol, k);
      for (const auto& c : corrs_12) {
        try {
          err += (transfer(h, c.p1) - c.p2).squaredNorm();
        } catch (const Error&) {
          err = std::numeric_limits<double>::infinity();
        }
      }
    }
    scores[si] = err;
  }

  size_t best = 0;
  for (size_t i = 1; i < survivors.size(); ++i) {
    const double a = scores[i];
    const double b = scores[best];
    if (!std::isfinite(a)) continue;
    if (!std::isfinite(b)) {
      best = i;
      continue;
    }
    const double rel = std::abs(a - b) / std::max(1.0, std::max(std::abs(a), std::abs(b)));
    if (rel <= 1e-12) {
      // Tie: lexicographically smaller normal wins.
      const Vec3& na = survivors[i].normal;
      const Vec3& nb = survivors[best].normal;
      if (std::lexicographical_compare(na.data(), na.data() + 3, nb.data(), nb.data() + 3)) {
        best = i;
      }
    } else if (a < b) {
      best = i;
    }
  }
  if (!std::isfinite(scores[best])) {
    throw NoValidSolution("select_decomposition: no survivor scored finitely");
  }
  return survivors[best];
}

// 3-point RANSAC plane fit with least-squares refit on the consensus set.
inline RansacResult<PlaneParams> fit_plane_ransac(const std::vector<Landmark>& points,
                                                  double threshold, std::uint64_t seed,
                                                  int max_iters = 500,
                                                  double confidence = 0.999) {
  const int n = static_cast<int>(points.size());
  if (n < 3) throw DegenerateConfiguration("fit_plane_ransac: needs >= 3 points");

  Rng rng(seed);
  std::vector<int> best_idx;
  std::optional<PlaneParams> best_plane;
  int iters_used = 0;
  int needed = max_iters;

  for (int iter = 0; iter < max_iters && iter < needed; ++iter) {
    iters_used = iter + 1;
    const auto sample = rng.sample_distinct(3, n);
    const Vec3& p0 = points[sample[0]].position;
    const Vec3& p1 = points[sample[1]].position;
    const Vec3& p2 = points[sample[2]].position;
    Vec3 normal = (p1 - p0).cross(p2 - p0);
    const double scale = std::max({(p1 - p0).norm(), (p2 - p0).norm(), 1e-12});
    if (normal.norm() < 1e-10 * scale * scale) continue;  // collinear sample
    normal.normalize();
    const PlaneParams candidate = PlaneParams(normal, -normal.dot(p0)).canonicalized();

    std::vector<int> idx;
    for (int i = 0; i < n; ++i) {
      if (std::abs(candidate.signed_distance(points[i].position)) < threshold) idx.push_back(i);
    }
    if (idx.size() > best_idx.size()) {
      best_idx = std::move(idx);
      best_plane = candidate;
      needed = detail::ransac_iterations_needed(static_cast<double>(best_idx.size()) / n, 3,
                                                confidence, max_iters);
    }
  }
  if (!best_plane || best_idx.size() < 3) {
    throw DegenerateConfiguration("fit_plane_ransac: no non-degenerate sample found");
  }

  // Refit: smallest eigenvector of the centered covariance.
  Vec3 centroid = Vec3::Zero();
  for (int i : best_idx) centroid += points[i].position;
  centroid /= static_cast<double>(best_idx.size());
  Mat3 cov = Mat3::Zero();
  for (int i : best_idx) {
    const Vec3 d = points[i].position - centroid;
    cov += d * d.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
  if (eig.info() != Eigen::Success) throw NumericalFailure("fit_plane_ransac: eigensolver failed");
  const Vec3 normal = eig.eigenvectors().col(0);
  PlaneParams refit = PlaneParams(normal, -normal.dot(centroid)).canonicalized();

  RansacResult<PlaneParams> out;
  out.model = refit;
  out.iterations = iters_used;
  for (int i = 0; i < n; ++i) {
    if (std::abs(refit.signed_distance(points[i].position)) < threshold) {
      out.inliers.push_back(points[i].id);
    }
  }
  std::sort(out.inliers.begin(), out.inliers.end());
  if (out.inliers.size() < 3) {
    throw DegenerateConfiguration("fit_plane_ransac: refit lost the consensus set");
  }
  return out;
}

}  // namespace planeinit
