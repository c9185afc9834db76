#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "planeinit/baselines.hpp"
#include "planeinit/eval.hpp"
#include "planeinit/synth.hpp"
#include "test_helpers.hpp"

using namespace planeinit;
using planeinit::testing::default_k;
using planeinit::testing::random_rotation;

namespace {

InitializationResult ground_truth_init(const GroundTruth& gt, bool plane_only) {
  InitializationResult init;
  init.method = "oracle";
  init.poses = gt.poses;
  for (size_t i = 0; i < gt.landmarks.size(); ++i) {
    if (!plane_only || gt.on_plane[i]) init.landmarks.push_back(gt.landmarks[i]);
  }
  init.plane = gt.plane;
  return init;
}

}  // namespace

TEST_CASE("triangulate recovers exact points and guards its preconditions") {
  Rng rng(301);
  const auto k = default_k();
  for (int trial = 0; trial < 20; ++trial) {
    Pose p1, p2;
    p1.translation = rng.normal_vec3(0.1);
    p2.translation = p1.translation + Vec3(rng.uniform(0.1, 0.3), rng.uniform(-0.1, 0.1), 0.0);
    p1.rotation = random_rotation(rng, 0.1);
    p2.rotation = random_rotation(rng, 0.1);
    const Vec3 point(rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(1.0, 2.0));

    const Vec2 o1 = project(k, p1, point).pixel;
    const Vec2 o2 = project(k, p2, point).pixel;
    const Landmark lm = triangulate(o1, o2, p1, p2, k, 7);
    CHECK(lm.id == 7);
    CHECK((lm.position - point).norm() < 1e-9);
  }

  Pose same;
  CHECK_THROWS_AS(triangulate(Vec2(320, 240), Vec2(320, 240), same, same, k),
                  InsufficientParallax);

  // Rays meeting behind both cameras: x-directions -0.2 and +0.2 with a
  // baseline of 1 intersect at z = -2.5.
  Pose left, right;
  right.translation = Vec3(1, 0, 0);
  CHECK_THROWS_AS(triangulate(Vec2(220, 240), Vec2(420, 240), left, right, k), NegativeDepth);
}

TEST_CASE("pnp_pose solves the fixed-rotation translation exactly") {
  Rng rng(303);
  const auto k = default_k();
  for (int trial = 0; trial < 20; ++trial) {
    Pose pose;
    pose.rotation = random_rotation(rng, 0.3);
    pose.translation = rng.normal_vec3(0.2);

    std::vector<Landmark> landmarks;
    std::vector<Vec2> obs;
    for (int j = 0; j < 12; ++j) {
      const Vec3 p(rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4), rng.uniform(1.2, 2.5));
      try {
        obs.push_back(project(k, pose, p).pixel);
        landmarks.push_back({j, p});
      } catch (const BehindCamera&) {
      }
    }
    if (landmarks.size() < 6) continue;
    const Pose est = pnp_pose(landmarks, obs, k, pose.rotation);
    CHECK((est.translation - pose.translation).norm() < 1e-9);
  }
}

TEST_CASE("pnp_pose zero-translation and degenerate branches") {
  const auto k = default_k();
  std::vector<Landmark> landmarks;
  std::vector<Vec2> obs;
  Pose origin;
  Rng rng(305);
  for (int j = 0; j < 8; ++j) {
    const Vec3 p(rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(1.0, 2.0));
    landmarks.push_back({j, p});
    obs.push_back(project(k, origin, p).pixel);
  }
  const Pose est = pnp_pose(landmarks, obs, k, Quat::Identity());
  CHECK(est.translation.norm() < 1e-10);

  landmarks.resize(3);
  obs.resize(3);
  CHECK_THROWS_AS(pnp_pose(landmarks, obs, k, Quat::Identity()), DegenerateConfiguration);
}

TEST_CASE("cluster_normals_dbscan picks the densest cluster") {
  std::vector<Vec3> normals(20, Vec3::UnitZ());
  Rng rng(307);
  for (int i = 0; i < 5; ++i) normals.push_back(rng.unit_vector());
  CHECK((cluster_normals_dbscan(normals, 5.0, 4) - Vec3::UnitZ()).norm() < 1e-9);

  // Two clusters, sizes 30 and 10: the mean of the big one wins.
  std::vector<Vec3> two;
  const Vec3 big = Vec3(0.1, 0.0, 1.0).normalized();
  const Vec3 small = Vec3(1.0, 0.2, 0.0).normalized();
  for (int i = 0; i < 30; ++i) {
    two.push_back((big + 0.01 * rng.normal_vec3(1.0)).normalized());
  }
  for (int i = 0; i < 10; ++i) {
    two.push_back((small + 0.01 * rng.normal_vec3(1.0)).normalized());
  }
  const Vec3 winner = cluster_normals_dbscan(two, 5.0, 4);
  CHECK(std::acos(std::abs(winner.dot(big))) < 2.0 * M_PI / 180.0);

  std::vector<Vec3> scattered;
  for (int i = 0; i < 12; ++i) scattered.push_back(rng.unit_vector());
  CHECK_THROWS_AS(cluster_normals_dbscan(scattered, 1.0, 4), NoCluster);
  CHECK_THROWS_AS(cluster_normals_dbscan({Vec3::UnitZ()}, 5.0, 4), NoCluster);
}

TEST_CASE("init_pnp_chain matches the ground truth on noise-free scenes") {
  SceneConfig cfg;
  cfg.frames = 6;
  cfg.plane_points = 64;
  cfg.seed = 50;
  const auto [window, gt] = generate_scene(cfg);

  const InitializationResult result = init_pnp_chain(window, true);
  REQUIRE(result.poses.size() == 6);

  // Up to the common scale: compare normalized relative centers.
  const auto [n_c1, d_c1] = testing::plane_in_camera(gt.plane, gt.poses[0]);
  for (size_t i = 1; i < result.poses.size(); ++i) {
    const Vec3 truth = (gt.poses[i].translation - gt.poses[0].translation) / -d_c1;
    CHECK((result.poses[i].translation - truth).norm() < 1e-6);
  }
  CHECK(pne(result.plane, gt.plane) < 1e-4);
}

TEST_CASE("init_pnp_chain with two frames reduces to decompose + triangulate") {
  SceneConfig cfg;
  cfg.frames = 2;
  cfg.plane_points = 64;
  cfg.seed = 52;
  const auto [window, gt] = generate_scene(cfg);
  const InitializationResult result = init_pnp_chain(window, true);
  CHECK(result.poses.size() == 2);
  CHECK(!result.landmarks.empty());
  const auto [n_c1, d_c1] = testing::plane_in_camera(gt.plane, gt.poses[0]);
  const Vec3 truth = (gt.poses[1].translation - gt.poses[0].translation) / -d_c1;
  CHECK((result.poses[1].translation - truth).norm() < 1e-6);
}

TEST_CASE("init_pnp_chain landmarks stay within the homography inliers") {
  SceneConfig cfg;
  cfg.frames = 6;
  cfg.plane_points = 64;
  cfg.clutter_points = 16;
  cfg.seed = 54;
  const auto [window, gt] = generate_scene(cfg);

  const InitializationResult result = init_pnp_chain(window, true);
  std::set<TrackId> on_plane_ids;
  for (size_t i = 0; i < gt.landmarks.size(); ++i) {
    if (gt.on_plane[i]) on_plane_ids.insert(gt.landmarks[i].id);
  }
  for (const auto& lm : result.landmarks) {
    CHECK(on_plane_ids.count(lm.id) == 1);
  }
}

TEST_CASE("init_dbscan aggregates decomposition normals to the true plane") {
  SceneConfig cfg;
  cfg.frames = 12;
  cfg.plane_points = 64;
  cfg.seed = 56;
  const auto [window, gt] = generate_scene(cfg);

  const InitializationResult result = init_dbscan(window);
  CHECK(pne(result.plane, gt.plane) < 0.5);  // noise-free candidates cluster tightly
  REQUIRE(result.poses.size() == 12);

  const auto [n_c1, d_c1] = testing::plane_in_camera(gt.plane, gt.poses[0]);
  for (size_t i = 1; i < result.poses.size(); ++i) {
    const Vec3 truth = (gt.poses[i].translation - gt.poses[0].translation) / -d_c1;
    CHECK((result.poses[i].translation - truth).norm() < 1e-3);
  }
}

TEST_CASE("BA Jacobians match central finite differences in all modes") {
  SceneConfig cfg;
  cfg.frames = 4;
  cfg.plane_points = 16;
  cfg.seed = 58;
  const auto [window, gt] = generate_scene(cfg);

  std::vector<TrackId> tracks;
  for (const auto& [id, px] : window.frames[0].observations) tracks.push_back(id);

  Rng rng(59);
  for (BaMode mode : {BaMode::kBa, BaMode::kPba, BaMode::kFpba}) {
    BaModel model(window, mode, tracks);
    BaModel::State state;
    for (int i = 1; i < cfg.frames; ++i) {
      state.centers.push_back(gt.poses[i].translation - gt.poses[0].translation);
    }
    state.plane_rotation = Quat::FromTwoVectors(Vec3::UnitZ(), gt.plane.normal);
    for (TrackId id : tracks) {
      const Vec3 p = gt.landmarks[id].position;
      state.points.push_back(p);
      const Vec3 h = state.plane_rotation.conjugate() * p;
      state.plane_coords.push_back(Vec2(h.x(), h.y()));
    }
    Eigen::VectorXd dx(model.tangent_dim());
    for (int i = 0; i < dx.size(); ++i) dx(i) = rng.normal(0.0, 0.03);
    state = model.plus(state, dx);

    const Eigen::MatrixXd jac = model.jacobian(state);
    Eigen::MatrixXd fd(model.residual_count(), model.tangent_dim());
    const double h = 1e-6;
    for (int c = 0; c < model.tangent_dim(); ++c) {
      Eigen::VectorXd step = Eigen::VectorXd::Zero(model.tangent_dim());
      step(c) = h;
      const Eigen::VectorXd rp = model.residuals(model.plus(state, step));
      step(c) = -h;
      const Eigen::VectorXd rm = model.residuals(model.plus(state, step));
      fd.col(c) = (rp - rm) / (2.0 * h);
    }
    const double rel =
        (jac - fd).cwiseAbs().maxCoeff() / std::max(1.0, jac.cwiseAbs().maxCoeff());
    CHECK(rel < 1e-5);

    Eigen::MatrixXd jtj;
    Eigen::VectorXd jtr;
    model.normal_equations(state, jtj, jtr);
    CHECK((jtj - jac.transpose() * jac).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((jtr - jac.transpose() * model.residuals(state)).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("bundle_adjust at the ground truth converges immediately in all modes") {
  SceneConfig cfg;
  cfg.frames = 5;
  cfg.plane_points = 36;
  cfg.seed = 60;
  const auto [window, gt] = generate_scene(cfg);
  const InitializationResult init = ground_truth_init(gt, true);

  for (BaMode mode : {BaMode::kBa, BaMode::kPba, BaMode::kFpba}) {
    const InitializationResult result =
        bundle_adjust(window, init, mode, false, SolverConfig{});
    CHECK(result.converged);

    // Zero cost at the optimum: every reprojection must be exact.
    for (size_t i = 0; i < result.poses.size(); ++i) {
      for (const auto& lm : result.landmarks) {
        auto it = window.frames[i].observations.find(lm.id);
        if (it == window.frames[i].observations.end()) continue;
        CHECK((project(window.intrinsics, result.poses[i], lm.position).pixel - it->second)
                  .norm() < 1e-6);
      }
    }
  }
}

TEST_CASE("PBA landmarks satisfy the plane equation to machine precision") {
  SceneConfig cfg;
  cfg.frames = 6;
  cfg.plane_points = 49;
  cfg.pixel_noise = 1.0;
  cfg.seed = 62;
  const auto [window, gt] = generate_scene(cfg);

  const InitializationResult init = init_dbscan(window);
  const InitializationResult result = bundle_adjust(window, init, BaMode::kPba, true, SolverConfig{});
  for (const auto& lm : result.landmarks) {
    CHECK(std::abs(result.plane.signed_distance(lm.position)) < 1e-12);
  }
}

TEST_CASE("FPBA with the true plane reaches zero cost on noise-free data") {
  SceneConfig cfg;
  cfg.frames = 5;
  cfg.plane_points = 36;
  cfg.seed = 64;
  const auto [window, gt] = generate_scene(cfg);
  const InitializationResult init = ground_truth_init(gt, true);

  const InitializationResult fpba = bundle_adjust(window, init, BaMode::kFpba, false, SolverConfig{});
  const InitializationResult pba = bundle_adjust(window, init, BaMode::kPba, false, SolverConfig{});
  for (size_t i = 0; i < fpba.poses.size(); ++i) {
    for (const auto& lm : fpba.landmarks) {
      auto it = window.frames[i].observations.find(lm.id);
      if (it == window.frames[i].observations.end()) continue;
      CHECK((project(window.intrinsics, fpba.poses[i], lm.position).pixel - it->second).norm() <
            1e-6);
    }
    for (const auto& lm : pba.landmarks) {
      auto it = window.frames[i].observations.find(lm.id);
      if (it == window.frames[i].observations.end()) continue;
      CHECK((project(window.intrinsics, pba.poses[i], lm.position).pixel - it->second).norm() <
            1e-6);
    }
  }
}

TEST_CASE("plane-coordinate lift is the identity on plane points") {
  Rng rng(311);
  for (int trial = 0; trial < 20; ++trial) {
    const Vec3 n = rng.unit_vector();
    const Quat q = Quat::FromTwoVectors(Vec3::UnitZ(), n);
    const Vec2 u(rng.uniform(-1, 1), rng.uniform(-1, 1));
    const Vec3 p = q * Vec3(u.x(), u.y(), 1.0);
    // Project back to coordinates and lift again.
    const Vec3 h = q.conjugate() * p;
    const Vec3 p2 = q * Vec3(h.x(), h.y(), 1.0);
    CHECK((p2 - p).norm() < 1e-14);
    // The lifted point satisfies n^T p - 1 = 0 (d = -1 gauge).
    CHECK(std::abs(n.dot(p) - 1.0) < 1e-14);
  }
}

TEST_CASE("bundle_adjust is deterministic") {
  SceneConfig cfg;
  cfg.frames = 6;
  cfg.plane_points = 36;
  cfg.pixel_noise = 0.5;
  cfg.seed = 66;
  const auto [window, gt] = generate_scene(cfg);
  const InitializationResult init = init_dbscan(window);

  const InitializationResult a = bundle_adjust(window, init, BaMode::kBa, false, SolverConfig{});
  const InitializationResult b = bundle_adjust(window, init, BaMode::kBa, false, SolverConfig{});
  REQUIRE(a.landmarks.size() == b.landmarks.size());
  for (size_t i = 0; i < a.landmarks.size(); ++i) {
    CHECK(a.landmarks[i].position == b.landmarks[i].position);  // bitwise
  }
  for (size_t i = 0; i < a.poses.size(); ++i) {
    CHECK(a.poses[i].translation == b.poses[i].translation);
  }
}
