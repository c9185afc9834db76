#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "planeinit/gpo.hpp"
#include "planeinit/synth.hpp"
#include "test_helpers.hpp"

using namespace planeinit;
using planeinit::testing::plane_in_camera;

namespace {

// Ground-truth GPO state of a generated scene: world normal plus camera
// centers relative to frame 1, divided by the reference plane distance.
GpoState ground_truth_state(const GroundTruth& gt, int frames) {
  const auto [n_c1, d_c1] = plane_in_camera(gt.plane, gt.poses[0]);
  REQUIRE(d_c1 < 0.0);
  GpoState st;
  st.normal_rotation = Quat::FromTwoVectors(Vec3::UnitZ(), gt.plane.normal);
  for (int i = 1; i < frames; ++i) {
    st.translations.push_back((gt.poses[i].translation - gt.poses[0].translation) / -d_c1);
  }
  return st;
}

GpoState align_sign(const GpoState& state, const Vec3& n_ref) {
  GpoState out = state;
  if (state.normal().dot(n_ref) < 0.0) {
    out.normal_rotation = Quat::FromTwoVectors(Vec3::UnitZ(), -state.normal());
    for (auto& t : out.translations) t = -t;
  }
  return out;
}

}  // namespace

TEST_CASE("initial_state follows the reference camera's optical axis") {
  SceneConfig cfg;
  cfg.frames = 4;
  cfg.plane_points = 25;
  cfg.trajectory = Trajectory::kLateral;  // identity rotations
  cfg.seed = 2;
  const auto [window, gt] = generate_scene(cfg);

  const GpoState st = initial_state(window);
  CHECK((st.normal() - Vec3::UnitZ()).norm() < 1e-12);
  REQUIRE(st.translations.size() == 3);
  for (const auto& t : st.translations) CHECK(t.norm() == 0.0);

  // Rotated reference frame: the normal moves with R1^T e_z.
  FrameWindow rotated = window;
  const Quat r1 = quat_exp(Vec3(M_PI / 2.0, 0, 0));
  for (auto& f : rotated.frames) f.rotation = r1;
  const GpoState st2 = initial_state(rotated);
  CHECK((st2.normal() - r1.conjugate() * Vec3::UnitZ()).norm() < 1e-9);
  CHECK(std::abs(st2.normal_rotation.norm() - 1.0) < tol::kUnitNorm);
}

TEST_CASE("gpo_residuals vanish at the ground truth of a noise-free scene") {
  SceneConfig cfg;
  cfg.frames = 6;
  cfg.plane_points = 36;
  cfg.seed = 8;
  const auto [window, gt] = generate_scene(cfg);

  const GpoState st = ground_truth_state(gt, cfg.frames);
  const Eigen::VectorXd r = gpo_residuals(st, window);

  int expected = 0;
  for (int i = 1; i < cfg.frames; ++i) {
    expected += 2 * static_cast<int>(window.correspondences(i).size());
  }
  CHECK(r.size() == expected);
  CHECK(r.cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("gpo_residuals are rotation-compensated on pure-rotation scenes") {
  SceneConfig cfg;
  cfg.frames = 5;
  cfg.plane_points = 25;
  cfg.trajectory = Trajectory::kPureRotation;
  cfg.seed = 12;
  const auto [window, gt] = generate_scene(cfg);
  const Eigen::VectorXd r = gpo_residuals(initial_state(window), window);
  CHECK(r.cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("gpo_residuals cap degenerate transfers") {
  FrameWindow window;
  window.intrinsics = testing::default_k();
  window.frames.resize(2);
  for (int j = 0; j < 4; ++j) {
    const Vec2 px(300.0 + 10 * j, 240.0 - 5 * j);
    window.frames[0].observations[j] = px;
    window.frames[1].observations[j] = px;
  }
  window.frames[0].observations[9] = Vec2(320, 240);
  window.frames[1].observations[9] = Vec2(320, 240);

  GpoState st = initial_state(window);
  st.translations[0] = Vec3(0, 0, 1);  // sends the principal ray to z = 0

  GpoModel model(window);
  const Eigen::VectorXd r = model.residuals(st);
  CHECK(model.last_degenerate_transfers() >= 1);
  CHECK(r.cwiseAbs().maxCoeff() == tol::kCappedResidual);
}

TEST_CASE("GPO parameter accounting matches the (3m-1) analysis") {
  SceneConfig cfg;
  cfg.frames = 7;
  cfg.plane_points = 25;
  cfg.seed = 14;
  const auto [window, gt] = generate_scene(cfg);
  GpoModel model(window);
  CHECK(model.tangent_dim() == 3 * (cfg.frames - 1) + 3);  // 3m-1 effective + unit norm
  int n_total = 0;
  for (int i = 1; i < cfg.frames; ++i) n_total += static_cast<int>(window.correspondences(i).size());
  CHECK(model.residual_count() == 2 * n_total);
}

TEST_CASE("GPO Jacobian matches central finite differences") {
  SceneConfig cfg;
  cfg.frames = 4;
  cfg.plane_points = 16;
  cfg.seed = 16;
  const auto [window, gt] = generate_scene(cfg);
  GpoModel model(window);

  Rng rng(55);
  for (int trial = 0; trial < 20; ++trial) {
    GpoState st = ground_truth_state(gt, cfg.frames);
    Eigen::VectorXd dx = Eigen::VectorXd::Zero(model.tangent_dim());
    for (int i = 0; i < dx.size(); ++i) dx(i) = rng.normal(0.0, 0.05);
    st = model.plus(st, dx);

    const Eigen::MatrixXd jac = model.jacobian(st);
    Eigen::MatrixXd fd(model.residual_count(), model.tangent_dim());
    const double h = 1e-6;
    for (int c = 0; c < model.tangent_dim(); ++c) {
      Eigen::VectorXd step = Eigen::VectorXd::Zero(model.tangent_dim());
      step(c) = h;
      const Eigen::VectorXd rp = model.residuals(model.plus(st, step));
      step(c) = -h;
      const Eigen::VectorXd rm = model.residuals(model.plus(st, step));
      fd.col(c) = (rp - rm) / (2.0 * h);
    }
    const double rel =
        (jac - fd).cwiseAbs().maxCoeff() / std::max(1.0, jac.cwiseAbs().maxCoeff());
    CHECK(rel < 1e-5);
  }
}

TEST_CASE("normal equations agree with the dense Jacobian") {
  SceneConfig cfg;
  cfg.frames = 5;
  cfg.plane_points = 16;
  cfg.seed = 18;
  const auto [window, gt] = generate_scene(cfg);
  GpoModel model(window);

  GpoState st = ground_truth_state(gt, cfg.frames);
  Eigen::VectorXd dx = Eigen::VectorXd::Constant(model.tangent_dim(), 0.02);
  st = model.plus(st, dx);

  Eigen::MatrixXd jtj;
  Eigen::VectorXd jtr;
  model.normal_equations(st, jtj, jtr);
  const Eigen::MatrixXd jac = model.jacobian(st);
  const Eigen::VectorXd res = model.residuals(st);
  CHECK((jtj - jac.transpose() * jac).cwiseAbs().maxCoeff() < 1e-8);
  CHECK((jtr - jac.transpose() * res).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("solve_gpo recovers the plane and scaled translations exactly") {
  SceneConfig cfg;
  cfg.frames = 10;
  cfg.plane_points = 100;
  cfg.seed = 20;
  const auto [window, gt] = generate_scene(cfg);

  const GpoResult result = solve_gpo(window, SolverConfig{});
  CHECK(result.converged);

  const GpoState truth = ground_truth_state(gt, cfg.frames);
  const GpoState aligned = align_sign(result.state, truth.normal());
  CHECK(std::acos(std::min(1.0, std::abs(aligned.normal().dot(truth.normal())))) < 1e-6);
  for (size_t i = 0; i < truth.translations.size(); ++i) {
    CHECK((aligned.translations[i] - truth.translations[i]).norm() < 1e-8);
  }
}

TEST_CASE("solve_gpo started at the optimum stops immediately") {
  SceneConfig cfg;
  cfg.frames = 6;
  cfg.plane_points = 49;
  cfg.seed = 22;
  const auto [window, gt] = generate_scene(cfg);

  const GpoResult result = solve_gpo(window, SolverConfig{}, ground_truth_state(gt, cfg.frames));
  CHECK(result.converged);
  CHECK(result.iterations <= 2);
  CHECK(result.final_cost < 1e-18);
}

TEST_CASE("solve_gpo flags pure-rotation windows as unobservable") {
  SceneConfig cfg;
  cfg.frames = 6;
  cfg.plane_points = 36;
  cfg.trajectory = Trajectory::kPureRotation;
  cfg.seed = 24;
  const auto [window, gt] = generate_scene(cfg);

  const GpoResult result = solve_gpo(window, SolverConfig{});
  CHECK(result.low_confidence);
  const GpoState init = initial_state(window);
  CHECK(result.state.normal().dot(init.normal()) > 1.0 - 1e-9);
  for (const auto& t : result.state.translations) CHECK(t.norm() < 1e-9);
}

TEST_CASE("cost strictly changes when translations scale without the plane rescale") {
  SceneConfig cfg;
  cfg.frames = 5;
  cfg.plane_points = 36;
  cfg.trajectory = Trajectory::kOrbit;
  cfg.seed = 26;
  const auto [window, gt] = generate_scene(cfg);
  GpoModel model(window);

  const GpoState truth = ground_truth_state(gt, cfg.frames);
  GpoState scaled = truth;
  for (auto& t : scaled.translations) t *= 2.0;
  const double cost_truth = 0.5 * model.residuals(truth).squaredNorm();
  const double cost_scaled = 0.5 * model.residuals(scaled).squaredNorm();
  CHECK(cost_truth < 1e-15);
  CHECK(cost_scaled > 1e3 * std::max(cost_truth, 1e-18));

  // Paired with the plane-distance rescale the homography is unchanged.
  const auto [n_c1, d_c1] = plane_in_camera(gt.plane, gt.poses[0]);
  const Quat r21 = gt.poses[1].rotation * gt.poses[0].rotation.conjugate();
  const Vec3 t21 = gt.poses[1].rotation * (gt.poses[0].translation - gt.poses[1].translation);
  const Homography a = homography_from_pose_plane(window.intrinsics, r21, t21, n_c1, d_c1);
  const Homography b =
      homography_from_pose_plane(window.intrinsics, r21, 3.0 * t21, n_c1, 3.0 * d_c1);
  CHECK((a.m - b.m).norm() < 1e-12);
}

TEST_CASE("appending a clone of the reference frame estimates a zero translation") {
  SceneConfig cfg;
  cfg.frames = 5;
  cfg.plane_points = 49;
  cfg.seed = 28;
  auto [window, gt] = generate_scene(cfg);

  FrameWindow extended = window;
  extended.frames.push_back(extended.frames.front());
  const GpoResult result = solve_gpo(extended, SolverConfig{});
  CHECK(result.state.translations.back().norm() < 1e-6);
}

TEST_CASE("accepted costs are monotone and results deterministic") {
  SceneConfig cfg;
  cfg.frames = 8;
  cfg.plane_points = 64;
  cfg.pixel_noise = 1.0;
  cfg.seed = 30;
  const auto [window, gt] = generate_scene(cfg);

  const GpoResult a = solve_gpo(window, SolverConfig{});
  for (size_t i = 1; i < a.accepted_costs.size(); ++i) {
    CHECK(a.accepted_costs[i] <= a.accepted_costs[i - 1]);
  }

  const GpoResult b = solve_gpo(window, SolverConfig{});
  CHECK(a.state.normal_rotation.coeffs() == b.state.normal_rotation.coeffs());  // bitwise
  REQUIRE(a.state.translations.size() == b.state.translations.size());
  for (size_t i = 0; i < a.state.translations.size(); ++i) {
    CHECK(a.state.translations[i] == b.state.translations[i]);
  }
  CHECK(a.final_cost == b.final_cost);
  CHECK(a.iterations == b.iterations);
}

TEST_CASE("Schur elimination reproduces the dense solve") {
  SceneConfig cfg;
  cfg.frames = 8;
  cfg.plane_points = 64;
  cfg.pixel_noise = 0.5;
  cfg.seed = 32;
  const auto [window, gt] = generate_scene(cfg);

  SolverConfig dense;
  SolverConfig schur;
  schur.use_schur = true;
  const GpoResult a = solve_gpo(window, dense);
  const GpoResult b = solve_gpo(window, schur);
  CHECK(a.converged);
  CHECK(b.converged);
  CHECK((a.state.normal() - b.state.normal()).norm() < 1e-8);
  for (size_t i = 0; i < a.state.translations.size(); ++i) {
    CHECK((a.state.translations[i] - b.state.translations[i]).norm() < 1e-8);
  }
}

TEST_CASE("solve_gpo rejects starved windows") {
  FrameWindow window;
  window.intrinsics = testing::default_k();
  window.frames.resize(2);
  for (int j = 0; j < 3; ++j) {
    window.frames[0].observations[j] = Vec2(300 + j, 240);
    window.frames[1].observations[j] = Vec2(301 + j, 240);
  }
  CHECK_THROWS_AS(solve_gpo(window, SolverConfig{}), InsufficientTracks);
}

TEST_CASE("run_gpo_pipeline keeps only plane-consistent landmarks") {
  SceneConfig cfg;
  cfg.frames = 8;
  cfg.plane_points = 64;
  cfg.clutter_points = 16;
  cfg.seed = 34;
  const auto [window, gt] = generate_scene(cfg);

  const InitializationResult result = run_gpo_pipeline(window, true, SolverConfig{});
  REQUIRE(!result.landmarks.empty());
  std::set<TrackId> plane_ids;
  for (size_t i = 0; i < gt.landmarks.size(); ++i) {
    if (gt.on_plane[i]) plane_ids.insert(gt.landmarks[i].id);
  }
  for (const auto& lm : result.landmarks) {
    CHECK(plane_ids.count(lm.id) == 1);
  }
  CHECK(result.poses.size() == window.frames.size());
  CHECK(result.optim_time_ms <= result.total_time_ms);
  CHECK(result.method == "GPO");
}
