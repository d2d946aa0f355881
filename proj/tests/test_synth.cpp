#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "epitr/pipeline.hpp"
#include "epitr/synth.hpp"
#include "support.hpp"

using namespace epitr;

TEST(Rig, TwoCamerasAtRightAngle) {
  const Rig rig = make_rig(2, 90.0, 2000.0, 256, 256, 200, 0);
  EXPECT_NEAR((rig.centers[0] - rig.centers[1]).norm(), 2000.0 * std::sqrt(2.0), 1e-9);
}

TEST(Rig, ConsecutiveAxesAtRequestedAngle) {
  const Rig rig = make_rig(10, 24.0, 2000.0, 256, 256, 200, 5);
  for (std::size_t i = 0; i + 1 < rig.size(); ++i) {
    const double dot = rig.optical_axes[i].dot(rig.optical_axes[i + 1]);
    EXPECT_NEAR(std::acos(dot) * 180.0 / std::numbers::pi, 24.0, 0.1);
  }
}

TEST(Rig, CamerasAimAtOriginWithCenteredPrincipalPoint) {
  const Rig rig = make_rig(5, 30.0, 1500.0, 320, 240, 250, 7);
  for (std::size_t i = 0; i < rig.size(); ++i) {
    const Vec2 o = project(rig.cameras[i], Vec3::Zero());
    EXPECT_NEAR(o.x(), 159.5, 1e-9);
    EXPECT_NEAR(o.y(), 119.5, 1e-9);
    EXPECT_NEAR(rig.centers[i].norm(), 1500.0, 1e-9);
    const Vec3 c = camera_center(rig.cameras[i]).hnormalized();
    EXPECT_LT((c - rig.centers[i]).norm(), 1e-9 * 1500.0);
  }
}

TEST(Rig, ZeroAngleRejected) {
  for (double a : {0.0, 180.0, -5.0}) {
    try {
      make_rig(3, a, 2000.0, 64, 64, 50, 0);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::InvalidAngle);
    }
  }
}

TEST(Scene, SingleJoint) {
  const Scene s = make_scene(1, 1000.0, 8, 3);
  EXPECT_EQ(s.joint_count(), 1);
  EXPECT_NEAR(s.descriptors.row(0).norm(), 1.0, 1e-12);
}

TEST(Scene, DescriptorsSeparable) {
  const Scene s = make_scene(21, 1000.0, 32, 4);
  for (int i = 0; i < 21; ++i) {
    EXPECT_NEAR(s.descriptors.row(i).norm(), 1.0, 1e-12);
    EXPECT_LE(s.joints[i].cwiseAbs().maxCoeff(), 500.0);
    for (int j = 0; j < i; ++j) EXPECT_LT(s.descriptors.row(i).dot(s.descriptors.row(j)), 0.5);
  }
}

TEST(Scene, SaturationReported) {
  try {
    make_scene(100, 1000.0, 4, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DescriptorSaturation);
  }
}

TEST(Render, IntegerProjectionGivesDescriptor) {
  // Odd image size puts the principal point, and hence the origin, on pixel (31, 31).
  const CameraView cam = look_at_camera(Vec3(2000, 0, 0), Vec3::Zero(), 60, 63, 63);
  Scene s = make_scene(1, 1000.0, 6, 1);
  s.joints[0] = Vec3::Zero();
  const FeatureMap F = render_descriptor_map(cam, s, 2.0, 63, 63);
  EXPECT_LT((F.pixel(31, 31) - s.descriptors.row(0).transpose()).norm(), 1e-12);
}

TEST(Render, SeparatedJointsKeepTheirDescriptor) {
  const CameraView cam = look_at_camera(Vec3(2000, 0, 0), Vec3::Zero(), 200, 129, 129);
  Scene s = make_scene(2, 1000.0, 16, 2);
  s.joints[0] = Vec3(0, 300, 0);
  s.joints[1] = Vec3(0, -300, 100);
  const FeatureMap F = render_descriptor_map(cam, s, 2.0, 129, 129);
  for (int j = 0; j < 2; ++j) {
    const Vec2 p = project(cam, s.joints[j]);
    const Eigen::VectorXd f = F.pixel(static_cast<int>(std::round(p.y())), static_cast<int>(std::round(p.x())));
    EXPECT_GT(f.normalized().dot(s.descriptors.row(j)), 1.0 - 1e-9);
  }
}

TEST(Render, JointBehindCameraContributesNothing) {
  const CameraView cam = look_at_camera(Vec3(2000, 0, 0), Vec3::Zero(), 200, 64, 64);
  Scene s = make_scene(1, 1000.0, 8, 2);
  s.joints[0] = Vec3(3000, 0, 0);
  const FeatureMap F = render_descriptor_map(cam, s, 2.0, 64, 64);
  for (double v : F.data()) EXPECT_EQ(v, 0.0);
}

TEST(Pipeline, SourceViewIsNearestToTargetAngle) {
  const Rig rig = make_rig(10, 24.0, 2000.0, 64, 64, 50, 0);
  EXPECT_EQ(select_source_view(rig, 0, 24.0), 1);
  EXPECT_EQ(select_source_view(rig, 5, 24.0), 4);  // ties go to the lower index
  EXPECT_EQ(select_source_view(rig, 5, 48.0), 3);
}

TEST(Pipeline, MapToImageInvertsRescale) {
  const CameraView cam = look_at_camera(Vec3(2000, 0, 0), Vec3::Zero(), 200, 256, 192);
  const CameraView m = camera_for_map(cam, 128, 96);
  const Vec3 X(10, 40, -70);
  EXPECT_LT((map_to_image(project(m, X), cam, 128, 96) - project(cam, X)).norm(), 1e-9);
}

TEST(Pipeline, NoiselessScenarioMeetsTargets) {
  Scenario s;
  s.seed = 3;
  const Report r = run_scenario(s);
  EXPECT_GE(r.matching_accuracy, 0.99);
  EXPECT_LT(r.analytic_mpjpe_mm, 1e-6);
  EXPECT_LT(r.mpjpe_mm, 0.005 * s.extent_mm);
  EXPECT_GT(r.match_total, 100);
  EXPECT_FALSE(r.profiles.empty());
}

TEST(Pipeline, ProfilesPeakAtCorrespondence) {
  Scenario s;
  s.seed = 4;
  s.cameras = 4;
  const Rig rig = scenario_rig(s);
  const Scene scene = scenario_scene(s);
  const FeatureMap F0 = render_descriptor_map(rig.cameras[0], scene, s.sigma_px, s.map_width, s.map_height);
  const FeatureMap F1 = render_descriptor_map(rig.cameras[1], scene, s.sigma_px, s.map_width, s.map_height);
  int total = 0;
  int good = 0;
  for (int j = 0; j < scene.joint_count(); ++j) {
    SimilarityProfile p;
    try {
      p = similarity_profile(F0, F1, rig.cameras[0], rig.cameras[1], scene, scenario_params(s), j, s.K);
    } catch (const Error&) {
      continue;
    }
    if (!p.truth || p.skipped) continue;
    ++total;
    double sum = 0.0;
    for (const auto& x : p.samples) sum += x.weight;
    EXPECT_NEAR(sum, 1.0, 1e-9);
    good += profile_matches(p) ? 1 : 0;
  }
  ASSERT_GT(total, 10);
  EXPECT_GE(static_cast<double>(good) / total, 0.99);
}

TEST(Pipeline, ThreadCountDoesNotChangeReport) {
  Scenario s;
  s.cameras = 4;
  s.noise_px = 1.0;
  s.seed = 8;
  const Report a = run_scenario(s, 1);
  const Report b = run_scenario(s, 3);
  EXPECT_EQ(a.mpjpe_mm, b.mpjpe_mm);
  EXPECT_EQ(a.jdr_pct, b.jdr_pct);
  EXPECT_EQ(a.matched, b.matched);
  for (std::size_t j = 0; j < a.joints.size(); ++j) EXPECT_EQ(a.joints[j].X, b.joints[j].X);
}

TEST(Pipeline, RigidMotionOfWholeSetupKeepsMpjpe) {
  Scenario s;
  s.cameras = 6;
  s.seed = 5;
  const Rig rig = scenario_rig(s);
  const Scene scene = scenario_scene(s);
  const FusionParams params = scenario_params(s);
  const PipelineOptions opt = pipeline_options(s);
  const Report base = run_pipeline(rig, scene, params, opt);

  const Mat3 R = Eigen::AngleAxisd(0.7, Vec3(0.3, -0.5, 0.8).normalized()).toRotationMatrix();
  const Vec3 t(1234.0, -567.0, 89.0);
  Eigen::Matrix4d T_inv = Eigen::Matrix4d::Identity();
  T_inv.topLeftCorner<3, 3>() = R.transpose();
  T_inv.topRightCorner<3, 1>() = -R.transpose() * t;
  Rig moved = rig;
  for (std::size_t i = 0; i < rig.size(); ++i) {
    moved.cameras[i].M = rig.cameras[i].M * T_inv;
    moved.centers[i] = R * rig.centers[i] + t;
    moved.optical_axes[i] = R * rig.optical_axes[i];
  }
  Scene moved_scene = scene;
  for (auto& X : moved_scene.joints) X = R * X + t;
  const Report r = run_pipeline(moved, moved_scene, params, opt);
  EXPECT_NEAR(r.mpjpe_mm, base.mpjpe_mm, 1e-9 * base.mpjpe_mm);
  EXPECT_EQ(r.matched, base.matched);
}
