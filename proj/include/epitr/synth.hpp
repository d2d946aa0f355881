#ifndef EPITR_SYNTH_HPP
#define EPITR_SYNTH_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "epitr/common.hpp"
#include "epitr/geometry.hpp"
#include "epitr/sampler.hpp"

namespace epitr {

struct Rig {
  std::vector<CameraView> cameras;
  std::vector<Vec3> centers;       // mm
  std::vector<Vec3> optical_axes;  // unit, pointing into the scene

  std::size_t size() const { return cameras.size(); }

  /// Angle between optical axes of cameras i and j, in degrees.
  double viewing_angle(std::size_t i, std::size_t j) const {
    const double c = std::clamp(optical_axes[i].dot(optical_axes[j]), -1.0, 1.0);
    return std::acos(c) * 180.0 / std::numbers::pi;
  }
};

struct Scene {
  std::vector<Vec3> joints;     // mm
  Eigen::MatrixXd descriptors;  // J x C, unit rows
  std::uint64_t seed = 0;

  int joint_count() const { return static_cast<int>(joints.size()); }
  int channels() const { return static_cast<int>(descriptors.cols()); }
};

/// splitmix64 finalizer, used to derive independent sub-seeds.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Camera at `center` looking at `target`, world +z up, image y down, with
/// the principal point at the image center (pixel-center convention).
inline CameraView look_at_camera(const Vec3& center, const Vec3& target, double focal_px, int width, int height) {
  const Vec3 forward = (target - center).normalized();
  Vec3 up = Vec3::UnitZ();
  if (std::abs(forward.dot(up)) > 1.0 - 1e-9) up = Vec3::UnitY();
  const Vec3 right = forward.cross(up).normalized();
  const Vec3 down = forward.cross(right);
  Mat3 R;
  R.row(0) = right.transpose();
  R.row(1) = down.transpose();
  R.row(2) = forward.transpose();
  Mat3 K;
  K << focal_px, 0.0, 0.5 * (width - 1),
       0.0, focal_px, 0.5 * (height - 1),
       0.0, 0.0, 1.0;
  Mat34 Rt;
  Rt.leftCols<3>() = R;
  Rt.col(3) = -R * center;
  return {K * Rt, width, height};
}

/// n cameras on a horizontal circle around the origin, consecutive optical
/// axes `angle_deg` apart, all aimed at the origin. The seed picks the
/// azimuth of the first camera.
inline Rig make_rig(int n, double angle_deg, double radius_mm, int width, int height, double focal_px,
                    std::uint64_t seed) {
  if (n < 2) throw Error(ErrorKind::InvalidArgument, "rig needs at least two cameras");
  if (!(angle_deg > 0.0 && angle_deg < 180.0)) {
    throw Error(ErrorKind::InvalidAngle, "angle between cameras must lie in (0, 180) degrees");
  }
  if (!(radius_mm > 0.0) || !(focal_px > 0.0) || width < 2 || height < 2) {
    throw Error(ErrorKind::InvalidArgument, "rig radius, focal length and image size must be positive");
  }
  std::mt19937_64 rng(seed);
  const double start = std::uniform_real_distribution<double>(0.0, 2.0 * std::numbers::pi)(rng);
  const double step = angle_deg * std::numbers::pi / 180.0;
  Rig rig;
  for (int i = 0; i < n; ++i) {
    const double az = start + i * step;
    const Vec3 c(radius_mm * std::cos(az), radius_mm * std::sin(az), 0.0);
    rig.centers.push_back(c);
    rig.optical_axes.push_back(-c.normalized());
    rig.cameras.push_back(look_at_camera(c, Vec3::Zero(), focal_px, width, height));
  }
  return rig;
}

/// J joints uniform in a cube of side `extent_mm` centered at the origin,
/// with unit descriptors whose pairwise dot products stay below 0.5.
inline Scene make_scene(int joints, double extent_mm, int channels, std::uint64_t seed) {
  if (joints < 1) throw Error(ErrorKind::InvalidArgument, "scene needs at least one joint");
  if (channels < 4) throw Error(ErrorKind::InvalidArgument, "descriptors need at least four channels");
  if (!(extent_mm > 0.0)) throw Error(ErrorKind::InvalidArgument, "extent must be positive");
  constexpr int kMaxDraws = 1000;
  constexpr double kMaxDot = 0.5;

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> pos(-0.5 * extent_mm, 0.5 * extent_mm);
  std::normal_distribution<double> gauss(0.0, 1.0);

  Scene scene;
  scene.seed = seed;
  for (int j = 0; j < joints; ++j) scene.joints.emplace_back(pos(rng), pos(rng), pos(rng));

  scene.descriptors.resize(joints, channels);
  Eigen::VectorXd d(channels);
  for (int j = 0; j < joints; ++j) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxDraws && !placed; ++attempt) {
      for (int c = 0; c < channels; ++c) d(c) = gauss(rng);
      d.normalize();
      placed = true;
      for (int k = 0; k < j; ++k) {
        if (scene.descriptors.row(k).dot(d) >= kMaxDot) {
          placed = false;
          break;
        }
      }
    }
    if (!placed) {
      throw Error(ErrorKind::DescriptorSaturation,
                  "could not draw " + std::to_string(joints) + " separable descriptors in " +
                      std::to_string(channels) + " channels");
    }
    scene.descriptors.row(j) = d.transpose();
  }
  return scene;
}

/// Joint projections in feature-map pixels; nullopt for joints behind the camera.
inline std::vector<std::optional<Vec2>> project_joints(const CameraView& map_cam, const Scene& scene) {
  std::vector<std::optional<Vec2>> out(scene.joints.size());
  for (std::size_t j = 0; j < scene.joints.size(); ++j) {
    if (in_front(map_cam, scene.joints[j])) out[j] = project(map_cam, scene.joints[j]);
  }
  return out;
}

/// Descriptor image: sum over joints of d_j times a unit-peak Gaussian at the
/// joint's projection, at the given map resolution.
inline FeatureMap render_descriptor_map(const CameraView& cam, const Scene& scene, double sigma_px, int map_width,
                                        int map_height) {
  if (!(sigma_px > 0.0)) throw Error(ErrorKind::InvalidArgument, "sigma must be positive");
  FeatureMap F(map_height, map_width, scene.channels());
  const auto proj = project_joints(camera_for_map(cam, map_width, map_height), scene);
  const double inv = 1.0 / (2.0 * sigma_px * sigma_px);
  for (std::size_t j = 0; j < proj.size(); ++j) {
    if (!proj[j]) continue;
    const Vec2 c = *proj[j];
    const auto d = scene.descriptors.row(static_cast<Eigen::Index>(j)).transpose();
    for (int y = 0; y < map_height; ++y) {
      for (int x = 0; x < map_width; ++x) {
        const double dx = x - c.x();
        const double dy = y - c.y();
        F.pixel(y, x) += std::exp(-(dx * dx + dy * dy) * inv) * d;
      }
    }
  }
  return F;
}

}  // namespace epitr

#endif  // EPITR_SYNTH_HPP
