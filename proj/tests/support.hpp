#ifndef EPITR_TESTS_SUPPORT_HPP
#define EPITR_TESTS_SUPPORT_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>

#include <Eigen/Dense>

#include "epitr/geometry.hpp"
#include "epitr/sampler.hpp"
#include "epitr/synth.hpp"

namespace epitr::test {

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline Eigen::MatrixXd random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = scale * uniform(rng, -1.0, 1.0);
  }
  return m;
}

inline FeatureMap random_map(std::mt19937_64& rng, int h, int w, int c) {
  FeatureMap F(h, w, c);
  for (double& v : F.data()) v = uniform(rng, -1.0, 1.0);
  return F;
}

/// Camera pair looking roughly at the origin from 1.5-3 m, separated by
/// 10-120 degrees of azimuth with some elevation, intrinsics jittered.
struct CameraPair {
  CameraView ref;
  CameraView src;
};

inline CameraView random_camera(std::mt19937_64& rng, double azimuth, int w, int h) {
  const double r = uniform(rng, 1500.0, 3000.0);
  const double elev = uniform(rng, -0.3, 0.3);
  const Vec3 c(r * std::cos(azimuth) * std::cos(elev), r * std::sin(azimuth) * std::cos(elev), r * std::sin(elev));
  const Vec3 target(uniform(rng, -100, 100), uniform(rng, -100, 100), uniform(rng, -100, 100));
  CameraView cam = look_at_camera(c, target, uniform(rng, 0.8, 1.5) * w, w, h);
  // Skew and aspect jitter so K is not a pure focal/principal-point matrix.
  Mat3 J = Mat3::Identity();
  J(0, 1) = uniform(rng, -0.02, 0.02);
  J(1, 1) = uniform(rng, 0.95, 1.05);
  cam.M = J * cam.M;
  // Arbitrary positive projective scale.
  cam.M *= uniform(rng, 0.01, 100.0);
  return cam;
}

inline CameraPair random_pair(std::mt19937_64& rng, int w = 64, int h = 48) {
  const double az = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const double sep = uniform(rng, 10.0, 120.0) * std::numbers::pi / 180.0;
  return {random_camera(rng, az, w, h), random_camera(rng, az + sep, w, h)};
}

/// A 3D point near the origin that both cameras see inside their images.
inline std::optional<Vec3> covisible_point(std::mt19937_64& rng, const CameraView& a, const CameraView& b) {
  for (int attempt = 0; attempt < 200; ++attempt) {
    const Vec3 X(uniform(rng, -400, 400), uniform(rng, -400, 400), uniform(rng, -400, 400));
    if (!in_front(a, X) || !in_front(b, X)) continue;
    if (inside_image(a, project(a, X)) && inside_image(b, project(b, X))) return X;
  }
  return std::nullopt;
}

/// Liang-Barsky clip of the infinite line {p : l.p = 0} to [0,W-1]x[0,H-1],
/// parameterized from a point on the line along direction (-b, a).
inline std::optional<Segment2D> liang_barsky(const Vec3& l, int w, int h) {
  const Vec2 dir(-l.y(), l.x());
  const Vec2 p0 = -l.z() * Vec2(l.x(), l.y()) / (l.x() * l.x() + l.y() * l.y());
  double t0 = -1e300;
  double t1 = 1e300;
  const double xmax = w - 1;
  const double ymax = h - 1;
  const double p[4] = {-dir.x(), dir.x(), -dir.y(), dir.y()};
  const double q[4] = {p0.x(), xmax - p0.x(), p0.y(), ymax - p0.y()};
  for (int i = 0; i < 4; ++i) {
    if (p[i] == 0.0) {
      if (q[i] < 0.0) return std::nullopt;
      continue;
    }
    const double r = q[i] / p[i];
    if (p[i] < 0.0) {
      t0 = std::max(t0, r);
    } else {
      t1 = std::min(t1, r);
    }
  }
  if (t0 > t1) return std::nullopt;
  Segment2D s{p0 + t0 * dir, p0 + t1 * dir};
  if (s.p1.x() < s.p0.x() || (s.p1.x() == s.p0.x() && s.p1.y() < s.p0.y())) std::swap(s.p0, s.p1);
  return s;
}

/// Textbook bilinear blend of the four neighbours of a point strictly inside
/// the map.
inline Eigen::VectorXd bilinear_oracle(const FeatureMap& F, double x, double y) {
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const double dx = x - x0;
  const double dy = y - y0;
  return (1 - dx) * (1 - dy) * F.pixel(y0, x0) + dx * (1 - dy) * F.pixel(y0, x0 + 1) +
         (1 - dx) * dy * F.pixel(y0 + 1, x0) + dx * dy * F.pixel(y0 + 1, x0 + 1);
}

/// Rectified stereo pair with identity-like intrinsics and an x baseline.
inline CameraPair rectified_pair(double focal, double baseline, int w = 32, int h = 24) {
  Mat3 K;
  K << focal, 0, 0.5 * (w - 1), 0, focal, 0.5 * (h - 1), 0, 0, 1;
  Mat34 P1;
  P1 << 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0;
  Mat34 P2 = P1;
  P2(0, 3) = -baseline;
  return {{K * P1, w, h}, {K * P2, w, h}};
}

}  // namespace epitr::test

#endif  // EPITR_TESTS_SUPPORT_HPP
