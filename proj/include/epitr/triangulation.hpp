#ifndef EPITR_TRIANGULATION_HPP
#define EPITR_TRIANGULATION_HPP

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "epitr/common.hpp"
#include "epitr/geometry.hpp"

namespace epitr {

struct Observation {
  const CameraView* cam = nullptr;
  Vec2 p = Vec2::Zero();
  double confidence = 1.0;
};

struct TriangulationResult {
  Vec3 X = Vec3::Zero();
  std::vector<bool> inliers;
  double rms_reproj = 0.0;

  int inlier_count() const {
    int n = 0;
    for (bool b : inliers) n += b ? 1 : 0;
    return n;
  }
};

struct RansacOptions {
  double threshold_px = 5.0;
  int iterations = 100;
  std::uint64_t seed = 0;
};

inline double reprojection_error(const CameraView& cam, const Vec3& X, const Vec2& p) {
  return (project(cam, X) - p).norm();
}

namespace detail {

/// World similarity that centers the camera centers on the origin with unit
/// RMS distance, returned as its inverse (normalized -> world). The
/// homogeneous DLT is not invariant to the world frame, and in raw millimetres
/// its unit-norm constraint pulls noisy solutions away from the origin.
inline Eigen::Matrix4d dlt_frame(std::span<const Observation> obs) {
  Eigen::Matrix4d T = Eigen::Matrix4d::Identity();
  std::vector<Vec3> centers;
  for (const auto& o : obs) {
    const Vec4 C = camera_center(o.cam->M);
    if (std::abs(C.w()) < kTol.at_infinity) return T;
    centers.push_back(C.hnormalized());
  }
  Vec3 mean = Vec3::Zero();
  for (const auto& c : centers) mean += c;
  mean /= static_cast<double>(centers.size());
  double ss = 0.0;
  for (const auto& c : centers) ss += (c - mean).squaredNorm();
  const double scale = std::sqrt(ss / static_cast<double>(centers.size()));
  if (scale > 0.0) T.topLeftCorner<3, 3>() *= scale;
  T.topRightCorner<3, 1>() = mean;
  return T;
}

}  // namespace detail

/// Linear triangulation: each view contributes x m3 - m1 and y m3 - m2, each
/// row scaled to unit norm, and X~ is the smallest right singular vector.
/// Solved in the frame of detail::dlt_frame and mapped back.
inline Vec3 dlt_triangulate(std::span<const Observation> obs) {
  if (obs.size() < 2) throw Error(ErrorKind::InvalidArgument, "DLT needs at least two observations");
  for (const auto& o : obs) {
    if (o.cam == nullptr) throw Error(ErrorKind::InvalidArgument, "observation without camera");
    if (!o.p.allFinite()) throw Error(ErrorKind::InvalidArgument, "non-finite observation");
  }
  const Eigen::Matrix4d frame = detail::dlt_frame(obs);
  Eigen::MatrixXd A(2 * obs.size(), 4);
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const Mat34 M = obs[i].cam->M * frame;
    Eigen::RowVector4d r1 = obs[i].p.x() * M.row(2) - M.row(0);
    Eigen::RowVector4d r2 = obs[i].p.y() * M.row(2) - M.row(1);
    const double n1 = r1.norm();
    const double n2 = r2.norm();
    if (n1 > 0.0) r1 /= n1;
    if (n2 > 0.0) r2 /= n2;
    A.row(static_cast<Eigen::Index>(2 * i)) = r1;
    A.row(static_cast<Eigen::Index>(2 * i + 1)) = r2;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const auto& s = svd.singularValues();
  if (s.size() < 4 || s(2) - s(3) <= kTol.dlt_ambiguity * s(0)) {
    throw Error(ErrorKind::Degenerate, "triangulation is ambiguous (null space dimension > 1)");
  }
  const Vec4 X = frame * Vec4(svd.matrixV().col(3));
  if (std::abs(X.w()) < kTol.at_infinity * X.norm()) {
    throw Error(ErrorKind::Degenerate, "triangulated point is at infinity");
  }
  return X.hnormalized();
}

inline Vec3 dlt_triangulate(const std::vector<Observation>& obs) {
  return dlt_triangulate(std::span<const Observation>(obs));
}

namespace detail {

/// Uniform integer in [0, n) by rejection, independent of the standard
/// library's distribution implementation.
inline std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t n) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t v;
  do {
    v = rng();
  } while (v >= limit);
  return v % n;
}

inline double safe_reprojection_error(const Observation& o, const Vec3& X) {
  const Vec3 h = o.cam->M * X.homogeneous();
  if (std::abs(h.z()) < kTol.at_infinity) return std::numeric_limits<double>::infinity();
  return (h.hnormalized() - o.p).norm();
}

}  // namespace detail

/// Draws two distinct indices in [0, n). RANSAC calls this once per
/// iteration on an mt19937_64 seeded with RansacOptions::seed.
inline std::pair<std::size_t, std::size_t> ransac_pair(std::mt19937_64& rng, std::size_t n) {
  const std::size_t i = detail::bounded(rng, n);
  std::size_t j = detail::bounded(rng, n - 1);
  if (j >= i) ++j;
  return {i, j};
}

/// Robust triangulation: 2-view DLT hypotheses scored by the number of
/// observations reprojecting within threshold_px (ties go to lower inlier
/// RMS); the winner is re-estimated by DLT over its inliers.
inline TriangulationResult ransac_triangulate(std::span<const Observation> obs, const RansacOptions& opt = {}) {
  if (obs.size() < 2) throw Error(ErrorKind::InvalidArgument, "RANSAC needs at least two observations");
  if (!(opt.threshold_px > 0.0)) throw Error(ErrorKind::InvalidArgument, "threshold must be positive");
  if (opt.iterations < 1) throw Error(ErrorKind::InvalidArgument, "iterations must be positive");

  const std::size_t n = obs.size();
  std::mt19937_64 rng(opt.seed);
  std::vector<bool> best_mask;
  int best_count = 0;
  double best_rms = std::numeric_limits<double>::infinity();

  std::vector<bool> mask(n);
  for (int it = 0; it < opt.iterations; ++it) {
    const auto [i, j] = ransac_pair(rng, n);
    const Observation pair[2] = {obs[i], obs[j]};
    Vec3 X;
    try {
      X = dlt_triangulate(std::span<const Observation>(pair, 2));
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::Degenerate) continue;
      throw;
    }
    int count = 0;
    double sq = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double err = detail::safe_reprojection_error(obs[k], X);
      mask[k] = err < opt.threshold_px;
      if (mask[k]) {
        ++count;
        sq += err * err;
      }
    }
    const double rms = count > 0 ? std::sqrt(sq / count) : std::numeric_limits<double>::infinity();
    if (count > best_count || (count == best_count && count > 0 && rms < best_rms)) {
      best_count = count;
      best_rms = rms;
      best_mask = mask;
    }
  }
  if (best_count < 2) throw Error(ErrorKind::NoConsensus, "no hypothesis reached two inliers");

  std::vector<Observation> inliers;
  for (std::size_t k = 0; k < n; ++k) {
    if (best_mask[k]) inliers.push_back(obs[k]);
  }
  TriangulationResult result;
  result.X = dlt_triangulate(inliers);
  result.inliers = best_mask;
  double sq = 0.0;
  for (const auto& o : inliers) {
    const double err = detail::safe_reprojection_error(o, result.X);
    sq += err * err;
  }
  result.rms_reproj = std::sqrt(sq / static_cast<double>(inliers.size()));
  return result;
}

inline TriangulationResult ransac_triangulate(const std::vector<Observation>& obs, const RansacOptions& opt = {}) {
  return ransac_triangulate(std::span<const Observation>(obs), opt);
}

}  // namespace epitr

#endif  // EPITR_TRIANGULATION_HPP
