#ifndef EPITR_GEOMETRY_HPP
#define EPITR_GEOMETRY_HPP

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "epitr/common.hpp"

namespace epitr {

/// A projective camera: 3x4 matrix mapping homogeneous world points (mm) to
/// homogeneous pixels, plus the image extent. Integer pixel coordinates
/// address pixel centers, so the valid domain is [0, width-1] x [0, height-1].
struct CameraView {
  Mat34 M = Mat34::Zero();
  int width = 1;
  int height = 1;
};

/// Homogeneous line (a, b, c) with a^2 + b^2 = 1 and the first nonzero of
/// (a, b) positive. |l . (x, y, 1)| is the point-line distance in pixels.
struct EpipolarLine {
  Vec3 l = Vec3(0.0, 1.0, 0.0);

  double a() const { return l.x(); }
  double b() const { return l.y(); }
  double c() const { return l.z(); }
  double distance(const Vec2& p) const { return l.dot(p.homogeneous()); }
};

namespace detail {

inline Eigen::JacobiSVD<Mat34> checked_svd(const Mat34& M) {
  Eigen::JacobiSVD<Mat34> svd(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const auto& s = svd.singularValues();
  if (!(s(0) > 0.0) || s(2) < kTol.rank * s(0)) {
    throw Error(ErrorKind::RankDeficient, "projection matrix has rank < 3");
  }
  return svd;
}

inline Vec3 normalize_line(const Vec3& raw) {
  const double ab = std::hypot(raw.x(), raw.y());
  const double n = raw.norm();
  if (!(n > 0.0) || ab < kTol.degenerate_line * n) {
    throw Error(ErrorKind::DegenerateLine, "epipolar line is at infinity");
  }
  Vec3 l = raw / ab;
  // Round-off can leave a ~1e-17 in a for axis-aligned lines; treat that as zero
  // when picking the sign.
  const double lead = std::abs(l.x()) > kTol.degenerate_line ? l.x() : l.y();
  if (lead < 0.0) l = -l;
  return l;
}

}  // namespace detail

inline void validate_camera(const CameraView& cam) {
  if (cam.width < 1 || cam.height < 1) {
    throw Error(ErrorKind::InvalidArgument, "camera image extent must be positive");
  }
  if (!cam.M.allFinite()) {
    throw Error(ErrorKind::InvalidArgument, "camera matrix has non-finite entries");
  }
  detail::checked_svd(cam.M);
}

/// Unit-norm right null vector of M, with its last nonzero coordinate positive.
inline Vec4 camera_center(const Mat34& M) {
  const auto svd = detail::checked_svd(M);
  Vec4 C = svd.matrixV().col(3).normalized();
  for (int i = 3; i >= 0; --i) {
    if (std::abs(C(i)) > kTol.rank) {
      if (C(i) < 0.0) C = -C;
      break;
    }
  }
  return C;
}

inline Vec4 camera_center(const CameraView& cam) { return camera_center(cam.M); }

/// Moore-Penrose inverse of a full-row-rank 3x4 matrix.
inline Mat43 pseudo_inverse(const Mat34& M) {
  const auto svd = detail::checked_svd(M);
  const Vec3 inv_s = svd.singularValues().cwiseInverse();
  return svd.matrixV().leftCols<3>() * inv_s.asDiagonal() * svd.matrixU().transpose();
}

inline Mat3 skew(const Vec3& v) {
  Mat3 S;
  S << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return S;
}

inline bool centers_coincide(const Vec4& c1, const Vec4& c2) {
  const bool finite1 = std::abs(c1.w()) > kTol.rank;
  const bool finite2 = std::abs(c2.w()) > kTol.rank;
  if (finite1 && finite2) {
    const Vec3 p1 = c1.hnormalized();
    const Vec3 p2 = c2.hnormalized();
    const double scale = std::max({1.0, p1.norm(), p2.norm()});
    return (p1 - p2).norm() < kTol.coincident_centers * scale;
  }
  // At least one center at infinity: compare as projective points.
  const Vec4 u1 = c1.normalized();
  const Vec4 u2 = c2.normalized();
  return (u1 - u1.dot(u2) * u2).norm() < kTol.coincident_centers;
}

/// Precomputed transfer from a reference view to a source view. Holds the
/// source-view epipole e' = M' C and the 3x3 map M' M^+, so that the epipolar
/// line of a reference pixel p is e' x (M' M^+ p).
class EpipolarTransfer {
 public:
  EpipolarTransfer(const CameraView& ref, const CameraView& src) {
    const Vec4 c_ref = camera_center(ref.M);
    const Vec4 c_src = camera_center(src.M);
    if (centers_coincide(c_ref, c_src)) {
      throw Error(ErrorKind::CoincidentCenters, "reference and source camera centers coincide");
    }
    epipole_ = src.M * c_ref;
    transfer_ = src.M * pseudo_inverse(ref.M);
  }

  const Vec3& epipole() const { return epipole_; }
  const Mat3& transfer() const { return transfer_; }

  /// Unnormalized line for homogeneous pixel p; throws DegenerateLine when p
  /// back-projects onto the baseline.
  Vec3 raw_line(const Vec3& p) const {
    const Vec3 x = transfer_ * p;
    const Vec3 l = epipole_.cross(x);
    if (l.norm() <= kTol.degenerate_line * epipole_.norm() * x.norm()) {
      throw Error(ErrorKind::DegenerateLine, "query pixel maps onto the epipole");
    }
    return l;
  }

  EpipolarLine line(const Vec3& p) const { return {detail::normalize_line(raw_line(p))}; }
  EpipolarLine line(const Vec2& p) const { return line(Vec3(p.x(), p.y(), 1.0)); }

 private:
  Vec3 epipole_;
  Mat3 transfer_;
};

/// Epipolar line in the source view of reference pixel p = (x, y, 1).
inline EpipolarLine epipolar_line(const CameraView& ref, const CameraView& src, const Vec3& p) {
  return EpipolarTransfer(ref, src).line(p);
}

inline EpipolarLine epipolar_line(const CameraView& ref, const CameraView& src, const Vec2& p) {
  return epipolar_line(ref, src, Vec3(p.x(), p.y(), 1.0));
}

/// F = [M' C]_x M' M^+, so that the epipolar line of p is F p.
inline Mat3 fundamental_matrix(const CameraView& ref, const CameraView& src) {
  const EpipolarTransfer t(ref, src);
  return skew(t.epipole()) * t.transfer();
}

/// Applies the image-space affine map x -> A x + b to the camera.
inline CameraView apply_affine_to_camera(const CameraView& cam, const Mat2& A, const Vec2& b,
                                         int new_width, int new_height) {
  if (std::abs(A.determinant()) < kTol.singular_affine) {
    throw Error(ErrorKind::SingularAffine, "affine transform is not invertible");
  }
  if (new_width < 1 || new_height < 1) {
    throw Error(ErrorKind::InvalidArgument, "image extent must be positive");
  }
  Mat3 T = Mat3::Identity();
  T.topLeftCorner<2, 2>() = A;
  T.topRightCorner<2, 1>() = b;
  return {T * cam.M, new_width, new_height};
}

/// Left multiplier taking pixel coordinates of an image to those of the same
/// image down-sampled by (sx, sy), keeping pixel centers aligned.
inline Mat3 rescale_matrix(double sx, double sy) {
  Mat3 S;
  S << 1.0 / sx, 0.0, (1.0 - sx) / (2.0 * sx),
       0.0, 1.0 / sy, (1.0 - sy) / (2.0 * sy),
       0.0, 0.0, 1.0;
  return S;
}

inline CameraView rescale_camera(const CameraView& cam, double sx, double sy) {
  if (!(sx > 0.0) || !(sy > 0.0) || !std::isfinite(sx) || !std::isfinite(sy)) {
    throw Error(ErrorKind::InvalidArgument, "scale factors must be positive");
  }
  // The 1e-9 slack keeps w / (w / m) from flooring to m - 1.
  const int w = std::max(1, static_cast<int>(std::floor(cam.width / sx + 1e-9)));
  const int h = std::max(1, static_cast<int>(std::floor(cam.height / sy + 1e-9)));
  return {rescale_matrix(sx, sy) * cam.M, w, h};
}

/// Camera for a feature map of the given size derived from this view's image.
inline CameraView camera_for_map(const CameraView& cam, int map_width, int map_height) {
  if (map_width == cam.width && map_height == cam.height) return cam;
  const double sx = static_cast<double>(cam.width) / map_width;
  const double sy = static_cast<double>(cam.height) / map_height;
  CameraView out = rescale_camera(cam, sx, sy);
  out.width = map_width;
  out.height = map_height;
  return out;
}

/// Homogeneous third coordinate of M X~, signed so that positive means in
/// front of the camera regardless of the overall sign of M.
inline double depth_sign(const CameraView& cam, const Vec3& X) {
  const double w = cam.M.row(2).dot(X.homogeneous());
  const double det = cam.M.leftCols<3>().determinant();
  return det >= 0.0 ? w : -w;
}

inline bool in_front(const CameraView& cam, const Vec3& X) { return depth_sign(cam, X) > 0.0; }

inline Vec2 project(const CameraView& cam, const Vec3& X) {
  const Vec3 h = cam.M * X.homogeneous();
  if (std::abs(h.z()) < kTol.at_infinity) {
    throw Error(ErrorKind::BehindCamera, "point projects to infinity");
  }
  return h.hnormalized();
}

inline bool inside_image(const Vec2& p, int width, int height) {
  return p.x() >= 0.0 && p.y() >= 0.0 && p.x() <= width - 1 && p.y() <= height - 1;
}

inline bool inside_image(const CameraView& cam, const Vec2& p) {
  return inside_image(p, cam.width, cam.height);
}

}  // namespace epitr

#endif  // EPITR_GEOMETRY_HPP
