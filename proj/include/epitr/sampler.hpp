#ifndef EPITR_SAMPLER_HPP
#define EPITR_SAMPLER_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "epitr/common.hpp"
#include "epitr/geometry.hpp"

namespace epitr {

inline constexpr int kDefaultSampleCount = 64;

/// Dense H x W x C feature array stored row-major in (y, x, c) order.
class FeatureMap {
 public:
  FeatureMap() = default;

  FeatureMap(int height, int width, int channels)
      : height_(height), width_(width), channels_(channels) {
    if (height < 2 || width < 2 || channels < 1) {
      throw Error(ErrorKind::InvalidArgument, "feature map needs H, W >= 2 and C >= 1");
    }
    data_.assign(static_cast<std::size_t>(height) * width * channels, 0.0);
  }

  FeatureMap(int height, int width, int channels, std::vector<double> data)
      : FeatureMap(height, width, channels) {
    if (data.size() != data_.size()) {
      throw Error(ErrorKind::ShapeMismatch, "feature data size does not match H*W*C");
    }
    for (double v : data) {
      if (!std::isfinite(v)) throw Error(ErrorKind::InvalidArgument, "feature map has non-finite entries");
    }
    data_ = std::move(data);
  }

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(height_) * width_; }
  std::size_t size() const { return data_.size(); }

  std::size_t offset(int y, int x) const {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_;
  }

  double& at(int y, int x, int c) { return data_[offset(y, x) + c]; }
  double at(int y, int x, int c) const { return data_[offset(y, x) + c]; }

  Eigen::Map<Eigen::VectorXd> pixel(int y, int x) { return {data_.data() + offset(y, x), channels_}; }
  Eigen::Map<const Eigen::VectorXd> pixel(int y, int x) const {
    return {data_.data() + offset(y, x), channels_};
  }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  bool same_shape(const FeatureMap& o) const {
    return height_ == o.height_ && width_ == o.width_ && channels_ == o.channels_;
  }

  friend bool operator==(const FeatureMap&, const FeatureMap&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<double> data_;
};

struct Segment2D {
  Vec2 p0 = Vec2::Zero();
  Vec2 p1 = Vec2::Zero();

  double length() const { return (p1 - p0).norm(); }
};

struct EpipolarSampleSet {
  EpipolarLine line;
  Segment2D segment;
  std::vector<Vec2> locations;
  Eigen::MatrixXd features;  // K x C

  int count() const { return static_cast<int>(locations.size()); }
};

namespace detail {

inline bool lex_less(const Vec2& a, const Vec2& b) {
  return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
}

}  // namespace detail

/// Intersects a normalized line with [0, W-1] x [0, H-1]. Returns the visible
/// segment with endpoints ordered by x then y, or nullopt if the line misses.
inline std::optional<Segment2D> clip_line_to_image(const EpipolarLine& line, int width, int height) {
  const double xmax = width - 1;
  const double ymax = height - 1;
  const double slack = kTol.clip_slack * std::max({1.0, xmax, ymax});
  const double a = line.a();
  const double b = line.b();
  const double c = line.c();

  std::array<Vec2, 4> hits;
  int n = 0;
  auto accept = [&](double x, double y) {
    if (x < -slack || x > xmax + slack || y < -slack || y > ymax + slack) return;
    hits[n++] = Vec2(std::clamp(x, 0.0, xmax), std::clamp(y, 0.0, ymax));
  };
  // Vertical edges x = 0 and x = W-1.
  if (b != 0.0) {
    accept(0.0, -c / b);
    accept(xmax, -(a * xmax + c) / b);
  }
  // Horizontal edges y = 0 and y = H-1.
  if (a != 0.0) {
    accept(-c / a, 0.0);
    accept(-(b * ymax + c) / a, ymax);
  }
  if (n == 0) return std::nullopt;

  // Extremes along the line direction (-b, a).
  const Vec2 dir(-b, a);
  int lo = 0;
  int hi = 0;
  for (int i = 1; i < n; ++i) {
    if (hits[i].dot(dir) < hits[lo].dot(dir)) lo = i;
    if (hits[i].dot(dir) > hits[hi].dot(dir)) hi = i;
  }
  Segment2D seg{hits[lo], hits[hi]};
  if (detail::lex_less(seg.p1, seg.p0)) std::swap(seg.p0, seg.p1);
  return seg;
}

/// K points at t_i = i / (K - 1) along the segment, endpoints included; the
/// midpoint when K = 1.
inline std::vector<Vec2> sample_locations(const Segment2D& seg, int count) {
  if (count < 1) throw Error(ErrorKind::InvalidArgument, "sample count must be >= 1");
  std::vector<Vec2> out(static_cast<std::size_t>(count));
  if (count == 1) {
    out[0] = 0.5 * (seg.p0 + seg.p1);
    return out;
  }
  const Vec2 delta = seg.p1 - seg.p0;
  for (int i = 0; i < count; ++i) {
    const double t = static_cast<double>(i) / (count - 1);
    out[static_cast<std::size_t>(i)] = seg.p0 + t * delta;
  }
  out.back() = seg.p1;
  return out;
}

/// Footprint of a bilinear lookup: four pixel indices and their weights,
/// ordered (x0,y0), (x1,y0), (x0,y1), (x1,y1).
struct BilinearFootprint {
  std::array<int, 4> x{};
  std::array<int, 4> y{};
  std::array<double, 4> w{};
};

inline BilinearFootprint bilinear_footprint(int width, int height, const Vec2& pt) {
  const double x = std::clamp(pt.x(), 0.0, static_cast<double>(width - 1));
  const double y = std::clamp(pt.y(), 0.0, static_cast<double>(height - 1));
  const int x0 = std::min(static_cast<int>(std::floor(x)), width - 2);
  const int y0 = std::min(static_cast<int>(std::floor(y)), height - 2);
  const double dx = x - x0;
  const double dy = y - y0;
  BilinearFootprint f;
  f.x = {x0, x0 + 1, x0, x0 + 1};
  f.y = {y0, y0, y0 + 1, y0 + 1};
  f.w = {(1.0 - dx) * (1.0 - dy), dx * (1.0 - dy), (1.0 - dx) * dy, dx * dy};
  return f;
}

inline void bilinear_sample_into(const FeatureMap& F, const Vec2& pt, Eigen::Ref<Eigen::VectorXd> out) {
  const BilinearFootprint f = bilinear_footprint(F.width(), F.height(), pt);
  out.setZero();
  for (int k = 0; k < 4; ++k) {
    if (f.w[k] != 0.0) out += f.w[k] * F.pixel(f.y[k], f.x[k]);
  }
}

/// Bilinear blend of the four pixel centers around pt. Coordinates outside
/// the valid domain are clamped to the border.
inline Eigen::VectorXd bilinear_sample(const FeatureMap& F, const Vec2& pt) {
  Eigen::VectorXd out(F.channels());
  bilinear_sample_into(F, pt, out);
  return out;
}

/// Samples along the epipolar line of p, using a precomputed transfer whose
/// source camera is already expressed at feature-map resolution.
inline std::optional<EpipolarSampleSet> epipolar_samples(const FeatureMap& F_src,
                                                         const EpipolarTransfer& transfer,
                                                         const Vec2& p, int count) {
  if (count < 1) throw Error(ErrorKind::InvalidArgument, "sample count must be >= 1");
  EpipolarSampleSet set;
  try {
    set.line = transfer.line(p);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::DegenerateLine) return std::nullopt;
    throw;
  }
  const auto seg = clip_line_to_image(set.line, F_src.width(), F_src.height());
  if (!seg) return std::nullopt;
  set.segment = *seg;
  set.locations = sample_locations(*seg, count);
  set.features.resize(count, F_src.channels());
  Eigen::VectorXd row(F_src.channels());
  for (int i = 0; i < count; ++i) {
    bilinear_sample_into(F_src, set.locations[static_cast<std::size_t>(i)], row);
    set.features.row(i) = row.transpose();
  }
  return set;
}

/// Epipolar samples of reference pixel p in F_src. Both cameras are first
/// rescaled to their feature-map resolutions when those differ from the image
/// size; p is given in reference feature-map pixels (ref_map_* give that size,
/// defaulting to the reference image size).
inline std::optional<EpipolarSampleSet> epipolar_samples(const FeatureMap& F_src, const CameraView& ref,
                                                         const CameraView& src, const Vec2& p, int count,
                                                         int ref_map_width = 0, int ref_map_height = 0) {
  const CameraView ref_map = camera_for_map(ref, ref_map_width > 0 ? ref_map_width : ref.width,
                                            ref_map_height > 0 ? ref_map_height : ref.height);
  const CameraView src_map = camera_for_map(src, F_src.width(), F_src.height());
  return epipolar_samples(F_src, EpipolarTransfer(ref_map, src_map), p, count);
}

}  // namespace epitr

#endif  // EPITR_SAMPLER_HPP
