#ifndef EPITR_METRICS_HPP
#define EPITR_METRICS_HPP

#include <cmath>
#include <vector>

#include <Eigen/Core>

#include "epitr/common.hpp"

namespace epitr {

inline constexpr double kDefaultHeatmapSigma = 2.0;

/// Per-joint heatmap indexed (row y, column x).
using Heatmap = Eigen::MatrixXd;

/// Unnormalized Gaussian with peak value 1 at p.
inline Heatmap render_gaussian_heatmap(const Vec2& p, double sigma, int height, int width) {
  if (!(sigma > 0.0)) throw Error(ErrorKind::InvalidArgument, "sigma must be positive");
  if (height < 1 || width < 1) throw Error(ErrorKind::InvalidArgument, "heatmap must be non-empty");
  Heatmap h(height, width);
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double dx = x - p.x();
      const double dy = y - p.y();
      h(y, x) = std::exp(-(dx * dx + dy * dy) * inv);
    }
  }
  return h;
}

inline double mse_loss(const Heatmap& pred, const Heatmap& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
    throw Error(ErrorKind::ShapeMismatch, "heatmaps differ in shape");
  }
  if (pred.size() == 0) throw Error(ErrorKind::Empty, "empty heatmap");
  return (pred - target).squaredNorm() / static_cast<double>(pred.size());
}

struct Peak {
  Vec2 p = Vec2::Zero();
  double confidence = 0.0;
};

/// Integer argmax (first in row-major order) refined by a quarter pixel
/// toward the larger neighbour on each axis; border pixels are not shifted
/// along the axis that lacks a neighbour.
inline Peak argmax_peak(const Heatmap& h) {
  if (h.size() == 0) throw Error(ErrorKind::Empty, "empty heatmap");
  Eigen::Index by = 0;
  Eigen::Index bx = 0;
  for (Eigen::Index y = 0; y < h.rows(); ++y) {
    for (Eigen::Index x = 0; x < h.cols(); ++x) {
      if (h(y, x) > h(by, bx)) {
        by = y;
        bx = x;
      }
    }
  }
  Peak peak{Vec2(static_cast<double>(bx), static_cast<double>(by)), h(by, bx)};
  auto shift = [](double lo, double hi) { return hi > lo ? 0.25 : (hi < lo ? -0.25 : 0.0); };
  if (bx > 0 && bx + 1 < h.cols()) peak.p.x() += shift(h(by, bx - 1), h(by, bx + 1));
  if (by > 0 && by + 1 < h.rows()) peak.p.y() += shift(h(by - 1, bx), h(by + 1, bx));
  return peak;
}

struct Pose3D {
  std::vector<Vec3> joints;
  std::vector<bool> valid;

  static Pose3D all_valid(std::vector<Vec3> joints) {
    Pose3D p;
    p.valid.assign(joints.size(), true);
    p.joints = std::move(joints);
    return p;
  }
};

struct Pose2D {
  std::vector<Vec2> joints;
  std::vector<double> confidence;
};

/// Per-joint Euclidean errors (NaN for masked joints).
inline std::vector<double> per_joint_errors(const Pose3D& pred, const Pose3D& gt) {
  if (pred.joints.size() != gt.joints.size() || pred.valid != gt.valid ||
      pred.valid.size() != pred.joints.size()) {
    throw Error(ErrorKind::MaskMismatch, "poses differ in joint count or validity mask");
  }
  std::vector<double> out(pred.joints.size(), std::nan(""));
  for (std::size_t j = 0; j < pred.joints.size(); ++j) {
    if (pred.valid[j]) out[j] = (pred.joints[j] - gt.joints[j]).norm();
  }
  return out;
}

/// Mean per-joint position error over valid joints.
inline double mpjpe(const Pose3D& pred, const Pose3D& gt) {
  const auto errors = per_joint_errors(pred, gt);
  double sum = 0.0;
  int n = 0;
  for (std::size_t j = 0; j < errors.size(); ++j) {
    if (!pred.valid[j]) continue;
    sum += errors[j];
    ++n;
  }
  if (n == 0) throw Error(ErrorKind::Empty, "no valid joints");
  return sum / n;
}

/// Percentage of joints whose 2D error is strictly below half the head size.
inline double jdr(const std::vector<Vec2>& pred, const std::vector<Vec2>& gt, const std::vector<double>& head_sizes) {
  if (pred.size() != gt.size() || pred.size() != head_sizes.size()) {
    throw Error(ErrorKind::LengthMismatch, "prediction, ground truth and head sizes differ in length");
  }
  if (pred.empty()) throw Error(ErrorKind::Empty, "no joints");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if ((pred[i] - gt[i]).norm() < 0.5 * head_sizes[i]) ++hits;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(pred.size());
}

/// Per joint, keeps the prediction with the highest confidence across views
/// (ties go to the lower view index).
inline Pose2D select_best_view(const std::vector<Pose2D>& per_view) {
  if (per_view.empty()) throw Error(ErrorKind::Empty, "no candidate views");
  const std::size_t joints = per_view.front().joints.size();
  for (const auto& v : per_view) {
    if (v.joints.size() != joints || v.confidence.size() != joints) {
      throw Error(ErrorKind::LengthMismatch, "candidate views differ in joint count");
    }
  }
  Pose2D out = per_view.front();
  for (std::size_t v = 1; v < per_view.size(); ++v) {
    for (std::size_t j = 0; j < joints; ++j) {
      if (per_view[v].confidence[j] > out.confidence[j]) {
        out.joints[j] = per_view[v].joints[j];
        out.confidence[j] = per_view[v].confidence[j];
      }
    }
  }
  return out;
}

}  // namespace epitr

#endif  // EPITR_METRICS_HPP
