#ifndef EPITR_COMMON_HPP
#define EPITR_COMMON_HPP

#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Core>

namespace epitr {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat34 = Eigen::Matrix<double, 3, 4>;
using Mat43 = Eigen::Matrix<double, 4, 3>;

enum class ErrorKind {
  RankDeficient,
  CoincidentCenters,
  DegenerateLine,
  SingularAffine,
  InvalidArgument,
  BehindCamera,
  ShapeMismatch,
  ChannelMismatch,
  OddChannels,
  StateMissing,
  Degenerate,
  NoConsensus,
  MaskMismatch,
  LengthMismatch,
  Empty,
  InvalidAngle,
  DescriptorSaturation,
  IndexOutOfRange,
  DimsTooLarge,
  Format,
  Io,
};

inline constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::RankDeficient: return "RankDeficient";
    case ErrorKind::CoincidentCenters: return "CoincidentCenters";
    case ErrorKind::DegenerateLine: return "DegenerateLine";
    case ErrorKind::SingularAffine: return "SingularAffine";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::BehindCamera: return "BehindCamera";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::ChannelMismatch: return "ChannelMismatch";
    case ErrorKind::OddChannels: return "OddChannels";
    case ErrorKind::StateMissing: return "StateMissing";
    case ErrorKind::Degenerate: return "Degenerate";
    case ErrorKind::NoConsensus: return "NoConsensus";
    case ErrorKind::MaskMismatch: return "MaskMismatch";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::Empty: return "Empty";
    case ErrorKind::InvalidAngle: return "InvalidAngle";
    case ErrorKind::DescriptorSaturation: return "DescriptorSaturation";
    case ErrorKind::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorKind::DimsTooLarge: return "DimsTooLarge";
    case ErrorKind::Format: return "Format";
    case ErrorKind::Io: return "Io";
  }
  return "Unknown";
}

/// Exception carrying a machine-checkable kind. All library failures are
/// reported through this type.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Degeneracy thresholds shared by every module.
struct Tolerances {
  // Relative singular-value floor below which a projection matrix is rank deficient.
  double rank = 1e-12;
  // Relative distance below which two camera centers are treated as one.
  double coincident_centers = 1e-9;
  // Floor on |(a, b)| of a unit-norm homogeneous line.
  double degenerate_line = 1e-12;
  double singular_affine = 1e-12;
  // |w| below which a point projects to infinity.
  double at_infinity = 1e-12;
  // Relative gap between the two smallest DLT singular values.
  double dlt_ambiguity = 1e-9;
  // Slack when intersecting lines with the image rectangle.
  double clip_slack = 1e-10;
};

inline constexpr Tolerances kTol{};

}  // namespace epitr

#endif  // EPITR_COMMON_HPP
