#ifndef EPITR_GRADCHECK_HPP
#define EPITR_GRADCHECK_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>

#include <Eigen/Core>

#include "epitr/common.hpp"
#include "epitr/fusion.hpp"
#include "epitr/synth.hpp"

namespace epitr {

struct GradCheckDims {
  int height = 8;
  int width = 8;
  int channels = 16;
  int K = 8;
};

inline constexpr double kGradCheckMaxWork = 1e6;
inline constexpr double kGradCheckTolerance = 1e-5;

/// A random but fully specified fusion problem: two feature maps, a camera
/// pair whose epipolar lines cross the source map, parameters and an
/// upstream gradient G. The scalar loss is sum(G * fused).
struct GradCheckProblem {
  FeatureMap ref;
  FeatureMap src;
  CameraView ref_cam;
  CameraView src_cam;
  FusionParams params;
  FeatureMap upstream;
  int K = 8;
};

inline GradCheckProblem make_gradcheck_problem(const GradCheckDims& dims, FusionVariant variant, WeightMode mode,
                                               std::uint64_t seed) {
  const double work = static_cast<double>(dims.height) * dims.width * dims.channels * dims.K;
  if (work > kGradCheckMaxWork) {
    throw Error(ErrorKind::DimsTooLarge, "H*W*C*K = " + std::to_string(static_cast<long long>(work)) +
                                             " exceeds the finite-difference budget of 1e6");
  }
  if (dims.K < 1) throw Error(ErrorKind::InvalidArgument, "K must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_real_distribution<double> angle(15.0, 60.0);

  GradCheckProblem p;
  p.K = dims.K;
  // Images at twice the map resolution so the map rescaling path is exercised.
  const int iw = 2 * dims.width;
  const int ih = 2 * dims.height;
  const double focal = 1.2 * iw;
  const double sep = angle(rng) * std::numbers::pi / 180.0;
  const double az = unit(rng) * std::numbers::pi;
  const Vec3 c1(2000.0 * std::cos(az), 2000.0 * std::sin(az), 150.0 * unit(rng));
  const Vec3 c2(2000.0 * std::cos(az + sep), 2000.0 * std::sin(az + sep), 150.0 * unit(rng));
  p.ref_cam = look_at_camera(c1, Vec3(30.0 * unit(rng), 30.0 * unit(rng), 0.0), focal, iw, ih);
  p.src_cam = look_at_camera(c2, Vec3(30.0 * unit(rng), 30.0 * unit(rng), 0.0), focal, iw, ih);

  auto random_map = [&] {
    FeatureMap F(dims.height, dims.width, dims.channels);
    for (double& v : F.data()) v = unit(rng);
    return F;
  };
  p.ref = random_map();
  p.src = random_map();
  p.upstream = random_map();

  const int c = dims.channels;
  auto random_matrix = [&](int rows, int cols, double scale) {
    Eigen::MatrixXd m(rows, cols);
    for (int i = 0; i < rows; ++i) {
      for (int j = 0; j < cols; ++j) m(i, j) = scale * unit(rng);
    }
    return m;
  };
  const double scale = 1.0 / std::sqrt(static_cast<double>(c));
  p.params.variant = variant;
  p.params.mode = mode;
  if (variant == FusionVariant::IdentityGaussian) {
    p.params.output_transform = random_matrix(c, c, scale);
  } else {
    if (c % 2 != 0) throw Error(ErrorKind::OddChannels, "bottleneck fusion needs even C");
    p.params.output_transform = random_matrix(c / 2, c, scale);
    p.params.query_embedding = random_matrix(c, c / 2, 2.0 * scale);
    p.params.key_embedding = random_matrix(c, c / 2, 2.0 * scale);
    p.params.value_embedding = random_matrix(c, c / 2, scale);
  }
  return p;
}

inline FeatureMap gradcheck_forward(const GradCheckProblem& p) {
  return transformer_forward(p.ref, p.src, p.ref_cam, p.src_cam, p.params, p.K).fused;
}

/// The scalar loss sum(G * fused).
inline double gradcheck_loss(const GradCheckProblem& p) {
  const FeatureMap fused = gradcheck_forward(p);
  double loss = 0.0;
  const auto a = fused.data();
  const auto g = p.upstream.data();
  for (std::size_t i = 0; i < a.size(); ++i) loss += a[i] * g[i];
  return loss;
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_entry;
  std::size_t entries = 0;
  std::size_t sampled_pixels = 0;
  bool pass = false;
};

/// Relative error with an absolute floor so that entries which are zero
/// analytically do not divide by zero.
inline double relative_error(double analytic, double numeric, double floor = 1e-8) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares every analytic gradient entry against central differences.
inline GradCheckResult run_gradcheck(GradCheckProblem p, double h = 1e-5, double tolerance = kGradCheckTolerance) {
  const ForwardResult fwd = transformer_forward(p.ref, p.src, p.ref_cam, p.src_cam, p.params, p.K,
                                                {.record_weights = false, .keep_state = true, .threads = 1});
  const FusionGradients grads = transformer_backward(fwd, p.upstream);

  GradCheckResult result;
  for (auto s : fwd.state->sampled) result.sampled_pixels += s;
  // The loss difference is summed element-wise over (up - down) so pixels the
  // perturbation does not reach cancel exactly, and divided by the step that
  // was actually stored rather than the nominal 2h.
  const auto g = p.upstream.data();
  auto check = [&](double& value, double analytic, const std::string& name) {
    const double saved = value;
    value = saved + h;
    const double v_up = value;
    const FeatureMap up = gradcheck_forward(p);
    value = saved - h;
    const double v_down = value;
    const FeatureMap down = gradcheck_forward(p);
    value = saved;
    const auto a = up.data();
    const auto b = down.data();
    double diff = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) diff += g[i] * (a[i] - b[i]);
    const double err = relative_error(analytic, diff / (v_up - v_down));
    ++result.entries;
    if (err > result.max_rel_error || result.entries == 1) {
      result.max_rel_error = err;
      result.worst_entry = name;
    }
  };
  auto check_map = [&](FeatureMap& F, const FeatureMap& G, const char* name) {
    auto values = F.data();
    const auto g = G.data();
    for (std::size_t i = 0; i < values.size(); ++i) check(values[i], g[i], std::string(name) + "[" + std::to_string(i) + "]");
  };
  auto check_matrix = [&](Eigen::MatrixXd& M, const Eigen::MatrixXd& G, const char* name) {
    for (Eigen::Index i = 0; i < M.rows(); ++i) {
      for (Eigen::Index j = 0; j < M.cols(); ++j) {
        check(M(i, j), G(i, j), std::string(name) + "(" + std::to_string(i) + "," + std::to_string(j) + ")");
      }
    }
  };
  check_map(p.ref, grads.d_ref, "d_ref");
  check_map(p.src, grads.d_src, "d_src");
  check_matrix(p.params.output_transform, grads.d_output_transform, "d_output_transform");
  if (p.params.variant == FusionVariant::BottleneckEmbeddedGaussian) {
    check_matrix(p.params.query_embedding, grads.d_query_embedding, "d_query_embedding");
    check_matrix(p.params.key_embedding, grads.d_key_embedding, "d_key_embedding");
    check_matrix(p.params.value_embedding, grads.d_value_embedding, "d_value_embedding");
  }
  result.pass = result.max_rel_error < tolerance;
  return result;
}

}  // namespace epitr

#endif  // EPITR_GRADCHECK_HPP
