#ifndef EPITR_PIPELINE_HPP
#define EPITR_PIPELINE_HPP

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "epitr/common.hpp"
#include "epitr/fusion.hpp"
#include "epitr/geometry.hpp"
#include "epitr/metrics.hpp"
#include "epitr/parallel.hpp"
#include "epitr/sampler.hpp"
#include "epitr/synth.hpp"
#include "epitr/triangulation.hpp"

namespace epitr {

/// Everything needed to build and evaluate one synthetic scenario.
struct Scenario {
  int cameras = 10;
  double angle_deg = 24.0;
  double radius_mm = 2000.0;
  int joints = 21;
  int channels = 32;
  double sigma_px = kDefaultHeatmapSigma;  // in feature-map pixels
  int K = kDefaultSampleCount;
  double noise_px = 0.0;                   // in image pixels
  std::uint64_t seed = 0;
  FusionVariant variant = FusionVariant::IdentityGaussian;
  WeightMode weight_mode = WeightMode::Softmax;
  double temperature = 1.0;

  int image_width = 256;
  int image_height = 256;
  double focal_px = 300.0;
  int map_width = 128;
  int map_height = 128;
  double extent_mm = 1000.0;
  double source_angle_deg = 24.0;
  double ransac_threshold_px = 5.0;
  int ransac_iterations = 100;
  double head_size_px = 20.0;
};

struct PipelineOptions {
  int K = kDefaultSampleCount;
  double noise_px = 0.0;
  std::uint64_t seed = 0;
  double sigma_px = kDefaultHeatmapSigma;
  int map_width = 128;
  int map_height = 128;
  double source_angle_deg = 24.0;
  double ransac_threshold_px = 5.0;
  int ransac_iterations = 100;
  double head_size_px = 20.0;
  int profile_view = 0;
  bool keep_fused = false;
  int threads = 1;
};

struct ProfileSample {
  double t = 0.0;
  Vec2 p = Vec2::Zero();  // source feature-map pixels
  double weight = 0.0;
  double dot = 0.0;
};

/// Attention weights along the epipolar line of one joint's reference pixel.
struct SimilarityProfile {
  int joint = 0;
  int ref_view = 0;
  int src_view = 0;
  Vec2 query = Vec2::Zero();                  // reference feature-map pixel
  std::optional<Vec2> truth;                  // true correspondence, source map pixels
  bool skipped = true;
  std::vector<ProfileSample> samples;
};

struct JointReport {
  int joint = 0;
  bool valid = false;
  int observations = 0;
  int inliers = 0;
  Vec3 X = Vec3::Zero();
  double error_mm = std::numeric_limits<double>::quiet_NaN();
  double analytic_error_mm = std::numeric_limits<double>::quiet_NaN();
};

struct Report {
  double extent_mm = 0.0;
  double mpjpe_mm = std::numeric_limits<double>::quiet_NaN();
  double analytic_mpjpe_mm = std::numeric_limits<double>::quiet_NaN();
  double jdr_pct = std::numeric_limits<double>::quiet_NaN();
  double matching_accuracy = std::numeric_limits<double>::quiet_NaN();
  int matched = 0;
  int match_total = 0;
  int valid_joints = 0;
  std::vector<int> source_view;
  std::vector<JointReport> joints;
  std::vector<SimilarityProfile> profiles;
  std::vector<FeatureMap> fused;  // per view, only with keep_fused
};

/// Index of the camera whose optical axis is closest to `target_deg` away
/// from camera `view`. Gaps within 1e-9 degrees are ties and go to the lower
/// index, so symmetric rigs do not pick a side by rounding.
inline int select_source_view(const Rig& rig, int view, double target_deg) {
  int best = -1;
  double best_gap = std::numeric_limits<double>::infinity();
  for (int u = 0; u < static_cast<int>(rig.size()); ++u) {
    if (u == view) continue;
    const double gap = std::abs(rig.viewing_angle(view, u) - target_deg);
    if (gap < best_gap - 1e-9) {
      best_gap = gap;
      best = u;
    }
  }
  if (best < 0) throw Error(ErrorKind::InvalidArgument, "rig has no second camera");
  return best;
}

/// Maps feature-map pixel coordinates back to image pixels (inverse of the
/// pixel-center-aligned down-sampling).
inline Vec2 map_to_image(const Vec2& p, const CameraView& image_cam, int map_width, int map_height) {
  const double sx = static_cast<double>(image_cam.width) / map_width;
  const double sy = static_cast<double>(image_cam.height) / map_height;
  return {sx * p.x() + 0.5 * (sx - 1.0), sy * p.y() + 0.5 * (sy - 1.0)};
}

/// Heatmap of one joint: correlation of every map pixel with its descriptor.
inline Heatmap descriptor_heatmap(const FeatureMap& F, const Eigen::VectorXd& descriptor) {
  Heatmap h(F.height(), F.width());
  for (int y = 0; y < F.height(); ++y) {
    for (int x = 0; x < F.width(); ++x) h(y, x) = F.pixel(y, x).dot(descriptor);
  }
  return h;
}

/// Attention profile for `joint` queried at its nearest reference-map pixel.
inline SimilarityProfile similarity_profile(const FeatureMap& F_ref, const FeatureMap& F_src,
                                            const CameraView& ref, const CameraView& src, const Scene& scene,
                                            const FusionParams& params, int joint, int K) {
  if (joint < 0 || joint >= scene.joint_count()) {
    throw Error(ErrorKind::IndexOutOfRange, "joint index " + std::to_string(joint) + " out of range");
  }
  const CameraView ref_map = camera_for_map(ref, F_ref.width(), F_ref.height());
  const CameraView src_map = camera_for_map(src, F_src.width(), F_src.height());
  const Vec3& X = scene.joints[static_cast<std::size_t>(joint)];
  if (!in_front(ref_map, X) || !inside_image(ref_map, project(ref_map, X))) {
    throw Error(ErrorKind::IndexOutOfRange, "joint " + std::to_string(joint) + " is not visible in the reference view");
  }
  SimilarityProfile prof;
  prof.joint = joint;
  const Vec2 pr = project(ref_map, X);
  prof.query = Vec2(std::round(pr.x()), std::round(pr.y()));
  if (in_front(src_map, X)) {
    const Vec2 ps = project(src_map, X);
    if (inside_image(src_map, ps)) prof.truth = ps;
  }
  const auto set = epipolar_samples(F_src, EpipolarTransfer(ref_map, src_map), prof.query, K);
  if (!set) return prof;
  prof.skipped = false;
  const int qy = static_cast<int>(prof.query.y());
  const int qx = static_cast<int>(prof.query.x());
  const QueryFusion q = fuse_query(F_ref.pixel(qy, qx), set->features, params);
  for (int i = 0; i < set->count(); ++i) {
    ProfileSample s;
    s.t = K == 1 ? 0.5 : static_cast<double>(i) / (K - 1);
    s.p = set->locations[static_cast<std::size_t>(i)];
    s.weight = q.weights(i);
    s.dot = q.dots(i);
    prof.samples.push_back(s);
  }
  return prof;
}

/// True when the argmax sample of the profile lies within one sample step of
/// the true correspondence's foot point on the sampled segment.
inline bool profile_matches(const SimilarityProfile& prof) {
  if (prof.skipped || !prof.truth || prof.samples.empty()) return false;
  std::size_t best = 0;
  for (std::size_t i = 1; i < prof.samples.size(); ++i) {
    if (prof.samples[i].weight > prof.samples[best].weight) best = i;
  }
  const Vec2 a = prof.samples.front().p;
  const Vec2 b = prof.samples.back().p;
  const Vec2 d = b - a;
  const double len2 = d.squaredNorm();
  const double t = len2 > 0.0 ? std::clamp((*prof.truth - a).dot(d) / len2, 0.0, 1.0) : 0.0;
  const Vec2 foot = a + t * d;
  const double step = prof.samples.size() > 1 ? std::sqrt(len2) / static_cast<double>(prof.samples.size() - 1)
                                              : std::sqrt(len2);
  return (prof.samples[best].p - foot).norm() <= step + 1e-9;
}

/// Renders every view, fuses it with its source view, reads out per-joint
/// peaks from descriptor-correlation heatmaps and triangulates them.
inline Report run_pipeline(const Rig& rig, const Scene& scene, const FusionParams& params,
                           const PipelineOptions& opt) {
  const int n = static_cast<int>(rig.size());
  const int J = scene.joint_count();
  if (n < 2) throw Error(ErrorKind::InvalidArgument, "pipeline needs at least two views");
  if (params.channels() != scene.channels()) {
    throw Error(ErrorKind::ChannelMismatch, "fusion parameters do not match the descriptor channels");
  }
  if (opt.noise_px < 0.0) throw Error(ErrorKind::InvalidArgument, "noise must be non-negative");
  if (opt.profile_view < 0 || opt.profile_view >= n) {
    throw Error(ErrorKind::IndexOutOfRange, "profile view out of range");
  }

  Report report;
  report.source_view.resize(static_cast<std::size_t>(n));
  for (int v = 0; v < n; ++v) report.source_view[v] = select_source_view(rig, v, opt.source_angle_deg);

  std::vector<FeatureMap> maps(static_cast<std::size_t>(n));
  parallel_for(maps.size(), opt.threads, [&](std::size_t v) {
    maps[v] = render_descriptor_map(rig.cameras[v], scene, opt.sigma_px, opt.map_width, opt.map_height);
  });

  // Per view and joint: readout peak in image pixels, and visibility.
  std::vector<std::vector<Peak>> peaks(static_cast<std::size_t>(n));
  std::vector<std::vector<SimilarityProfile>> profiles(static_cast<std::size_t>(n));
  for (int v = 0; v < n; ++v) {
    const int s = report.source_view[v];
    const ForwardResult fwd = transformer_forward(maps[v], maps[s], rig.cameras[v], rig.cameras[s], params, opt.K,
                                                  {.record_weights = false, .keep_state = false,
                                                   .threads = opt.threads});
    if (opt.keep_fused) report.fused.push_back(fwd.fused);
    auto& view_peaks = peaks[static_cast<std::size_t>(v)];
    view_peaks.resize(static_cast<std::size_t>(J));
    parallel_for(static_cast<std::size_t>(J), opt.threads, [&](std::size_t j) {
      const Eigen::VectorXd d = scene.descriptors.row(static_cast<Eigen::Index>(j)).transpose();
      Peak pk = argmax_peak(descriptor_heatmap(fwd.fused, d));
      pk.p = map_to_image(pk.p, rig.cameras[v], opt.map_width, opt.map_height);
      view_peaks[j] = pk;
    });
    auto& view_profiles = profiles[static_cast<std::size_t>(v)];
    view_profiles.resize(static_cast<std::size_t>(J));
    parallel_for(static_cast<std::size_t>(J), opt.threads, [&](std::size_t j) {
      const Vec3& X = scene.joints[j];
      const CameraView ref_map = camera_for_map(rig.cameras[v], opt.map_width, opt.map_height);
      if (!in_front(ref_map, X) || !inside_image(ref_map, project(ref_map, X))) return;
      view_profiles[j] = similarity_profile(maps[v], maps[s], rig.cameras[v], rig.cameras[s], scene, params,
                                            static_cast<int>(j), opt.K);
      view_profiles[j].ref_view = v;
      view_profiles[j].src_view = s;
    });
  }

  // Visibility in image space, and matching accuracy over mutually visible joints.
  auto visible = [&](int v, int j) {
    const Vec3& X = scene.joints[static_cast<std::size_t>(j)];
    const CameraView& cam = rig.cameras[static_cast<std::size_t>(v)];
    return in_front(cam, X) && inside_image(cam, project(cam, X));
  };
  for (int v = 0; v < n; ++v) {
    for (int j = 0; j < J; ++j) {
      if (!visible(v, j) || !visible(report.source_view[v], j)) continue;
      const auto& prof = profiles[static_cast<std::size_t>(v)][static_cast<std::size_t>(j)];
      ++report.match_total;
      if (profile_matches(prof)) ++report.matched;
    }
  }
  if (report.match_total > 0) {
    report.matching_accuracy = static_cast<double>(report.matched) / report.match_total;
  }
  for (int j = 0; j < J; ++j) {
    const auto& prof = profiles[static_cast<std::size_t>(opt.profile_view)][static_cast<std::size_t>(j)];
    if (!prof.samples.empty()) report.profiles.push_back(prof);
  }

  // Detection noise, drawn in fixed view/joint order.
  std::mt19937_64 noise_rng(mix_seed(opt.seed, 1));
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<Vec2> pred2d;
  std::vector<Vec2> gt2d;
  for (int v = 0; v < n; ++v) {
    for (int j = 0; j < J; ++j) {
      Peak& pk = peaks[static_cast<std::size_t>(v)][static_cast<std::size_t>(j)];
      if (opt.noise_px > 0.0) {
        const double ex = gauss(noise_rng);
        const double ey = gauss(noise_rng);
        pk.p += opt.noise_px * Vec2(ex, ey);
      }
      if (visible(v, j)) {
        pred2d.push_back(pk.p);
        gt2d.push_back(project(rig.cameras[static_cast<std::size_t>(v)], scene.joints[static_cast<std::size_t>(j)]));
      }
    }
  }
  if (!pred2d.empty()) {
    report.jdr_pct = jdr(pred2d, gt2d, std::vector<double>(pred2d.size(), opt.head_size_px));
  }

  report.joints.resize(static_cast<std::size_t>(J));
  parallel_for(static_cast<std::size_t>(J), opt.threads, [&](std::size_t j) {
    JointReport& jr = report.joints[j];
    jr.joint = static_cast<int>(j);
    std::vector<Observation> detected;
    std::vector<Observation> analytic;
    for (int v = 0; v < n; ++v) {
      if (!visible(v, static_cast<int>(j))) continue;
      const CameraView* cam = &rig.cameras[static_cast<std::size_t>(v)];
      const Peak& pk = peaks[static_cast<std::size_t>(v)][j];
      detected.push_back({cam, pk.p, pk.confidence});
      analytic.push_back({cam, project(*cam, scene.joints[j]), 1.0});
    }
    jr.observations = static_cast<int>(detected.size());
    if (detected.size() < 2) return;
    const RansacOptions ro{opt.ransac_threshold_px, opt.ransac_iterations, mix_seed(opt.seed, 100 + j)};
    try {
      const TriangulationResult tr = ransac_triangulate(detected, ro);
      jr.X = tr.X;
      jr.inliers = tr.inlier_count();
      jr.error_mm = (tr.X - scene.joints[j]).norm();
      jr.valid = true;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::NoConsensus && e.kind() != ErrorKind::Degenerate) throw;
    }
    try {
      jr.analytic_error_mm = (ransac_triangulate(analytic, ro).X - scene.joints[j]).norm();
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::NoConsensus && e.kind() != ErrorKind::Degenerate) throw;
    }
  });

  double sum = 0.0;
  double analytic_sum = 0.0;
  int analytic_n = 0;
  for (const auto& jr : report.joints) {
    if (jr.valid) {
      sum += jr.error_mm;
      ++report.valid_joints;
    }
    if (std::isfinite(jr.analytic_error_mm)) {
      analytic_sum += jr.analytic_error_mm;
      ++analytic_n;
    }
  }
  if (report.valid_joints > 0) report.mpjpe_mm = sum / report.valid_joints;
  if (analytic_n > 0) report.analytic_mpjpe_mm = analytic_sum / analytic_n;
  return report;
}

inline PipelineOptions pipeline_options(const Scenario& s, int threads = 1) {
  PipelineOptions o;
  o.K = s.K;
  o.noise_px = s.noise_px;
  o.seed = s.seed;
  o.sigma_px = s.sigma_px;
  o.map_width = s.map_width;
  o.map_height = s.map_height;
  o.source_angle_deg = s.source_angle_deg;
  o.ransac_threshold_px = s.ransac_threshold_px;
  o.ransac_iterations = s.ransac_iterations;
  o.head_size_px = s.head_size_px;
  o.threads = threads;
  return o;
}

inline Rig scenario_rig(const Scenario& s) {
  return make_rig(s.cameras, s.angle_deg, s.radius_mm, s.image_width, s.image_height, s.focal_px,
                  mix_seed(s.seed, 10));
}

inline Scene scenario_scene(const Scenario& s) { return make_scene(s.joints, s.extent_mm, s.channels, mix_seed(s.seed, 11)); }

inline FusionParams scenario_params(const Scenario& s) {
  FusionParams p = init_params(s.variant, s.weight_mode, s.channels, mix_seed(s.seed, 12));
  p.temperature = s.temperature;
  return p;
}

inline Report run_scenario(const Scenario& s, int threads = 1) {
  Report r = run_pipeline(scenario_rig(s), scenario_scene(s), scenario_params(s), pipeline_options(s, threads));
  r.extent_mm = s.extent_mm;
  return r;
}

}  // namespace epitr

#endif  // EPITR_PIPELINE_HPP
