// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "epitr/commands.hpp"
#include "epitr/epitr.hpp"
#include "epitr/gradcheck.hpp"
#include "support.hpp"

using namespace epitr;
using epitr::test::uniform;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// Independent epipolar line through the finite-camera split M = [A | b]: the
// center is (-A^-1 b, 1) and the query's ray meets infinity at (A^-1 p, 0).
Vec3 oracle_line(const CameraView& ref, const CameraView& src, const Vec2& p) {
  const Eigen::PartialPivLU<Mat3> A(ref.M.leftCols<3>());
  const Vec4 C = (-A.solve(Vec3(ref.M.col(3)))).homogeneous();
  Vec4 D = Vec4::Zero();
  D.head<3>() = A.solve(p.homogeneous());
  const Vec3 l = (src.M * C).cross(src.M * D);
  return l / l.head<2>().norm();
}

// 1 and 2 share the same random cases.
struct EpipolarCase {
  test::CameraPair pair;
  std::vector<Vec2> queries;
};

std::vector<EpipolarCase> epipolar_cases() {
  std::mt19937_64 rng(20240601);
  std::vector<EpipolarCase> cases;
  for (int i = 0; i < 1000; ++i) {
    EpipolarCase c{test::random_pair(rng, 64, 48), {}};
    for (int q = 0; q < 20; ++q) c.queries.emplace_back(uniform(rng, 0, 63), uniform(rng, 0, 47));
    cases.push_back(std::move(c));
  }
  return cases;
}

Outcome criterion_epipolar_constraint(const std::vector<EpipolarCase>& cases) {
  const auto t0 = Clock::now();
  const FeatureMap F(48, 64, 1);
  double worst = 0.0;
  long samples = 0;
  int empty = 0;
  for (const auto& c : cases) {
    const EpipolarTransfer transfer(c.pair.ref, c.pair.src);
    for (const auto& p : c.queries) {
      const auto set = epipolar_samples(F, transfer, p, 64);
      if (!set) {
        ++empty;
        continue;
      }
      const Vec3 l = oracle_line(c.pair.ref, c.pair.src, p);
      for (const auto& q : set->locations) {
        worst = std::max(worst, std::abs(l.dot(q.homogeneous())));
        ++samples;
      }
    }
  }
  const double secs = seconds_since(t0);
  const bool pass = worst < 1e-6 && secs < 5.0 && samples > 64L * 10000;
  return {pass, "max |l.p'| = " + fmt("%.2e", worst) + " px over " + std::to_string(samples) + " samples (" +
                    std::to_string(empty) + " queries missed the source image), " + fmt("%.2f", secs) + " s"};
}

Outcome criterion_fundamental(const std::vector<EpipolarCase>& cases) {
  double worst_dir = 0.0;
  double worst_rank = 0.0;
  for (const auto& c : cases) {
    const Mat3 Fm = fundamental_matrix(c.pair.ref, c.pair.src);
    const Eigen::JacobiSVD<Mat3> svd(Fm);
    worst_rank = std::max(worst_rank, svd.singularValues()(2) / svd.singularValues()(0));
    for (const auto& p : c.queries) {
      const Vec3 fp = (Fm * p.homogeneous()).normalized();
      const Vec3 l = epipolar_line(c.pair.ref, c.pair.src, p).l.normalized();
      worst_dir = std::max(worst_dir, fp.cross(l).norm());
    }
  }
  const bool pass = worst_dir < 1e-9 && worst_rank < 1e-9;
  return {pass, "max |Fp x l| = " + fmt("%.2e", worst_dir) + ", max sigma3/sigma1 = " + fmt("%.2e", worst_rank)};
}

Outcome criterion_bilinear() {
  std::mt19937_64 rng(7);
  const FeatureMap F = test::random_map(rng, 31, 37, 8);
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double x = uniform(rng, 0.0, 36.0);
    const double y = uniform(rng, 0.0, 30.0);
    worst = std::max(worst, (bilinear_sample(F, Vec2(x, y)) - test::bilinear_oracle(F, x, y)).cwiseAbs().maxCoeff());
  }
  return {worst < 1e-12, "max deviation " + fmt("%.2e", worst) + " over 10000 samples"};
}

Outcome criterion_shape() {
  std::mt19937_64 rng(11);
  const FeatureMap ref = test::random_map(rng, 8, 8, 16);
  const FeatureMap src = test::random_map(rng, 8, 8, 16);
  const CameraView ref_cam = look_at_camera(Vec3(2000, 0, 0), Vec3::Zero(), 20.0, 16, 16);
  const CameraView facing = look_at_camera(Vec3(1732, 1000, 0), Vec3::Zero(), 20.0, 16, 16);
  const CameraView away = look_at_camera(Vec3(0, 2000, 0), Vec3(0, 2000, 4000), 20.0, 16, 16);
  int ok = 0;
  std::string failures;
  for (auto variant : {FusionVariant::IdentityGaussian, FusionVariant::BottleneckEmbeddedGaussian}) {
    for (auto mode : {WeightMode::Softmax, WeightMode::Max}) {
      for (bool skip : {false, true}) {
        const FusionParams p = init_params(variant, mode, 16, 3);
        const ForwardResult r = transformer_forward(ref, src, ref_cam, skip ? away : facing, p, 8,
                                                    {.record_weights = true, .keep_state = false, .threads = 1});
        const auto sampled = std::count_if(r.attention.begin(), r.attention.end(),
                                           [](const PixelAttention& a) { return a.sampled; });
        const bool coverage_ok = skip ? sampled == 0 : sampled > 0;
        const bool good = r.fused.same_shape(ref) && r.fused == ref && coverage_ok;
        if (good) {
          ++ok;
        } else {
          failures += " " + to_string(variant) + "/" + to_string(mode) + (skip ? "/skip" : "/noskip");
        }
      }
    }
  }
  return {ok == 8, std::to_string(ok) + "/8 configurations shape-preserving and bit-exact" + failures};
}

Outcome criterion_gradcheck() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string where;
  int runs = 0;
  for (auto variant : {FusionVariant::IdentityGaussian, FusionVariant::BottleneckEmbeddedGaussian}) {
    for (auto mode : {WeightMode::Softmax, WeightMode::Max}) {
      for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const GradCheckResult r = run_gradcheck(make_gradcheck_problem({8, 8, 16, 8}, variant, mode, seed), 1e-5);
        ++runs;
        if (r.max_rel_error > worst || runs == 1) {
          worst = r.max_rel_error;
          where = to_string(variant) + "/" + to_string(mode) + " seed " + std::to_string(seed) + " " + r.worst_entry;
        }
      }
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-5 && secs < 60.0, "max relative error " + fmt("%.2e", worst) + " (" + where + ") over " +
                                           std::to_string(runs) + " runs, " + fmt("%.1f", secs) + " s"};
}

Outcome criterion_end_to_end() {
  Scenario s;  // 10 cameras at 24 degrees, 21 joints, noiseless
  const Report r = run_scenario(s);
  const double limit = 0.005 * s.extent_mm;
  const bool pass = r.matching_accuracy >= 0.99 && r.analytic_mpjpe_mm < 1e-6 && r.mpjpe_mm < limit;
  return {pass, "matching " + std::to_string(r.matched) + "/" + std::to_string(r.match_total) + " = " +
                    fmt("%.4f", r.matching_accuracy) + ", analytic error " + fmt("%.2e", r.analytic_mpjpe_mm) +
                    " mm, readout MPJPE " + fmt("%.3f", r.mpjpe_mm) + " mm (limit " + fmt("%.1f", limit) + ")"};
}

// Each trial: a random joint seen by all 10 cameras with 1 px detection
// noise; two random views get an extra 50 px offset. The noiseless error is
// the DLT error from all ten views before the offsets are applied.
// The reference error is DLT over the eight views that carry only the 1 px
// detection noise. DLT over all ten views before corruption is reported too;
// its ratio is informational because dropping two noisy views legitimately
// moves the estimate.
Outcome criterion_ransac() {
  const Rig rig = make_rig(10, 24.0, 2000.0, 256, 256, 200.0, 1);
  int excluded = 0;
  int within = 0;
  double worst_ratio = 0.0;
  double worst_ratio_all = 0.0;
  constexpr int kTrials = 100;
  for (int trial = 0; trial < kTrials; ++trial) {
    std::mt19937_64 rng(mix_seed(77, static_cast<std::uint64_t>(trial)));
    std::normal_distribution<double> gauss(0.0, 1.0);
    Vec3 X;
    do {
      X = Vec3(uniform(rng, -500, 500), uniform(rng, -500, 500), uniform(rng, -500, 500));
    } while (!std::all_of(rig.cameras.begin(), rig.cameras.end(),
                          [&](const CameraView& c) { return inside_image(c, project(c, X)); }));
    std::vector<Observation> obs;
    for (const auto& c : rig.cameras) obs.push_back({&c, project(c, X) + Vec2(gauss(rng), gauss(rng)), 1.0});
    const double all_err = (dlt_triangulate(obs) - X).norm();
    const std::size_t a = detail::bounded(rng, 10);
    std::size_t b = detail::bounded(rng, 9);
    if (b >= a) ++b;
    std::vector<Observation> clean;
    for (std::size_t k = 0; k < obs.size(); ++k) {
      if (k != a && k != b) clean.push_back(obs[k]);
    }
    const double clean_err = (dlt_triangulate(clean) - X).norm();
    for (std::size_t k : {a, b}) {
      const double th = uniform(rng, 0.0, 2.0 * std::numbers::pi);
      obs[k].p += 50.0 * Vec2(std::cos(th), std::sin(th));
    }
    const TriangulationResult r = ransac_triangulate(obs, {5.0, 100, static_cast<std::uint64_t>(trial)});
    if (!r.inliers[a] && !r.inliers[b]) ++excluded;
    const double err = (r.X - X).norm();
    worst_ratio = std::max(worst_ratio, err / clean_err);
    worst_ratio_all = std::max(worst_ratio_all, err / all_err);
    if (err <= 3.0 * clean_err) ++within;
  }
  const bool pass = excluded >= 95 && within == kTrials;
  return {pass, "corrupted views excluded in " + std::to_string(excluded) + "/100 trials; error within 3x noiseless in " +
                    std::to_string(within) + "/100 (worst ratio " + fmt("%.2f", worst_ratio) +
                    "; vs ten-view DLT before corruption " + fmt("%.2f", worst_ratio_all) + ")"};
}

Outcome criterion_transforms() {
  std::mt19937_64 rng(8);
  double worst_affine = 0.0;
  double worst_scale = 0.0;
  double worst_compose = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const auto pair = test::random_pair(rng, 256, 192);
    const CameraView& cam = pair.ref;
    Mat2 A;
    do {
      A = test::random_matrix(rng, 2, 2, 2.0);
    } while (std::abs(A.determinant()) < 0.1);
    const Vec2 b = test::random_matrix(rng, 2, 1, 100.0);
    const double sx = uniform(rng, 1.0, 8.0);
    const double sy = uniform(rng, 1.0, 8.0);
    const double tx = uniform(rng, 1.0, 4.0);
    const double ty = uniform(rng, 1.0, 4.0);
    const CameraView affine = apply_affine_to_camera(cam, A, b, 256, 192);
    const CameraView scaled = rescale_camera(cam, sx, sy);
    const CameraView twice = rescale_camera(scaled, tx, ty);
    const CameraView once = rescale_camera(cam, sx * tx, sy * ty);
    for (int k = 0; k < 5; ++k) {
      const Vec3 X(uniform(rng, -400, 400), uniform(rng, -400, 400), uniform(rng, -400, 400));
      const Vec2 p = project(cam, X);
      worst_affine = std::max(worst_affine, (project(affine, X) - (A * p + b)).norm());
      // Pixel-center aligned down-sampling: x -> (x + 1/2) / s - 1/2.
      const Vec2 expect((p.x() + 0.5) / sx - 0.5, (p.y() + 0.5) / sy - 0.5);
      worst_scale = std::max(worst_scale, (project(scaled, X) - expect).norm());
      worst_compose = std::max(worst_compose, (project(twice, X) - project(once, X)).norm());
    }
  }
  const bool pass = worst_affine < 1e-9 && worst_scale < 1e-9 && worst_compose < 1e-10;
  return {pass, "affine " + fmt("%.2e", worst_affine) + " px, rescale " + fmt("%.2e", worst_scale) +
                    " px, composition " + fmt("%.2e", worst_compose) + " px"};
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Reduced resolution keeps 150 pipeline runs within a few seconds.
Outcome criterion_view_trend() {
  const auto t0 = Clock::now();
  std::vector<double> medians;
  std::string detail;
  for (int views : {2, 4, 8}) {
    std::vector<double> errs;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      Scenario s;
      s.cameras = views;
      s.noise_px = 1.0;
      s.seed = seed;
      s.joints = 10;
      s.channels = 16;
      s.K = 32;
      s.image_width = s.image_height = 128;
      s.focal_px = 100.0;
      s.map_width = s.map_height = 64;
      const Report r = run_scenario(s);
      if (std::isfinite(r.mpjpe_mm)) errs.push_back(r.mpjpe_mm);
    }
    medians.push_back(median(errs));
    detail += std::to_string(views) + " views: " + fmt("%.2f", medians.back()) + " mm (" +
              std::to_string(errs.size()) + " seeds); ";
  }
  const bool pass = medians[0] > medians[1] && medians[1] > medians[2];
  return {pass, detail + fmt("%.1f", seconds_since(t0)) + " s"};
}

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Outcome criterion_determinism() {
  namespace fs = std::filesystem;
  const fs::path root = fs::temp_directory_path() / "epitr_acceptance_determinism";
  fs::remove_all(root);
  const std::string config = std::string(EPITR_SOURCE_DIR) + "/configs/default.json";
  std::vector<std::string> reports;
  int failures = 0;
  int run = 0;
  for (const char* threads : {"1", "1", "4", "4"}) {
    const fs::path out = root / ("run" + std::to_string(run++));
    const std::string out_s = out.string();
    const char* argv[] = {"epitr", "run", "--config", config.c_str(), "--seed", "42", "--threads", threads, "--out",
                          out_s.c_str()};
    std::ostringstream sink;
    if (cli::run_cli(10, argv, sink, sink) != 0) ++failures;
    reports.push_back(read_bytes(out / "report.json"));
  }
  fs::remove_all(root);
  const bool identical = std::all_of(reports.begin(), reports.end(),
                                     [&](const std::string& r) { return r == reports.front(); });
  const bool pass = failures == 0 && identical && !reports.front().empty();
  return {pass, std::to_string(reports.size()) + " runs (threads 1,1,4,4), " +
                    (identical ? "byte-identical" : "reports differ") + ", " +
                    std::to_string(reports.front().size()) + " bytes"};
}

}  // namespace

int main() {
  const auto cases = epipolar_cases();
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"epipolar constraint", [&] { return criterion_epipolar_constraint(cases); }},
      {"fundamental matrix oracle", [&] { return criterion_fundamental(cases); }},
      {"bilinear oracle", criterion_bilinear},
      {"shape invariant", criterion_shape},
      {"gradient check", criterion_gradcheck},
      {"end-to-end synthetic", criterion_end_to_end},
      {"RANSAC robustness", criterion_ransac},
      {"camera transforms", criterion_transforms},
      {"view-count trend", criterion_view_trend},
      {"determinism", criterion_determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << (i + 1) << "] " << criteria[i].first << ": " << o.detail
              << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
