#ifndef EPITR_COMMANDS_HPP
#define EPITR_COMMANDS_HPP

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "epitr/common.hpp"
#include "epitr/fusion.hpp"
#include "epitr/gradcheck.hpp"
#include "epitr/io.hpp"
#include "epitr/metrics.hpp"
#include "epitr/pipeline.hpp"
#include "epitr/synth.hpp"
#include "epitr/triangulation.hpp"

namespace epitr::cli {

enum ExitCode : int { kOk = 0, kUsage = 2, kNumeric = 3 };

/// Usage/config problems exit 2; numeric and domain failures exit 3.
inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Format:
    case ErrorKind::Io:
    case ErrorKind::IndexOutOfRange:
    case ErrorKind::DimsTooLarge:
    case ErrorKind::LengthMismatch:
    case ErrorKind::MaskMismatch:
      return kUsage;
    default:
      return kNumeric;
  }
}

/// Flags shared by subcommands that start from a scenario config.
struct ScenarioFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> k;
  std::optional<std::string> variant;
  std::optional<std::string> mode;
};

inline Scenario load_scenario(const ScenarioFlags& f) {
  Scenario s;
  if (!f.config.empty()) s = io::scenario_from_json(io::read_json_file(f.config));
  io::json overrides = io::scenario_to_json(s);
  if (f.seed) overrides["seed"] = *f.seed;
  if (f.k) overrides["K"] = *f.k;
  if (f.variant) overrides["variant"] = *f.variant;
  if (f.mode) overrides["weight_mode"] = *f.mode;
  return io::scenario_from_json(overrides);
}

inline void add_scenario_flags(CLI::App* app, ScenarioFlags& f, bool config_required) {
  auto* opt = app->add_option("--config", f.config, "Scenario config JSON");
  if (config_required) opt->required();
  app->add_option("--seed", f.seed, "Override the scenario seed");
  app->add_option("--k", f.k, "Samples per epipolar line (default 64)");
  app->add_option("--variant", f.variant, "Fusion variant: identity | bottleneck")
      ->check(CLI::IsMember({"identity", "bottleneck"}));
  app->add_option("--mode", f.mode, "Attention weights: softmax | max")->check(CLI::IsMember({"softmax", "max"}));
}

// ---------------------------------------------------------------------------

struct RunArgs {
  ScenarioFlags scenario;
  std::string out_dir;
  int threads = 1;
  bool save_maps = false;
};

/// Runs the synthetic pipeline and writes <out>/report.json (and fused maps
/// as <out>/fused_<view>.fmap with --save-maps).
inline int cmd_run(const RunArgs& args, std::ostream& out, std::ostream& err) {
  const Scenario s = load_scenario(args.scenario);
  if (args.out_dir.empty()) throw Error(ErrorKind::Format, "--out is required");
  PipelineOptions opt = pipeline_options(s, args.threads);
  opt.keep_fused = args.save_maps;
  Report report = run_pipeline(scenario_rig(s), scenario_scene(s), scenario_params(s), opt);
  report.extent_mm = s.extent_mm;

  const std::filesystem::path dir(args.out_dir);
  std::filesystem::create_directories(dir);
  io::json j = io::report_to_json(report);
  j["config"] = io::scenario_to_json(s);
  io::write_file_atomic(dir / "report.json", io::dump_json(j));
  if (args.save_maps) {
    for (std::size_t v = 0; v < report.fused.size(); ++v) {
      io::save_feature_map(dir / ("fused_" + std::to_string(v) + ".fmap"), report.fused[v]);
    }
  }
  out << "mpjpe_mm " << std::setprecision(6) << report.mpjpe_mm << "\n"
      << "matching_accuracy " << report.matching_accuracy << " (" << report.matched << "/" << report.match_total
      << ")\n"
      << "jdr_pct " << report.jdr_pct << "\n";
  (void)err;
  return kOk;
}

// ---------------------------------------------------------------------------

struct ProfileArgs {
  ScenarioFlags scenario;
  int ref_view = 0;
  int src_view = 1;
  int joint = 0;
  std::string out;  // empty: stdout
};

inline std::string profile_csv(const SimilarityProfile& prof) {
  std::ostringstream ss;
  ss << "t,x,y,weight,dot\n" << std::setprecision(17);
  for (const auto& s : prof.samples) {
    ss << s.t << ',' << s.p.x() << ',' << s.p.y() << ',' << s.weight << ',' << s.dot << '\n';
  }
  return ss.str();
}

/// Similarity profile (t, x, y, weight, dot) of one joint along its epipolar
/// line in the source view.
inline int cmd_profile(const ProfileArgs& args, std::ostream& out, std::ostream& err) {
  const Scenario s = load_scenario(args.scenario);
  const Rig rig = scenario_rig(s);
  const Scene scene = scenario_scene(s);
  const int n = static_cast<int>(rig.size());
  if (args.ref_view < 0 || args.ref_view >= n || args.src_view < 0 || args.src_view >= n) {
    throw Error(ErrorKind::IndexOutOfRange, "view index out of range (rig has " + std::to_string(n) + " cameras)");
  }
  if (args.ref_view == args.src_view) throw Error(ErrorKind::IndexOutOfRange, "reference and source views must differ");
  if (args.joint < 0 || args.joint >= scene.joint_count()) {
    throw Error(ErrorKind::IndexOutOfRange, "joint index out of range (scene has " +
                                                std::to_string(scene.joint_count()) + " joints)");
  }
  const auto& ref = rig.cameras[static_cast<std::size_t>(args.ref_view)];
  const auto& src = rig.cameras[static_cast<std::size_t>(args.src_view)];
  const FeatureMap F_ref = render_descriptor_map(ref, scene, s.sigma_px, s.map_width, s.map_height);
  const FeatureMap F_src = render_descriptor_map(src, scene, s.sigma_px, s.map_width, s.map_height);
  SimilarityProfile prof = similarity_profile(F_ref, F_src, ref, src, scene, scenario_params(s), args.joint, s.K);
  if (prof.skipped) err << "warning: epipolar line of joint " << args.joint << " misses the source view; query skipped\n";
  const std::string csv = profile_csv(prof);
  if (args.out.empty()) {
    out << csv;
  } else {
    io::write_file_atomic(args.out, csv);
  }
  return kOk;
}

// ---------------------------------------------------------------------------

struct GradCheckArgs {
  GradCheckDims dims;
  std::uint64_t seed = 0;
  std::string variant = "identity";
  std::string mode = "softmax";
  double h = 1e-5;
};

inline int cmd_gradcheck(const GradCheckArgs& args, std::ostream& out, std::ostream& err) {
  const FusionVariant variant =
      args.variant == "bottleneck" ? FusionVariant::BottleneckEmbeddedGaussian : FusionVariant::IdentityGaussian;
  const WeightMode mode = args.mode == "max" ? WeightMode::Max : WeightMode::Softmax;
  GradCheckProblem problem = make_gradcheck_problem(args.dims, variant, mode, args.seed);
  if (mode == WeightMode::Max) {
    err << "warning: max weights are piecewise constant; gradients flow only through the selected sample\n";
  }
  const GradCheckResult r = run_gradcheck(std::move(problem), args.h);
  out << "entries " << r.entries << "\n"
      << "sampled_pixels " << r.sampled_pixels << "\n"
      << "max_rel_error " << std::scientific << std::setprecision(3) << r.max_rel_error << " at " << r.worst_entry
      << "\n"
      << (r.pass ? "PASS" : "FAIL") << "\n";
  return r.pass ? kOk : kNumeric;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string pred;
  std::string gt;
  std::optional<double> head_size;
  std::string out;  // empty: stdout
};

inline std::vector<io::PoseRow> read_pose_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
  try {
    return io::read_pose_csv(in);
  } catch (const Error& e) {
    throw Error(e.kind(), path + ": " + e.what());
  }
}

/// MPJPE (when both files carry z) and JDR (when a head size is given).
inline io::json evaluate_pose_files(const std::vector<io::PoseRow>& pred, const std::vector<io::PoseRow>& gt,
                                    std::optional<double> head_size) {
  if (pred.size() != gt.size()) {
    const bool pred_longer = pred.size() > gt.size();
    const auto& extra = pred_longer ? pred[gt.size()] : gt[pred.size()];
    throw Error(ErrorKind::LengthMismatch, "prediction has " + std::to_string(pred.size()) +
                                               " rows but ground truth has " + std::to_string(gt.size()) +
                                               "; first unmatched row is line " + std::to_string(extra.line) +
                                               " of the " + (pred_longer ? "prediction" : "ground truth") + " file");
  }
  if (pred.empty()) throw Error(ErrorKind::Empty, "no joints to evaluate");
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i].joint_id != gt[i].joint_id || pred[i].has_z != gt[i].has_z) {
      throw Error(ErrorKind::LengthMismatch, "rows do not align: prediction line " + std::to_string(pred[i].line) +
                                                 " vs ground truth line " + std::to_string(gt[i].line));
    }
  }
  io::json result;
  io::json per_joint = io::json::array();
  const bool three_d = pred.front().has_z;
  std::vector<double> errors3d(pred.size(), std::nan(""));
  if (three_d) {
    Pose3D p;
    Pose3D g;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const bool valid = pred[i].p.allFinite() && gt[i].p.allFinite();
      p.joints.push_back(pred[i].p);
      g.joints.push_back(gt[i].p);
      p.valid.push_back(valid);
      g.valid.push_back(valid);
    }
    result["mpjpe_mm"] = mpjpe(p, g);
    errors3d = per_joint_errors(p, g);
  } else {
    result["mpjpe_mm"] = nullptr;
  }
  if (head_size) {
    std::vector<Vec2> a;
    std::vector<Vec2> b;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      a.push_back(pred[i].p.head<2>());
      b.push_back(gt[i].p.head<2>());
    }
    result["jdr_pct"] = jdr(a, b, std::vector<double>(a.size(), *head_size));
  } else {
    result["jdr_pct"] = nullptr;
  }
  for (std::size_t i = 0; i < pred.size(); ++i) {
    per_joint.push_back({{"joint_id", pred[i].joint_id},
                         {"error_2d_px", (pred[i].p.head<2>() - gt[i].p.head<2>()).norm()},
                         {"error_mm", io::number_or_null(errors3d[i])}});
  }
  result["per_joint"] = per_joint;
  return result;
}

inline int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err) {
  if (args.head_size && !(*args.head_size > 0.0)) throw Error(ErrorKind::Format, "--head-size must be positive");
  const auto pred = read_pose_file(args.pred);
  const auto gt = read_pose_file(args.gt);
  const io::json result = evaluate_pose_files(pred, gt, args.head_size);
  if (args.out.empty()) {
    out << io::dump_json(result);
  } else {
    io::write_file_atomic(args.out, io::dump_json(result));
  }
  (void)err;
  return kOk;
}

// ---------------------------------------------------------------------------

struct TriangulateArgs {
  std::string rig;
  std::string observations;
  double threshold_px = 5.0;
  int iterations = 100;
  std::uint64_t seed = 0;
  std::string out;       // JSON, empty: stdout
  std::string pose_csv;  // optional joint_id,x,y,z,confidence
};

inline int cmd_triangulate(const TriangulateArgs& args, std::ostream& out, std::ostream& err) {
  const auto cams = io::rig_from_json(io::read_json_file(args.rig));
  std::ifstream in(args.observations);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + args.observations);
  const auto rows = io::read_observations_csv(in);
  if (!(args.threshold_px > 0.0)) throw Error(ErrorKind::Format, "--threshold must be positive");

  std::map<int, std::vector<const io::ObservationRow*>> by_joint;
  for (const auto& r : rows) {
    if (r.view_id < 0 || r.view_id >= static_cast<int>(cams.size())) {
      throw Error(ErrorKind::IndexOutOfRange, "row " + std::to_string(r.line) + ": view_id " +
                                                  std::to_string(r.view_id) + " not in rig");
    }
    by_joint[r.joint_id].push_back(&r);
  }
  io::json joints = io::json::array();
  std::vector<io::PoseRow> poses;
  for (const auto& [joint, list] : by_joint) {
    std::vector<Observation> obs;
    for (const auto* r : list) obs.push_back({&cams[static_cast<std::size_t>(r->view_id)], r->p, r->confidence});
    io::json entry = {{"joint_id", joint}, {"observations", obs.size()}};
    try {
      if (obs.size() < 2) throw Error(ErrorKind::NoConsensus, "fewer than two observations");
      const TriangulationResult tr = ransac_triangulate(
          obs, {args.threshold_px, args.iterations, mix_seed(args.seed, static_cast<std::uint64_t>(joint))});
      io::json inliers = io::json::array();
      for (std::size_t i = 0; i < list.size(); ++i) {
        if (tr.inliers[i]) inliers.push_back(list[i]->view_id);
      }
      entry["X"] = {tr.X.x(), tr.X.y(), tr.X.z()};
      entry["inlier_views"] = inliers;
      entry["rms_reproj_px"] = tr.rms_reproj;
      poses.push_back({joint, tr.X, true, 1.0, 0});
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::NoConsensus && e.kind() != ErrorKind::Degenerate) throw;
      err << "warning: joint " << joint << ": " << e.what() << "\n";
      entry["X"] = nullptr;
      entry["error"] = e.what();
      const double nan = std::nan("");
      poses.push_back({joint, Vec3(nan, nan, nan), true, 0.0, 0});
    }
    joints.push_back(entry);
  }
  const io::json result = {{"joints", joints}};
  if (!args.pose_csv.empty()) {
    std::ostringstream ss;
    io::write_pose_csv(ss, poses);
    io::write_file_atomic(args.pose_csv, ss.str());
  }
  if (args.out.empty()) {
    out << io::dump_json(result);
  } else {
    io::write_file_atomic(args.out, io::dump_json(result));
  }
  return kOk;
}

// ---------------------------------------------------------------------------

struct GenArgs {
  ScenarioFlags scenario;
  std::string out;
};

inline int cmd_rig_gen(const GenArgs& args, std::ostream& out, std::ostream& err) {
  const Scenario s = load_scenario(args.scenario);
  const Rig rig = scenario_rig(s);
  const std::string text = io::dump_json(io::rig_to_json(rig.cameras));
  if (args.out.empty()) {
    out << text;
  } else {
    io::write_file_atomic(args.out, text);
  }
  (void)err;
  return kOk;
}

inline int cmd_scene_gen(const GenArgs& args, std::ostream& out, std::ostream& err) {
  const Scenario s = load_scenario(args.scenario);
  const std::string text = io::dump_json(io::scene_to_json(scenario_scene(s)));
  if (args.out.empty()) {
    out << text;
  } else {
    io::write_file_atomic(args.out, text);
  }
  (void)err;
  return kOk;
}

// ---------------------------------------------------------------------------

inline constexpr const char* kFormatsHelp = R"(File formats:
  scenario config  JSON object; keys: cameras, angle_deg, radius_mm, joints, channels,
                   sigma_px, K, noise_px, seed, variant, weight_mode, temperature,
                   image_width, image_height, focal_px, map_width, map_height,
                   extent_mm, source_angle_deg, ransac_threshold_px,
                   ransac_iterations, head_size_px (all optional)
  rig              JSON array of {"M": [12 numbers, row-major], "width", "height"}
  observations     CSV view_id,joint_id,x,y,confidence
  pose             CSV joint_id,x,y[,z],confidence
  profile          CSV t,x,y,weight,dot (one row per epipolar sample)
  report           JSON {mpjpe_mm, jdr_pct, matching_accuracy, per_joint, profiles, ...}
  feature map      binary "FMAP", u32 H, W, C, float32 data (y, x, c)
Exit codes: 0 success, 2 usage/config error, 3 numeric/domain error.
)";

/// Parses argv and dispatches; returns the process exit code.
inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app("Epipolar feature fusion toolkit: synthetic rigs, fusion runs, profiles, triangulation, "
               "gradient checks and pose metrics.");
  app.footer(kFormatsHelp);
  app.require_subcommand(1);

  GenArgs rig_args;
  auto* rig_cmd = app.add_subcommand("rig-gen", "Write a synthetic camera rig as JSON");
  add_scenario_flags(rig_cmd, rig_args.scenario, false);
  rig_cmd->add_option("--out", rig_args.out, "Output rig JSON (default stdout)");

  GenArgs scene_args;
  auto* scene_cmd = app.add_subcommand("scene-gen", "Write a synthetic joint/descriptor scene as JSON");
  add_scenario_flags(scene_cmd, scene_args.scenario, false);
  scene_cmd->add_option("--out", scene_args.out, "Output scene JSON (default stdout)");

  RunArgs run_args;
  auto* run_cmd = app.add_subcommand("run", "Run the synthetic pipeline and write report.json");
  add_scenario_flags(run_cmd, run_args.scenario, true);
  run_cmd->add_option("--out", run_args.out_dir, "Output directory")->required();
  run_cmd->add_option("--threads", run_args.threads, "Worker threads (results do not depend on it)")
      ->check(CLI::Range(1, 1024));
  run_cmd->add_flag("--save-maps", run_args.save_maps, "Also write fused feature maps");

  ProfileArgs prof_args;
  auto* prof_cmd = app.add_subcommand("profile", "Export the attention profile of one joint as CSV");
  add_scenario_flags(prof_cmd, prof_args.scenario, true);
  prof_cmd->add_option("--ref", prof_args.ref_view, "Reference view index");
  prof_cmd->add_option("--src", prof_args.src_view, "Source view index");
  prof_cmd->add_option("--joint", prof_args.joint, "Joint index");
  prof_cmd->add_option("--out", prof_args.out, "Output CSV (default stdout)");

  TriangulateArgs tri_args;
  auto* tri_cmd = app.add_subcommand("triangulate", "RANSAC triangulation of per-view detections");
  tri_cmd->add_option("--rig", tri_args.rig, "Rig JSON")->required();
  tri_cmd->add_option("--obs", tri_args.observations, "Observations CSV")->required();
  tri_cmd->add_option("--threshold", tri_args.threshold_px, "Inlier threshold in pixels (default 5)");
  tri_cmd->add_option("--iterations", tri_args.iterations, "RANSAC iterations (default 100)")
      ->check(CLI::PositiveNumber);
  tri_cmd->add_option("--seed", tri_args.seed, "RANSAC seed");
  tri_cmd->add_option("--out", tri_args.out, "Output JSON (default stdout)");
  tri_cmd->add_option("--pose-csv", tri_args.pose_csv, "Also write joint_id,x,y,z,confidence CSV");

  GradCheckArgs gc_args;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Check analytic gradients against finite differences");
  gc_cmd->add_option("--height", gc_args.dims.height, "Map height (default 8)")->check(CLI::Range(2, 1 << 16));
  gc_cmd->add_option("--width", gc_args.dims.width, "Map width (default 8)")->check(CLI::Range(2, 1 << 16));
  gc_cmd->add_option("--channels", gc_args.dims.channels, "Channels (default 16)")->check(CLI::Range(1, 1 << 16));
  gc_cmd->add_option("--k", gc_args.dims.K, "Samples per line (default 8)")->check(CLI::Range(1, 1 << 16));
  gc_cmd->add_option("--seed", gc_args.seed, "Problem seed");
  gc_cmd->add_option("--variant", gc_args.variant, "identity | bottleneck")
      ->check(CLI::IsMember({"identity", "bottleneck"}));
  gc_cmd->add_option("--mode", gc_args.mode, "softmax | max")->check(CLI::IsMember({"softmax", "max"}));
  gc_cmd->add_option("--step", gc_args.h, "Finite-difference step (default 1e-5)")->check(CLI::PositiveNumber);

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "MPJPE and JDR between two pose CSV files");
  eval_cmd->add_option("--pred", eval_args.pred, "Predicted pose CSV")->required();
  eval_cmd->add_option("--gt", eval_args.gt, "Ground-truth pose CSV")->required();
  eval_cmd->add_option("--head-size", eval_args.head_size, "Head size in pixels for JDR");
  eval_cmd->add_option("--out", eval_args.out, "Output JSON (default stdout)");

  int threads_cap = 0;
  app.add_option("--threads-cap", threads_cap, "Upper bound on worker threads")->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    std::ostringstream help_out;
    std::ostringstream help_err;
    app.exit(e, help_out, help_err);
    err << help_err.str() << help_out.str();
    return kUsage;
  }

  try {
    if (*rig_cmd) return cmd_rig_gen(rig_args, out, err);
    if (*scene_cmd) return cmd_scene_gen(scene_args, out, err);
    if (*run_cmd) return cmd_run(run_args, out, err);
    if (*prof_cmd) return cmd_profile(prof_args, out, err);
    if (*tri_cmd) return cmd_triangulate(tri_args, out, err);
    if (*gc_cmd) return cmd_gradcheck(gc_args, out, err);
    if (*eval_cmd) return cmd_eval(eval_args, out, err);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}

}  // namespace epitr::cli

#endif  // EPITR_COMMANDS_HPP
