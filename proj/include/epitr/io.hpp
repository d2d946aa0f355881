#ifndef EPITR_IO_HPP
#define EPITR_IO_HPP

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "epitr/common.hpp"
#include "epitr/fusion.hpp"
#include "epitr/geometry.hpp"
#include "epitr/metrics.hpp"
#include "epitr/pipeline.hpp"
#include "epitr/sampler.hpp"

namespace epitr::io {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Cameras: {"M": [12 numbers, row-major], "width": int, "height": int}; a rig
// file is an array of these.

inline json camera_to_json(const CameraView& cam) {
  json m = json::array();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 4; ++c) m.push_back(cam.M(r, c));
  }
  return {{"M", m}, {"width", cam.width}, {"height", cam.height}};
}

inline CameraView camera_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorKind::Format, "camera entry must be an object");
  if (!j.contains("M") || !j["M"].is_array() || j["M"].size() != 12) {
    throw Error(ErrorKind::Format, "camera key 'M' must be an array of 12 numbers");
  }
  CameraView cam;
  for (int i = 0; i < 12; ++i) {
    if (!j["M"][static_cast<std::size_t>(i)].is_number()) throw Error(ErrorKind::Format, "camera key 'M' must hold numbers");
    cam.M(i / 4, i % 4) = j["M"][static_cast<std::size_t>(i)].get<double>();
  }
  for (const char* key : {"width", "height"}) {
    if (!j.contains(key) || !j[key].is_number_integer()) {
      throw Error(ErrorKind::Format, std::string("camera key '") + key + "' must be an integer");
    }
  }
  cam.width = j["width"].get<int>();
  cam.height = j["height"].get<int>();
  validate_camera(cam);
  return cam;
}

inline json rig_to_json(const std::vector<CameraView>& cams) {
  json arr = json::array();
  for (const auto& c : cams) arr.push_back(camera_to_json(c));
  return arr;
}

inline std::vector<CameraView> rig_from_json(const json& j) {
  if (!j.is_array()) throw Error(ErrorKind::Format, "rig file must be a JSON array of cameras");
  std::vector<CameraView> out;
  for (const auto& c : j) out.push_back(camera_from_json(c));
  return out;
}

inline json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::Format, path.string() + ": malformed JSON: " + e.what());
  }
}

/// Writes to a sibling temporary and renames, so readers never see a partial file.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + tmp.string());
    out << contents;
    if (!out) throw Error(ErrorKind::Io, "write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

/// Full round-trip precision for doubles.
inline std::string dump_json(const json& j) { return j.dump(2) + "\n"; }

// ---------------------------------------------------------------------------
// Little-endian binary helpers.

namespace detail {

template <typename T>
void put_le(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(std::istream& in, const char* what) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
    throw Error(ErrorKind::Format, std::string("truncated file while reading ") + what);
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

inline void expect_magic(std::istream& in, const char (&magic)[5]) {
  char buf[4];
  if (!in.read(buf, 4) || std::memcmp(buf, magic, 4) != 0) {
    throw Error(ErrorKind::Format, std::string("bad magic, expected ") + magic);
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Feature maps: "FMAP", u32 H, W, C, then H*W*C float32 in (y, x, c) order.

inline std::string encode_feature_map(const FeatureMap& F) {
  std::string out = "FMAP";
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(F.height()));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(F.width()));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(F.channels()));
  for (double v : F.data()) detail::put_le<float>(out, static_cast<float>(v));
  return out;
}

inline FeatureMap decode_feature_map(std::istream& in) {
  detail::expect_magic(in, "FMAP");
  const auto h = detail::get_le<std::uint32_t>(in, "height");
  const auto w = detail::get_le<std::uint32_t>(in, "width");
  const auto c = detail::get_le<std::uint32_t>(in, "channels");
  constexpr std::uint64_t kMaxEntries = 1ULL << 31;
  if (static_cast<std::uint64_t>(h) * w * c > kMaxEntries) throw Error(ErrorKind::Format, "feature map too large");
  std::vector<double> data(static_cast<std::size_t>(h) * w * c);
  for (auto& v : data) v = detail::get_le<float>(in, "feature data");
  return FeatureMap(static_cast<int>(h), static_cast<int>(w), static_cast<int>(c), std::move(data));
}

inline void save_feature_map(const std::filesystem::path& path, const FeatureMap& F) {
  write_file_atomic(path, encode_feature_map(F));
}

inline FeatureMap load_feature_map(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  return decode_feature_map(in);
}

// ---------------------------------------------------------------------------
// Fusion parameters: "ETWT", variant byte, mode byte, u32 C, then the output
// transform and (bottleneck only) query, key, value embeddings as row-major
// little-endian f64.

inline std::string encode_params(const FusionParams& p) {
  p.validate();
  std::string out = "ETWT";
  out.push_back(static_cast<char>(p.variant));
  out.push_back(static_cast<char>(p.mode));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.channels()));
  auto put = [&](const Eigen::MatrixXd& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) detail::put_le<double>(out, m(r, c));
    }
  };
  put(p.output_transform);
  if (p.variant == FusionVariant::BottleneckEmbeddedGaussian) {
    put(p.query_embedding);
    put(p.key_embedding);
    put(p.value_embedding);
  }
  return out;
}

inline FusionParams decode_params(std::istream& in) {
  detail::expect_magic(in, "ETWT");
  const auto variant = detail::get_le<std::uint8_t>(in, "variant");
  const auto mode = detail::get_le<std::uint8_t>(in, "mode");
  if (variant > 1) throw Error(ErrorKind::Format, "unknown fusion variant byte");
  if (mode > 1) throw Error(ErrorKind::Format, "unknown weight mode byte");
  const auto c = static_cast<Eigen::Index>(detail::get_le<std::uint32_t>(in, "channels"));
  if (c < 1 || c > (1 << 16)) throw Error(ErrorKind::Format, "implausible channel count");
  FusionParams p;
  p.variant = static_cast<FusionVariant>(variant);
  p.mode = static_cast<WeightMode>(mode);
  auto get = [&](Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index k = 0; k < cols; ++k) m(r, k) = detail::get_le<double>(in, "weights");
    }
    return m;
  };
  if (p.variant == FusionVariant::IdentityGaussian) {
    p.output_transform = get(c, c);
  } else {
    if (c % 2 != 0) throw Error(ErrorKind::OddChannels, "bottleneck parameters need even C");
    p.output_transform = get(c / 2, c);
    p.query_embedding = get(c, c / 2);
    p.key_embedding = get(c, c / 2);
    p.value_embedding = get(c, c / 2);
  }
  p.validate();
  return p;
}

inline void save_params(const std::filesystem::path& path, const FusionParams& p) {
  write_file_atomic(path, encode_params(p));
}

inline FusionParams load_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  return decode_params(in);
}

// ---------------------------------------------------------------------------
// CSV.

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_number(const std::string& s, int row, const char* column) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    if (s == "nan" || s == "NaN") return std::numeric_limits<double>::quiet_NaN();
    throw Error(ErrorKind::Format, "row " + std::to_string(row) + ": column '" + column + "' is not a number: '" + s + "'");
  }
}

inline bool is_header(const std::vector<std::string>& cells) {
  if (cells.empty()) return false;
  try {
    std::size_t used = 0;
    (void)std::stod(cells[0], &used);
    return used != cells[0].size();
  } catch (const std::exception&) {
    return true;
  }
}

inline std::string format_double(double v) {
  std::ostringstream ss;
  ss << std::setprecision(17) << v;
  return ss.str();
}

}  // namespace detail

struct ObservationRow {
  int view_id = 0;
  int joint_id = 0;
  Vec2 p = Vec2::Zero();
  double confidence = 1.0;
  int line = 0;
};

/// Observations CSV: view_id, joint_id, x, y, confidence (header optional).
inline std::vector<ObservationRow> read_observations_csv(std::istream& in) {
  std::vector<ObservationRow> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = detail::split_csv(line);
    if (rows.empty() && lineno == 1 && detail::is_header(cells)) continue;
    if (cells.size() != 5) {
      throw Error(ErrorKind::Format, "row " + std::to_string(lineno) + ": expected 5 columns (view_id, joint_id, x, y, confidence)");
    }
    ObservationRow r;
    r.view_id = static_cast<int>(detail::parse_number(cells[0], lineno, "view_id"));
    r.joint_id = static_cast<int>(detail::parse_number(cells[1], lineno, "joint_id"));
    r.p = Vec2(detail::parse_number(cells[2], lineno, "x"), detail::parse_number(cells[3], lineno, "y"));
    r.confidence = detail::parse_number(cells[4], lineno, "confidence");
    r.line = lineno;
    if (r.confidence < 0.0 || r.confidence > 1.0) {
      throw Error(ErrorKind::Format, "row " + std::to_string(lineno) + ": confidence must lie in [0, 1]");
    }
    rows.push_back(r);
  }
  return rows;
}

inline void write_observations_csv(std::ostream& out, const std::vector<ObservationRow>& rows) {
  out << "view_id,joint_id,x,y,confidence\n";
  for (const auto& r : rows) {
    out << r.view_id << ',' << r.joint_id << ',' << detail::format_double(r.p.x()) << ','
        << detail::format_double(r.p.y()) << ',' << detail::format_double(r.confidence) << '\n';
  }
}

struct PoseRow {
  int joint_id = 0;
  Vec3 p = Vec3::Zero();  // z is NaN for 2D rows
  bool has_z = false;
  double confidence = 1.0;
  int line = 0;
};

/// Pose CSV: joint_id, x, y[, z], confidence. NaN coordinates mark a joint
/// as invalid.
inline std::vector<PoseRow> read_pose_csv(std::istream& in) {
  std::vector<PoseRow> rows;
  std::string line;
  int lineno = 0;
  std::optional<std::size_t> width;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = detail::split_csv(line);
    if (rows.empty() && lineno == 1 && detail::is_header(cells)) continue;
    if (cells.size() != 4 && cells.size() != 5) {
      throw Error(ErrorKind::Format, "row " + std::to_string(lineno) + ": expected joint_id, x, y[, z], confidence");
    }
    if (width && *width != cells.size()) {
      throw Error(ErrorKind::Format, "row " + std::to_string(lineno) + ": column count differs from earlier rows");
    }
    width = cells.size();
    PoseRow r;
    r.line = lineno;
    r.joint_id = static_cast<int>(detail::parse_number(cells[0], lineno, "joint_id"));
    r.p.x() = detail::parse_number(cells[1], lineno, "x");
    r.p.y() = detail::parse_number(cells[2], lineno, "y");
    r.has_z = cells.size() == 5;
    r.p.z() = r.has_z ? detail::parse_number(cells[3], lineno, "z") : std::numeric_limits<double>::quiet_NaN();
    r.confidence = detail::parse_number(cells.back(), lineno, "confidence");
    rows.push_back(r);
  }
  return rows;
}

inline void write_pose_csv(std::ostream& out, const std::vector<PoseRow>& rows) {
  const bool z = !rows.empty() && rows.front().has_z;
  out << (z ? "joint_id,x,y,z,confidence\n" : "joint_id,x,y,confidence\n");
  for (const auto& r : rows) {
    out << r.joint_id << ',' << detail::format_double(r.p.x()) << ',' << detail::format_double(r.p.y()) << ',';
    if (z) out << detail::format_double(r.p.z()) << ',';
    out << detail::format_double(r.confidence) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Reports.

inline json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline json profile_to_json(const SimilarityProfile& p) {
  json samples = json::array();
  for (const auto& s : p.samples) samples.push_back({s.t, s.p.x(), s.p.y(), s.weight, s.dot});
  json j = {{"joint", p.joint},
            {"ref_view", p.ref_view},
            {"src_view", p.src_view},
            {"query", {p.query.x(), p.query.y()}},
            {"columns", {"t", "x", "y", "weight", "dot"}},
            {"samples", samples}};
  j["truth"] = p.truth ? json{p.truth->x(), p.truth->y()} : json(nullptr);
  return j;
}

inline json report_to_json(const Report& r) {
  json per_joint = json::array();
  for (const auto& jr : r.joints) {
    per_joint.push_back({{"joint", jr.joint},
                         {"valid", jr.valid},
                         {"observations", jr.observations},
                         {"inliers", jr.inliers},
                         {"X", jr.valid ? json{jr.X.x(), jr.X.y(), jr.X.z()} : json(nullptr)},
                         {"error_mm", number_or_null(jr.error_mm)},
                         {"analytic_error_mm", number_or_null(jr.analytic_error_mm)}});
  }
  json profiles = json::array();
  for (const auto& p : r.profiles) profiles.push_back(profile_to_json(p));
  return {{"mpjpe_mm", number_or_null(r.mpjpe_mm)},
          {"analytic_mpjpe_mm", number_or_null(r.analytic_mpjpe_mm)},
          {"jdr_pct", number_or_null(r.jdr_pct)},
          {"matching_accuracy", number_or_null(r.matching_accuracy)},
          {"matched", r.matched},
          {"match_total", r.match_total},
          {"valid_joints", r.valid_joints},
          {"extent_mm", r.extent_mm},
          {"source_view", r.source_view},
          {"per_joint", per_joint},
          {"profiles", profiles}};
}

// ---------------------------------------------------------------------------
// Scenario configuration. Every key is optional; unknown keys and wrong types
// are rejected with the key named in the message.

inline Scenario scenario_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorKind::Format, "scenario config must be a JSON object");
  Scenario s;
  auto key_error = [](const std::string& key, const std::string& what) {
    return Error(ErrorKind::Format, "config key '" + key + "': " + what);
  };
  auto get_int = [&](const std::string& key, int& dst, int lo) {
    if (!j.contains(key)) return;
    if (!j[key].is_number_integer()) throw key_error(key, "expected an integer");
    const auto v = j[key].get<long long>();
    if (v < lo || v > std::numeric_limits<int>::max()) throw key_error(key, "must be >= " + std::to_string(lo));
    dst = static_cast<int>(v);
  };
  auto get_num = [&](const std::string& key, double& dst) {
    if (!j.contains(key)) return;
    if (!j[key].is_number()) throw key_error(key, "expected a number");
    dst = j[key].get<double>();
    if (!std::isfinite(dst)) throw key_error(key, "must be finite");
  };
  static const std::vector<std::string> known = {
      "cameras", "angle_deg", "radius_mm", "joints", "channels", "sigma_px", "K", "noise_px", "seed",
      "variant", "weight_mode", "temperature", "image_width", "image_height", "focal_px", "map_width",
      "map_height", "extent_mm", "source_angle_deg", "ransac_threshold_px", "ransac_iterations", "head_size_px"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) throw key_error(key, "unknown key");
  }
  get_int("cameras", s.cameras, 2);
  get_num("angle_deg", s.angle_deg);
  get_num("radius_mm", s.radius_mm);
  get_int("joints", s.joints, 1);
  get_int("channels", s.channels, 1);
  get_num("sigma_px", s.sigma_px);
  get_int("K", s.K, 1);
  get_num("noise_px", s.noise_px);
  if (j.contains("seed")) {
    if (!j["seed"].is_number_unsigned() && !(j["seed"].is_number_integer() && j["seed"].get<long long>() >= 0)) {
      throw key_error("seed", "expected a non-negative integer");
    }
    s.seed = j["seed"].get<std::uint64_t>();
  }
  if (j.contains("variant")) {
    if (!j["variant"].is_string()) throw key_error("variant", "expected \"identity\" or \"bottleneck\"");
    const auto v = j["variant"].get<std::string>();
    if (v == "identity") s.variant = FusionVariant::IdentityGaussian;
    else if (v == "bottleneck") s.variant = FusionVariant::BottleneckEmbeddedGaussian;
    else throw key_error("variant", "expected \"identity\" or \"bottleneck\"");
  }
  if (j.contains("weight_mode")) {
    if (!j["weight_mode"].is_string()) throw key_error("weight_mode", "expected \"softmax\" or \"max\"");
    const auto v = j["weight_mode"].get<std::string>();
    if (v == "softmax") s.weight_mode = WeightMode::Softmax;
    else if (v == "max") s.weight_mode = WeightMode::Max;
    else throw key_error("weight_mode", "expected \"softmax\" or \"max\"");
  }
  get_num("temperature", s.temperature);
  get_int("image_width", s.image_width, 2);
  get_int("image_height", s.image_height, 2);
  get_num("focal_px", s.focal_px);
  get_int("map_width", s.map_width, 2);
  get_int("map_height", s.map_height, 2);
  get_num("extent_mm", s.extent_mm);
  get_num("source_angle_deg", s.source_angle_deg);
  get_num("ransac_threshold_px", s.ransac_threshold_px);
  get_int("ransac_iterations", s.ransac_iterations, 1);
  get_num("head_size_px", s.head_size_px);

  if (!(s.radius_mm > 0.0)) throw key_error("radius_mm", "must be positive");
  if (!(s.sigma_px > 0.0)) throw key_error("sigma_px", "must be positive");
  if (s.noise_px < 0.0) throw key_error("noise_px", "must be non-negative");
  if (!(s.temperature > 0.0)) throw key_error("temperature", "must be positive");
  if (!(s.focal_px > 0.0)) throw key_error("focal_px", "must be positive");
  if (!(s.extent_mm > 0.0)) throw key_error("extent_mm", "must be positive");
  if (!(s.ransac_threshold_px > 0.0)) throw key_error("ransac_threshold_px", "must be positive");
  if (!(s.head_size_px > 0.0)) throw key_error("head_size_px", "must be positive");
  if (s.map_width > s.image_width) throw key_error("map_width", "must not exceed image_width");
  if (s.map_height > s.image_height) throw key_error("map_height", "must not exceed image_height");
  return s;
}

inline json scenario_to_json(const Scenario& s) {
  return {{"cameras", s.cameras},
          {"angle_deg", s.angle_deg},
          {"radius_mm", s.radius_mm},
          {"joints", s.joints},
          {"channels", s.channels},
          {"sigma_px", s.sigma_px},
          {"K", s.K},
          {"noise_px", s.noise_px},
          {"seed", s.seed},
          {"variant", to_string(s.variant)},
          {"weight_mode", to_string(s.weight_mode)},
          {"temperature", s.temperature},
          {"image_width", s.image_width},
          {"image_height", s.image_height},
          {"focal_px", s.focal_px},
          {"map_width", s.map_width},
          {"map_height", s.map_height},
          {"extent_mm", s.extent_mm},
          {"source_angle_deg", s.source_angle_deg},
          {"ransac_threshold_px", s.ransac_threshold_px},
          {"ransac_iterations", s.ransac_iterations},
          {"head_size_px", s.head_size_px}};
}

inline json scene_to_json(const Scene& scene) {
  json joints = json::array();
  for (const auto& X : scene.joints) joints.push_back({X.x(), X.y(), X.z()});
  json desc = json::array();
  for (Eigen::Index r = 0; r < scene.descriptors.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < scene.descriptors.cols(); ++c) row.push_back(scene.descriptors(r, c));
    desc.push_back(row);
  }
  return {{"seed", scene.seed}, {"joints", joints}, {"descriptors", desc}};
}

}  // namespace epitr::io

#endif  // EPITR_IO_HPP
