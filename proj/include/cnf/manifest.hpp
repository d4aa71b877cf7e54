#pragma once

// Scene manifest, schema "cnf-manifest/1":
//
//   {
//     "format": "cnf-manifest/1",
//     "intrinsics": {"fx": .., "fy": .., "cx": .., "cy": .., "width": W, "height": H},
//     "aabb": {"min": [x, y, z], "max": [x, y, z]},
//     "background": [r, g, b],                       (optional, default black)
//     "frames": [
//       {"index": 0, "image": "images/frame_000.png", "pose": [tx, ty, tz, rx, ry, rz]},
//       {"index": 1, "image": "...", "transform": [[r00, r01, r02, tx], [...], [...]]}
//     ]
//   }
//
// Poses are camera-to-world; "pose" uses an axis-angle rotation vector.
// Image paths are relative to the manifest's directory. Frames are sorted by
// "index", which must be unique.

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cnf/camera.hpp"
#include "cnf/checkpoint.hpp"
#include "cnf/errors.hpp"

namespace cnf {

inline constexpr const char* kManifestFormat = "cnf-manifest/1";

struct FrameRecord {
  int index = 0;
  std::string image;  // relative to SceneManifest::root
  Pose6 pose{};
};

struct SceneManifest {
  std::filesystem::path root;
  Intrinsics intrinsics;
  Aabb box;
  Vec3 background{0, 0, 0};
  std::vector<FrameRecord> frames;

  Camera camera(std::size_t frame) const { return Camera::from_pose6(intrinsics, frames.at(frame).pose); }
  std::filesystem::path image_path(std::size_t frame) const { return root / frames.at(frame).image; }
};

namespace detail {

inline double number_at(const nlohmann::json& j, const std::string& where) {
  if (!j.is_number()) throw DataError("manifest: " + where + ": expected a number");
  return j.get<double>();
}

inline Vec3 vec3_at(const nlohmann::json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3) throw DataError("manifest: " + where + ": expected 3 numbers");
  return {number_at(j[0], where), number_at(j[1], where), number_at(j[2], where)};
}

inline const nlohmann::json& member(const nlohmann::json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw DataError("manifest: " + where + ": missing \"" + key + "\"");
  return j.at(key);
}

}  // namespace detail

/// Parses and validates a manifest. Rotations given as matrices are
/// projected onto SO(3) when within 1e-3 of orthonormal, rejected otherwise.
/// Every referenced image must exist.
inline SceneManifest parse_manifest(const std::string& text, const std::filesystem::path& root, bool check_images = true) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(std::string("manifest: ") + e.what());
  }
  using detail::member;
  using detail::number_at;
  if (!j.is_object()) throw DataError("manifest: top level must be an object");
  const auto& fmt = member(j, "format", "top level");
  if (!fmt.is_string() || fmt.get<std::string>() != kManifestFormat)
    throw DataError(std::string("manifest: unsupported format (expected \"") + kManifestFormat + "\")");
  SceneManifest m;
  m.root = root;
  const auto& k = member(j, "intrinsics", "top level");
  m.intrinsics.fx = number_at(member(k, "fx", "intrinsics"), "intrinsics.fx");
  m.intrinsics.fy = number_at(member(k, "fy", "intrinsics"), "intrinsics.fy");
  m.intrinsics.cx = number_at(member(k, "cx", "intrinsics"), "intrinsics.cx");
  m.intrinsics.cy = number_at(member(k, "cy", "intrinsics"), "intrinsics.cy");
  m.intrinsics.width = static_cast<int>(number_at(member(k, "width", "intrinsics"), "intrinsics.width"));
  m.intrinsics.height = static_cast<int>(number_at(member(k, "height", "intrinsics"), "intrinsics.height"));
  if (!(m.intrinsics.fx > 0 && m.intrinsics.fy > 0)) throw DataError("manifest: intrinsics: focal lengths must be positive");
  if (m.intrinsics.width < 1 || m.intrinsics.height < 1) throw DataError("manifest: intrinsics: bad image size");
  const auto& box = member(j, "aabb", "top level");
  m.box.lo = detail::vec3_at(member(box, "min", "aabb"), "aabb.min");
  m.box.hi = detail::vec3_at(member(box, "max", "aabb"), "aabb.max");
  try {
    m.box.validate();
  } catch (const UsageError& e) {
    throw DataError(std::string("manifest: ") + e.what());
  }
  if (j.contains("background")) m.background = detail::vec3_at(j["background"], "background");
  const auto& frames = member(j, "frames", "top level");
  if (!frames.is_array() || frames.empty()) throw DataError("manifest: frames must be a non-empty array");
  for (std::size_t f = 0; f < frames.size(); ++f) {
    const std::string where = "frames[" + std::to_string(f) + "]";
    const auto& fr = frames[f];
    FrameRecord rec;
    rec.index = static_cast<int>(number_at(member(fr, "index", where), where + ".index"));
    const auto& img = member(fr, "image", where);
    if (!img.is_string()) throw DataError("manifest: " + where + ".image: expected a string");
    rec.image = img.get<std::string>();
    if (fr.contains("pose")) {
      const auto& p = fr["pose"];
      if (!p.is_array() || p.size() != 6) throw DataError("manifest: " + where + ".pose: expected 6 numbers");
      for (int i = 0; i < 6; ++i) rec.pose[i] = number_at(p[i], where + ".pose");
    } else if (fr.contains("transform")) {
      const auto& t = fr["transform"];
      if (!t.is_array() || t.size() != 3) throw DataError("manifest: " + where + ".transform: expected 3 rows");
      Pose34 mat;
      for (int r = 0; r < 3; ++r) {
        if (!t[r].is_array() || t[r].size() != 4)
          throw DataError("manifest: " + where + ".transform: each row needs 4 numbers");
        for (int c = 0; c < 4; ++c) mat(r, c) = number_at(t[r][c], where + ".transform");
      }
      if (orthonormalize(mat) > 1e-3) throw DataError("manifest: " + where + ".transform: rotation is not orthonormal");
      rec.pose = matrix_to_pose6(mat);
    } else {
      throw DataError("manifest: " + where + ": needs \"pose\" or \"transform\"");
    }
    if (check_images && !std::filesystem::exists(root / rec.image))
      throw DataError("manifest: " + where + " (index " + std::to_string(rec.index) + "): image not found: " +
                      (root / rec.image).string());
    m.frames.push_back(std::move(rec));
  }
  std::stable_sort(m.frames.begin(), m.frames.end(), [](const auto& a, const auto& b) { return a.index < b.index; });
  for (std::size_t f = 1; f < m.frames.size(); ++f)
    if (m.frames[f].index == m.frames[f - 1].index)
      throw DataError("manifest: duplicate frame index " + std::to_string(m.frames[f].index));
  return m;
}

inline SceneManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_manifest(text, path.parent_path());
}

inline std::string manifest_to_json(const SceneManifest& m) {
  nlohmann::json j;
  j["format"] = kManifestFormat;
  j["intrinsics"] = {{"fx", m.intrinsics.fx}, {"fy", m.intrinsics.fy}, {"cx", m.intrinsics.cx},
                     {"cy", m.intrinsics.cy}, {"width", m.intrinsics.width}, {"height", m.intrinsics.height}};
  j["aabb"] = {{"min", m.box.lo}, {"max", m.box.hi}};
  j["background"] = m.background;
  j["frames"] = nlohmann::json::array();
  for (const auto& f : m.frames) j["frames"].push_back({{"index", f.index}, {"image", f.image}, {"pose", f.pose}});
  return j.dump(2) + "\n";
}

inline void save_manifest(const SceneManifest& m, const std::filesystem::path& path) {
  const std::string text = manifest_to_json(m);
  write_file_atomic(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace cnf
