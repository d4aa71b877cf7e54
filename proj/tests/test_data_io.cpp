#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include "cnf/image_io.hpp"
#include "cnf/manifest.hpp"
#include "cnf/synthetic.hpp"
#include "cnf/task_stream.hpp"

using namespace cnf;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("cnf_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string two_frame_manifest(const std::string& second_pose) {
  return R"({
  "format": "cnf-manifest/1",
  "intrinsics": {"fx": 50, "fy": 50, "cx": 8, "cy": 8, "width": 16, "height": 16},
  "aabb": {"min": [-1, -1, -1], "max": [1, 1, 1]},
  "frames": [
    {"index": 1, "image": "b.png", )" +
         second_pose + R"(},
    {"index": 0, "image": "a.png", "pose": [0, 0, 3, 0, 0, 0]}
  ]
})";
}

SceneManifest manifest_with_frames(std::size_t n) {
  SceneManifest m;
  m.intrinsics = {10, 10, 2, 2, 4, 4};
  m.box = {{-1, -1, -1}, {1, 1, 1}};
  for (std::size_t f = 0; f < n; ++f) m.frames.push_back({static_cast<int>(f), "", {0, 0, 3, 0, 0, 0}});
  return m;
}

TaskStream frame_stream(std::size_t frames, std::size_t tasks) {
  return TaskStream::from_frames(manifest_with_frames(frames), std::vector<Image>(frames, Image(4, 4)), tasks);
}

}  // namespace

TEST(Png, RoundTripAndQuantization) {
  const auto dir = scratch("png");
  Image img(5, 3);
  Rng rng(1);
  for (auto& v : img.rgb) v = static_cast<float>(rng.uniform());
  write_png(dir / "x.png", img);
  const Image back = read_png(dir / "x.png");
  EXPECT_EQ(back.width, 5);
  EXPECT_EQ(back.height, 3);
  EXPECT_EQ(back.rgb, quantize8(img).rgb);
  EXPECT_THROW(read_png(dir / "missing.png"), DataError);
}

TEST(Npy, HeaderAndPayload) {
  const auto dir = scratch("npy");
  Image img(4, 2, 0.5f);
  write_npy(dir / "x.npy", img);
  const auto bytes = read_file(dir / "x.npy");
  ASSERT_GT(bytes.size(), 10u);
  EXPECT_EQ(bytes[0], 0x93);
  const std::size_t header_len = bytes[8] | (bytes[9] << 8);
  EXPECT_EQ((10 + header_len) % 64, 0u);
  const std::string header(bytes.begin() + 10, bytes.begin() + 10 + static_cast<long>(header_len));
  EXPECT_NE(header.find("'shape': (2, 4, 3)"), std::string::npos);
  EXPECT_EQ(bytes.size(), 10 + header_len + 4 * 24);
}

TEST(Manifest, MinimalTwoFrames) {
  const auto m = parse_manifest(two_frame_manifest(R"("pose": [1, 0, 3, 0, 0.5, 0])"), "/tmp", false);
  ASSERT_EQ(m.frames.size(), 2u);
  EXPECT_EQ(m.frames[0].index, 0);
  EXPECT_EQ(m.frames[0].image, "a.png");
  EXPECT_EQ(m.intrinsics.fx, 50);
  EXPECT_EQ(m.intrinsics.width, 16);
  EXPECT_EQ(m.background, (Vec3{0, 0, 0}));
}

TEST(Manifest, MatrixPoseEqualsSixScalarPose) {
  const Pose6 p{0.3, -1, 2.5, 0.2, -0.7, 0.4};
  const Pose34 mat = pose6_to_matrix(p);
  std::string rows = "\"transform\": [";
  char buf[256];
  for (int r = 0; r < 3; ++r) {
    std::snprintf(buf, sizeof(buf), "%s[%.17g, %.17g, %.17g, %.17g]", r ? ", " : "", mat(r, 0), mat(r, 1), mat(r, 2),
                  mat(r, 3));
    rows += buf;
  }
  rows += "]";
  char pose[256];
  std::snprintf(pose, sizeof(pose), "\"pose\": [%.17g, %.17g, %.17g, %.17g, %.17g, %.17g]", p[0], p[1], p[2], p[3], p[4],
                p[5]);
  const auto a = parse_manifest(two_frame_manifest(rows), "/tmp", false);
  const auto b = parse_manifest(two_frame_manifest(pose), "/tmp", false);
  for (int y = 0; y < 16; y += 5)
    for (int x = 0; x < 16; x += 5) {
      const auto ra = pixel_center_ray(a.camera(1), x, y), rb = pixel_center_ray(b.camera(1), x, y);
      for (int k = 0; k < 3; ++k) {
        EXPECT_NEAR(ra.dir[k], rb.dir[k], 1e-9);
        EXPECT_NEAR(ra.origin[k], rb.origin[k], 1e-9);
      }
    }
}

TEST(Manifest, SlightlySkewedRotationIsOrthonormalized) {
  const std::string rows = R"("transform": [[1.0002, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 3]])";
  const auto m = parse_manifest(two_frame_manifest(rows), "/tmp", false);
  EXPECT_NO_THROW(m.camera(1).validate());
  const std::string skewed = R"("transform": [[1.5, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 3]])";
  EXPECT_THROW(parse_manifest(two_frame_manifest(skewed), "/tmp", false), DataError);
}

TEST(Manifest, Errors) {
  EXPECT_THROW(parse_manifest("{\"format\": ", "/tmp", false), DataError);
  EXPECT_THROW(parse_manifest(R"({"format": "other"})", "/tmp", false), DataError);
  EXPECT_THROW(parse_manifest(two_frame_manifest(R"("pose": [1, 2])"), "/tmp", false), DataError);
  try {
    parse_manifest("{\n\"format\": \"cnf-manifest/1\",\n  oops\n}", "/tmp", false);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

TEST(Manifest, MissingImageNamesFrame) {
  const auto dir = scratch("manifest_missing");
  write_png(dir / "a.png", Image(16, 16));
  std::ofstream(dir / "manifest.json") << two_frame_manifest(R"("pose": [0, 0, 3, 0, 0, 0])");
  try {
    load_manifest(dir / "manifest.json");
    FAIL();
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("index 1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("b.png"), std::string::npos) << msg;
  }
}

TEST(Manifest, SaveLoadRoundTrip) {
  const auto dir = scratch("manifest_rt");
  auto m = manifest_with_frames(2);
  m.root = dir;
  m.frames[0].image = "a.png";
  m.frames[1].image = "b.png";
  m.frames[1].pose = {1, 2, 3, 0.1, 0.2, 0.3};
  m.background = {0.1, 0.2, 0.3};
  write_png(dir / "a.png", Image(4, 4));
  write_png(dir / "b.png", Image(4, 4));
  save_manifest(m, dir / "manifest.json");
  const auto back = load_manifest(dir / "manifest.json");
  EXPECT_EQ(back.frames[1].pose, m.frames[1].pose);
  EXPECT_EQ(back.background, m.background);
  EXPECT_EQ(manifest_to_json(back), manifest_to_json(m));
}

TEST(Synthetic, EmptyViewIsBackground) {
  SyntheticScene s = SyntheticScene::desk_default();
  s.width = s.height = 16;
  s.background = {0.2, 0.4, 0.6};
  const Camera away{s.intrinsics(), look_at(Eigen::Vector3d(4, 0, 0), Eigen::Vector3d(8, 0, 0))};
  const auto f = render_scene_frame(s, away, 1);
  for (std::size_t i = 0; i < f.image.pixels(); ++i)
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(f.image.rgb[3 * i + c], s.background[c], 1e-6);
}

TEST(Synthetic, SameSeedGivesIdenticalFiles) {
  SyntheticScene s = SyntheticScene::desk_default();
  s.width = s.height = 24;
  s.orbit.frames = 3;
  s.render_samples = 32;
  const auto a = scratch("syn_a"), b = scratch("syn_b");
  const auto ma = make_synthetic(s, a, 5, 1);
  make_synthetic(s, b, 5, 2);
  for (std::size_t f = 0; f < 3; ++f) EXPECT_EQ(read_file(ma.image_path(f)), read_file(b / ma.frames[f].image));
  EXPECT_EQ(read_file(a / "manifest.json"), read_file(b / "manifest.json"));
  const auto loaded = load_manifest(a / "manifest.json");
  EXPECT_EQ(loaded.frames.size(), 3u);
}

TEST(Synthetic, SphereSilhouetteMatchesProjectedDisk) {
  SyntheticScene s;
  Primitive sphere;
  sphere.center = {0, 0, 0};
  sphere.half_extent = {1, 1, 1};
  sphere.density = 1e4;
  s.primitives = {sphere};
  s.width = s.height = 200;
  s.render_samples = 128;
  const double dist = 4.0;
  const Camera cam{s.intrinsics(), look_at(Eigen::Vector3d(dist, 0, 0), Eigen::Vector3d::Zero())};
  const auto f = render_scene_frame(s, cam, 3);
  std::size_t covered = 0;
  for (double a : f.opacity) covered += a > 0.5;
  // The silhouette cone has half-angle asin(r / dist); its image is a disk of
  // radius f * tan(asin(r / dist)).
  const double rad = cam.intrinsics.fx * std::tan(std::asin(1.0 / dist));
  const double area = std::numbers::pi * rad * rad;
  EXPECT_NEAR(static_cast<double>(covered), area, 0.02 * area);
}

TEST(Synthetic, ProceduralImageIsDeterministic) {
  const auto a = make_procedural_image(64, 48, 3);
  EXPECT_EQ(a.rgb, make_procedural_image(64, 48, 3).rgb);
  EXPECT_NE(a.rgb, make_procedural_image(64, 48, 4).rgb);
  for (float v : a.rgb) {
    EXPECT_GE(v, 0.f);
    EXPECT_LE(v, 1.f);
  }
}

TEST(Partition, EqualContiguousSplits) {
  const auto s = frame_stream(100, 10);
  for (std::size_t t = 0; t < 10; ++t) {
    const auto& f = s.train_frames(t);
    ASSERT_EQ(f.size(), 10u);
    for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(f[i], 10 * t + i);
  }
}

TEST(Partition, RemainderGoesToLastTask) {
  const auto s = frame_stream(103, 10);
  for (std::size_t t = 0; t < 9; ++t) EXPECT_EQ(s.train_frames(t).size(), 10u);
  EXPECT_EQ(s.train_frames(9).size(), 13u);
  EXPECT_EQ(frame_stream(10, 1).train_frames(0).size(), 10u);
}

TEST(Partition, InvalidTaskCounts) {
  EXPECT_THROW(frame_stream(5, 0), UsageError);
  EXPECT_THROW(frame_stream(5, 6), UsageError);
}

TEST(Partition, HoldoutFramesAreExcludedFromTraining) {
  const auto s =
      TaskStream::from_frames(manifest_with_frames(40), std::vector<Image>(40, Image(4, 4)), 10, 8);
  std::set<std::size_t> all;
  for (std::size_t t = 0; t < 10; ++t) {
    for (auto f : s.train_frames(t)) {
      EXPECT_NE(f % 8, 0u);
      all.insert(f);
    }
    for (auto f : s.holdout_frames(t)) {
      EXPECT_EQ(f % 8, 0u);
      EXPECT_TRUE(all.insert(f).second);
    }
  }
  EXPECT_EQ(all.size(), 40u);
}

TEST(Image2d, StripWidths) {
  const auto s = TaskStream::from_image(Image(512, 4), 10, ImageSplit::VerticalStrips);
  for (std::size_t t = 0; t < 10; ++t) {
    const std::size_t w = s.task_rays(t) / 4;
    EXPECT_TRUE(w == 51 || w == 52) << w;
  }
  EXPECT_EQ(TaskStream::from_image(Image(8, 8), 1, ImageSplit::VerticalStrips).task_rays(0), 64u);
}

TEST(Image2d, PartitionsAreDisjointCovers) {
  for (auto split : {ImageSplit::VerticalStrips, ImageSplit::SequentialPatches})
    for (std::size_t n : {1u, 2u, 3u, 5u, 7u, 10u, 20u}) {
      const auto s = TaskStream::from_image(Image(40, 30), n, split);
      ASSERT_EQ(s.num_tasks(), n);
      std::vector<int> hits(40 * 30, 0);
      for (std::size_t t = 0; t < n; ++t) {
        EXPECT_GT(s.task_rays(t), 0u);
        for (auto p : s.task_pixels(t)) ++hits[p];
      }
      for (int h : hits) EXPECT_EQ(h, 1);
    }
}

TEST(Image2d, QueryPointsArePixelCenters) {
  const auto s = TaskStream::from_image(Image(4, 2), 2, ImageSplit::VerticalStrips);
  const Query q = s.pixel_query(0, 5);  // x = 1, y = 1
  EXPECT_DOUBLE_EQ(q.origin[0], 1.5 / 4);
  EXPECT_DOUBLE_EQ(q.origin[1], 1.5 / 2);
}

TEST(TaskStream, RaysRegeneratedFromPosesMatchCameras) {
  SyntheticScene sc = SyntheticScene::desk_default();
  sc.width = sc.height = 8;
  auto m = manifest_with_frames(4);
  m.intrinsics = sc.intrinsics();
  for (int f = 0; f < 4; ++f) m.frames[f].pose = matrix_to_pose6(sc.frame_pose(f * 7));
  const auto s = TaskStream::from_frames(m, std::vector<Image>(4, Image(8, 8)), 2);
  for (int f = 0; f < 4; ++f) {
    const Camera cam{sc.intrinsics(), sc.frame_pose(f * 7)};
    for (int p = 0; p < 64; p += 9) {
      const Ray r = pixel_center_ray(cam, p % 8, p / 8);
      const Query q = s.pixel_query(f, p);
      for (int k = 0; k < 3; ++k) EXPECT_NEAR(q.dir[k], r.dir[k], 1e-9);
    }
  }
}
