#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "lsdf/assembly_query.hpp"
#include "lsdf/bench.hpp"
#include "lsdf/sdf_precompute.hpp"
#include "test_util.hpp"

using namespace lsdf;

namespace {

SdfSampleField constant_field(std::uint32_t id, const Index3& anchor, const Index3& window, float value, float d_far) {
  SdfSampleField f;
  f.link_id = id;
  f.anchor = anchor;
  f.window = window;
  f.d_far = d_far;
  f.values.assign(static_cast<std::size_t>(window.prod()), value);
  return f;
}

SdfSampleField random_field(const EnvGrid& g, std::mt19937_64& rng, float d_far) {
  std::uniform_int_distribution<int> pos(-3, g.dims().x() - 1);
  std::uniform_real_distribution<float> val(-0.1f, d_far);
  SdfSampleField f = constant_field(0, Index3(pos(rng), pos(rng), pos(rng)), Index3(4, 4, 4), 0.0f, d_far);
  for (auto& v : f.values) v = val(rng);
  return f;
}

// Reference scatter: walks every window cell through the EnvGrid API.
std::vector<float> scatter_reference(const std::vector<SdfSampleField>& fields, const EnvGrid& g, float d_far) {
  std::vector<float> out(g.voxel_count(), d_far);
  for (const auto& f : fields) {
    for (int z = 0; z < f.window.z(); ++z)
      for (int y = 0; y < f.window.y(); ++y)
        for (int x = 0; x < f.window.x(); ++x) {
          const Index3 m(x, y, z);
          const Index3 v = f.anchor + m;
          if (!g.contains(v)) continue;
          float& dst = out[g.linear_index(v)];
          dst = std::min(dst, f.values[f.linear_index(m)]);
        }
  }
  return out;
}

struct ArmScene {
  RobotModel model = load_robot_model(test::data_dir() / "arm3.json");
  EnvGrid grid = EnvGrid::cubic(1.0, 0.04);
  double e_r = 0.6;
  std::vector<LinkSdf> sdfs = build_robot_link_sdfs(model, 0.6f, 0.02f);
  CanonicalWindow window = make_canonical_window(0.6, grid);
};

}  // namespace

TEST(RobotSdfBatch, MemoryLimit) {
  const EnvGrid g = EnvGrid::cubic(1.0, 0.01);  // 8e6 voxels, 32 MB per configuration
  EXPECT_NO_THROW(RobotSdfBatch(g, 2, 0.5));
  EXPECT_THROW(RobotSdfBatch(g, 40, 0.5), ValidationError);
}

TEST(Assemble, SingleFieldScatters) {
  const EnvGrid g = EnvGrid::cubic(0.4, 0.1);
  std::mt19937_64 rng(1);
  SdfSampleField f = random_field(g, rng, 0.2f);
  f.anchor = Index3(2, 3, 1);
  const RobotSdfBatch b = assemble_robot_sdfs({{f}}, g, 0.2);
  for (int z = 0; z < 4; ++z)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) {
        const Index3 m(x, y, z);
        const Index3 v = f.anchor + m;
        if (g.contains(v)) {
          EXPECT_EQ(b.at(0, v), f.values[f.linear_index(m)]);
        }
      }
  EXPECT_EQ(b.at(0, Index3(0, 0, 0)), 0.2f);
}

TEST(Assemble, ClipsWindowsAtGridBorder) {
  const EnvGrid g = EnvGrid::cubic(0.4, 0.1);
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<SdfSampleField> fields{random_field(g, rng, 0.3f), random_field(g, rng, 0.3f)};
    fields[1].anchor = Index3(-2, 6, 3);
    const RobotSdfBatch b = assemble_robot_sdfs({fields}, g, 0.3);
    const auto ref = scatter_reference(fields, g, 0.3f);
    const auto got = b.field(0);
    ASSERT_TRUE(std::equal(got.begin(), got.end(), ref.begin()));
  }
}

TEST(Assemble, IdempotentAndCommutative) {
  const EnvGrid g = EnvGrid::cubic(0.4, 0.1);
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10000; ++trial) {
    std::vector<SdfSampleField> fields;
    const int n = 1 + static_cast<int>(rng() % 4);
    for (int i = 0; i < n; ++i) fields.push_back(random_field(g, rng, 0.3f));
    const RobotSdfBatch once = assemble_robot_sdfs({fields}, g, 0.3);

    std::vector<SdfSampleField> doubled = fields;
    doubled.insert(doubled.end(), fields.begin(), fields.end());
    std::shuffle(doubled.begin(), doubled.end(), rng);
    const RobotSdfBatch twice = assemble_robot_sdfs({doubled}, g, 0.3);
    ASSERT_TRUE(std::equal(once.field(0).begin(), once.field(0).end(), twice.field(0).begin()));
  }
}

TEST(Assemble, AddingALinkNeverRaisesValues) {
  const EnvGrid g = EnvGrid::cubic(0.4, 0.1);
  std::mt19937_64 rng(4);
  std::vector<SdfSampleField> fields{random_field(g, rng, 0.3f)};
  RobotSdfBatch prev = assemble_robot_sdfs({fields}, g, 0.3);
  for (int i = 0; i < 20; ++i) {
    fields.push_back(random_field(g, rng, 0.3f));
    RobotSdfBatch next = assemble_robot_sdfs({fields}, g, 0.3);
    for (std::size_t v = 0; v < g.voxel_count(); ++v) {
      ASSERT_LE(next.field(0)[v], prev.field(0)[v]);
      ASSERT_LE(next.field(0)[v], 0.3f);
    }
    prev = std::move(next);
  }
}

TEST(Assemble, GlobalDFarIsSmallestLinkExtent) {
  std::vector<LinkSdf> sdfs;
  sdfs.emplace_back(0, Vec3f::Constant(0.6f), Vec3f::Constant(0.1f));
  sdfs.emplace_back(1, Vec3f(0.4f, 0.6f, 0.6f), Vec3f::Constant(0.1f));
  EXPECT_FLOAT_EQ(static_cast<float>(global_d_far(sdfs)), 0.4f);
}

TEST(Assemble, FusedBuildMatchesTwoStage) {
  ArmScene s;
  std::mt19937_64 rng(5);
  const ConfigBatch cb = random_configs(s.model, 70, rng);
  const LinkPoseBatch poses = forward_kinematics_batch(s.model, cb);
  const ExactGridTransform exact(s.window);
  const auto fields = place_links_batch(std::span<const LinkSdf>(s.sdfs), poses, s.grid, exact);
  const RobotSdfBatch a = assemble_robot_sdfs(fields, s.grid, global_d_far(s.sdfs));
  const RobotSdfBatch b = build_robot_sdfs(std::span<const LinkSdf>(s.sdfs), poses, s.grid, exact);
  for (std::size_t c = 0; c < 70; ++c) ASSERT_TRUE(std::equal(a.field(c).begin(), a.field(c).end(), b.field(c).begin()));
}

TEST(Assemble, MatchesExactDistanceAtRandomVoxels) {
  ArmScene s;
  const double r_r = 0.02;
  std::mt19937_64 rng(6);
  const ConfigBatch cb = random_configs(s.model, 5, rng);
  const LinkPoseBatch poses = forward_kinematics_batch(s.model, cb);
  const RobotSdfBatch b = build_robot_sdfs(std::span<const LinkSdf>(s.sdfs), poses, s.grid, ExactGridTransform(s.window));
  const double budget = std::sqrt(3.0) * 0.02 + std::sqrt(3.0) * r_r / 2;
  // Windows are trusted up to e_r minus the link reach minus the voxel
  // half-diagonal; compare both sides clamped to that.
  const double cap = s.e_r - s.model.link_reach() - std::sqrt(3.0) * 0.02;
  std::vector<LinkDistanceFunction> fns;
  for (const auto& l : s.model.links()) fns.emplace_back(*l.geometry, l.geometry_origin);
  std::uniform_int_distribution<std::uint32_t> vox(0, static_cast<std::uint32_t>(s.grid.voxel_count() - 1));
  for (std::size_t c = 0; c < 5; ++c) {
    int checked = 0;
    while (checked < 200) {
      const std::uint32_t v = vox(rng);
      const Vec3 p = s.grid.center(s.grid.index_from_linear(v));
      double truth = 1e9;
      for (std::size_t i = 0; i < fns.size(); ++i) truth = std::min(truth, fns[i](poses.at(c, i).inverse() * p));
      if (truth > cap + 0.1) continue;
      ++checked;
      ASSERT_NEAR(std::min<double>(b.field(c)[v], cap), std::min(truth, cap), budget) << "c=" << c << " v=" << v;
    }
  }
}

TEST(Voxelize, Examples) {
  const EnvGrid g = EnvGrid::cubic(1.0, 0.1);
  const ObstacleVoxelSet empty = voxelize_pointcloud(std::vector<Vec3>{}, g);
  EXPECT_EQ(empty.size(), 0u);
  const ObstacleVoxelSet one = voxelize_pointcloud(std::vector<Vec3>(1000, Vec3(0.31, -0.2, 0.05)), g);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one.occupied[0], g.linear_index(voxel_index_of(Vec3(0.31, -0.2, 0.05), g)));
  EXPECT_EQ(one.source_points, 1000u);
  const ObstacleVoxelSet dropped = voxelize_pointcloud(std::vector<Vec3>{Vec3(2, 0, 0), Vec3(0, 0, 0)}, g);
  EXPECT_EQ(dropped.size(), 1u);
  EXPECT_EQ(dropped.dropped_points, 1u);
}

TEST(Voxelize, SortedUniqueInRange) {
  const EnvGrid g = EnvGrid::cubic(1.0, 0.1);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1.2, 1.2);
  std::vector<Vec3> pts(5000);
  for (auto& p : pts) p = Vec3(u(rng), u(rng), u(rng));
  const ObstacleVoxelSet s = voxelize_pointcloud(pts, g);
  EXPECT_TRUE(std::is_sorted(s.occupied.begin(), s.occupied.end()));
  EXPECT_EQ(std::adjacent_find(s.occupied.begin(), s.occupied.end()), s.occupied.end());
  for (auto v : s.occupied) EXPECT_LT(v, g.voxel_count());
  EXPECT_EQ(s.source_points, 5000u);
}

TEST(Voxelize, OccupancyStatistics) {
  const EnvGrid g = EnvGrid::cubic(1.0, 0.1);
  const double V = static_cast<double>(g.voxel_count());
  const int n = 100000;
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<Vec3f> pts(n);
  for (auto& p : pts) p = Vec3(u(rng), u(rng), u(rng)).cast<float>();
  const double fraction = static_cast<double>(voxelize_pointcloud(pts, g).size()) / V;
  const double expect = 1.0 - std::pow(1.0 - 1.0 / V, n);
  EXPECT_NEAR(fraction, expect, 0.02 * expect);
}

TEST(Query, EmptyObstaclesGiveDFar) {
  const EnvGrid g = EnvGrid::cubic(0.4, 0.1);
  RobotSdfBatch b(g, 3, 0.25);
  const auto d = query_min_distances(b, voxelize_pointcloud(std::vector<Vec3>{}, g));
  for (float x : d) EXPECT_EQ(x, 0.25f);
}

TEST(Query, GridMismatch) {
  RobotSdfBatch b(EnvGrid::cubic(0.4, 0.1), 1, 0.25);
  EXPECT_THROW(query_min_distances(b, voxelize_pointcloud(std::vector<Vec3>{}, EnvGrid::cubic(0.4, 0.2))), GridMismatch);
}

TEST(Query, ObstacleInsideLinkIsNegative) {
  ArmScene s;
  ConfigBatch cb;
  cb.q.resize(2, 2);
  cb.q << 0.0, 0.0, 0.0, 1.5;
  const LinkPoseBatch poses = forward_kinematics_batch(s.model, cb);
  const RobotSdfBatch b = build_robot_sdfs(std::span<const LinkSdf>(s.sdfs), poses, s.grid, ExactGridTransform(s.window));
  // The forearm capsule points straight up in configuration 0 and is bent
  // away in configuration 1.
  const Vec3 inside = poses.at(0, 2) * Vec3(0, 0, 0.2);
  const ObstacleVoxelSet obs = voxelize_pointcloud(std::vector<Vec3>{inside}, s.grid);
  const auto d = query_min_distances(b, obs);
  EXPECT_LT(d[0], 0.0f);
  EXPECT_GT(d[1], 0.0f);
}

TEST(Query, MatchesBruteForceOverVoxels) {
  const EnvGrid g = EnvGrid::cubic(0.4, 0.1);
  std::mt19937_64 rng(9);
  std::vector<std::vector<SdfSampleField>> fields(5);
  for (auto& per : fields)
    for (int k = 0; k < 3; ++k) per.push_back(random_field(g, rng, 0.3f));
  const RobotSdfBatch b = assemble_robot_sdfs(fields, g, 0.3);
  const ObstacleVoxelSet obs = random_obstacles(g, 40, rng);
  QueryStats stats;
  const auto d = query_min_distances(b, obs, &stats);
  EXPECT_EQ(stats.gathers, 5u * 40u);
  EXPECT_EQ(stats.pose_arithmetic, 0u);
  const Eigen::MatrixXf per_link = per_link_min_distances(fields, obs, 0.3);
  for (std::size_t c = 0; c < 5; ++c) {
    const auto ref = scatter_reference(fields[c], g, 0.3f);
    float m = 0.3f;
    for (auto v : obs.occupied) m = std::min(m, ref[v]);
    EXPECT_EQ(d[c], m);
    EXPECT_EQ(per_link.row(static_cast<Eigen::Index>(c)).minCoeff(), m);
  }
}

TEST(Query, SupersetMonotonicityAndPermutationInvariance) {
  const EnvGrid g = EnvGrid::cubic(0.4, 0.1);
  std::mt19937_64 rng(10);
  std::vector<std::vector<SdfSampleField>> fields(4);
  for (auto& per : fields)
    for (int k = 0; k < 2; ++k) per.push_back(random_field(g, rng, 0.3f));
  const RobotSdfBatch b = assemble_robot_sdfs(fields, g, 0.3);
  std::uniform_real_distribution<double> u(-0.4, 0.399);
  for (int trial = 0; trial < 10000; ++trial) {
    std::vector<Vec3> a(1 + rng() % 10);
    for (auto& p : a) p = Vec3(u(rng), u(rng), u(rng));
    std::vector<Vec3> sup = a;
    for (std::size_t extra = rng() % 5; extra > 0; --extra) sup.emplace_back(u(rng), u(rng), u(rng));
    std::shuffle(sup.begin(), sup.end(), rng);
    const auto da = query_min_distances(b, voxelize_pointcloud(a, g));
    const auto ds = query_min_distances(b, voxelize_pointcloud(sup, g));
    std::vector<Vec3> perm = a;
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto dp = query_min_distances(b, voxelize_pointcloud(perm, g));
    for (std::size_t c = 0; c < 4; ++c) {
      ASSERT_GE(da[c], ds[c]);
      ASSERT_EQ(da[c], dp[c]);
    }
  }
}

TEST(SphereBaseline, Examples) {
  const EnvGrid g = EnvGrid::cubic(1.0, 0.1);
  SphereRobotModel m;
  m.links = {{LinkSphere{Vec3::Zero(), 0.1}}};
  LinkPoseBatch poses;
  poses.configs = 1;
  poses.links = 1;
  poses.transforms = {Pose{}};
  const ObstacleVoxelSet far = voxelize_pointcloud(std::vector<Vec3>{Vec3(0.3, 0.0, 0.0)}, g);
  // The voxel containing (0.3, 0, 0) is centered at (0.35, 0.05, 0.05).
  const Vec3 c = g.center(g.index_from_linear(far.occupied[0]));
  EXPECT_NEAR(sphere_baseline_distances(m, poses, far, g)[0], c.norm() - 0.1, 1e-6);

  poses.transforms = {Pose{Eigen::Matrix3d::Identity(), Vec3(-0.05, 0.05, 0.05)}};
  const ObstacleVoxelSet exact = voxelize_pointcloud(std::vector<Vec3>{Vec3(0.26, 0.01, 0.01)}, g);
  EXPECT_NEAR(sphere_baseline_distances(m, poses, exact, g)[0], 0.2, 1e-6);

  const ObstacleVoxelSet inside = voxelize_pointcloud(std::vector<Vec3>{Vec3(-0.04, 0.04, 0.04)}, g);
  EXPECT_LT(sphere_baseline_distances(m, poses, inside, g)[0], 0.0f);
}

TEST(SphereBaseline, ArithmeticCountAndClamp) {
  ArmScene s;
  const SphereRobotModel spheres = make_sphere_model(s.model);
  std::mt19937_64 rng(11);
  const ConfigBatch cb = random_configs(s.model, 7, rng);
  const LinkPoseBatch poses = forward_kinematics_batch(s.model, cb);
  const ObstacleVoxelSet obs = random_obstacles(s.grid, 33, rng);
  QueryStats stats;
  const auto d = sphere_baseline_distances(spheres, poses, obs, s.grid, 0.6, &stats);
  EXPECT_EQ(stats.pose_arithmetic, 7u * spheres.sphere_count() * 33u);
  for (float x : d) EXPECT_LE(x, 0.6f);
}

TEST(SphereModel, GeneratedSpheresCoverPrimitives) {
  ArmScene s;
  const SphereRobotModel spheres = make_sphere_model(s.model);
  ASSERT_EQ(spheres.links.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_LE(sphere_cover_excess(s.model.links()[i], spheres.links[i], 16), 1e-9);
    for (const auto& sp : spheres.links[i]) EXPECT_GT(sp.radius, 0.0);
  }
}

TEST(SphereModel, RejectsNonCoveringExplicitSpheres) {
  const auto doc = nlohmann::json::parse(R"({"links": [{"name": "l", "geometry": {"type": "box", "half_extents": [0.1, 0.1, 0.1]},
      "spheres": [{"center": [0, 0, 0], "radius": 0.1}]}]})");
  EXPECT_THROW(make_sphere_model(parse_robot_model(doc)), ValidationError);
}

TEST(SphereModel, BaselineIsConservative) {
  ArmScene s;
  const SphereRobotModel spheres = make_sphere_model(s.model);
  std::mt19937_64 rng(12);
  const double budget = std::sqrt(3.0) * 0.02 + std::sqrt(3.0) * 0.01;
  for (int scene = 0; scene < 5; ++scene) {
    const ConfigBatch cb = random_configs(s.model, 20, rng);
    const LinkPoseBatch poses = forward_kinematics_batch(s.model, cb);
    const RobotSdfBatch b = build_robot_sdfs(std::span<const LinkSdf>(s.sdfs), poses, s.grid, ExactGridTransform(s.window));
    const ObstacleVoxelSet obs = random_obstacles(s.grid, 300, rng);
    const auto sdf = query_min_distances(b, obs);
    const auto sph = sphere_baseline_distances(spheres, poses, obs, s.grid, b.d_far());
    for (std::size_t c = 0; c < 20; ++c) ASSERT_LE(sph[c], sdf[c] + budget);
  }
}

TEST(Streaming, StaticCloudIsDeterministic) {
  ArmScene s;
  std::mt19937_64 rng(13);
  const ConfigBatch cb = random_configs(s.model, 10, rng);
  const RobotSdfBatch b = build_robot_sdfs(std::span<const LinkSdf>(s.sdfs), forward_kinematics_batch(s.model, cb), s.grid,
                                           ExactGridTransform(s.window));
  std::vector<Vec3f> pts(200);
  std::uniform_real_distribution<float> u(-0.8f, 0.8f);
  for (auto& p : pts) p = Vec3f(u(rng), u(rng), u(rng));
  std::vector<CloudFrame> frames;
  for (int t = 0; t < 5; ++t) frames.push_back({t * 33, pts});
  frames.push_back({200, {}});
  const auto out = distances_along_trajectory(b, frames);
  ASSERT_EQ(out.size(), 6u);
  for (int t = 1; t < 5; ++t) EXPECT_EQ(out[static_cast<std::size_t>(t)].distances, out[0].distances);
  EXPECT_EQ(out[2].timestamp_ms, 66);
  for (float d : out[5].distances) EXPECT_EQ(d, static_cast<float>(b.d_far()));
}

TEST(Streaming, ApproachingObstacleIsNonIncreasing) {
  ArmScene s;
  ConfigBatch cb;
  cb.q.setZero(3, 2);
  cb.q(1, 0) = 1.0;
  cb.q(2, 1) = -1.0;
  const RobotSdfBatch b = build_robot_sdfs(std::span<const LinkSdf>(s.sdfs), forward_kinematics_batch(s.model, cb), s.grid,
                                           ExactGridTransform(s.window));
  // A small cluster moves along x toward the upright arm.
  std::vector<CloudFrame> frames;
  for (int t = 0; t <= 20; ++t) {
    const float x = 0.9f - 0.035f * static_cast<float>(t);
    std::vector<Vec3f> pts;
    for (int k = 0; k < 8; ++k) pts.emplace_back(x + 0.01f * (k & 1), 0.01f * ((k >> 1) & 1), 0.3f + 0.01f * (k >> 2));
    frames.push_back({t, pts});
  }
  const auto out = distances_along_trajectory(b, frames);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t t = 1; t < out.size(); ++t) ASSERT_LE(out[t].distances[c], out[t - 1].distances[c] + 1e-6f);
  }
  EXPECT_LT(out.back().distances[0], out.front().distances[0]);
}

TEST(CloudIo, FrameAndManifestRoundTrip) {
  const auto dir = test::scratch_dir("clouds");
  const std::vector<Vec3f> pts{Vec3f(0.1f, 0.2f, 0.3f), Vec3f(-1, 0, 2)};
  save_cloud_frame(dir / "a.bin", pts);
  EXPECT_EQ(load_cloud_frame(dir / "a.bin"), pts);
  std::ofstream(dir / "m.txt") << "# ts frame\n0 a.bin\n33,a.bin\n\n";
  const auto m = load_manifest(dir / "m.txt");
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m[1].timestamp_ms, 33);
  EXPECT_EQ(load_cloud_frame(m[1].frame), pts);
  std::ofstream(dir / "bad.txt") << "zero a.bin\n";
  EXPECT_THROW(load_manifest(dir / "bad.txt"), FormatError);
  std::ofstream(dir / "short.bin") << "abc";
  EXPECT_THROW(load_cloud_frame(dir / "short.bin"), FormatError);
}

TEST(CloudIo, DistanceCsv) {
  std::ostringstream os;
  write_distance_csv_header(os, 3);
  write_distance_csv_row(os, {12, {0.5f, -0.25f, 1.0f}});
  EXPECT_EQ(os.str(), "timestamp,d_0,d_1,d_2\n12,0.500000,-0.250000,1.000000\n");
}
