#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "lsdf/core_grids.hpp"
#include "test_util.hpp"

using namespace lsdf;

TEST(EnvGrid, DimsAndCenters) {
  const EnvGrid g = EnvGrid::cubic(1.0, 0.1);
  EXPECT_EQ(g.dims(), Index3(20, 20, 20));
  EXPECT_EQ(g.voxel_count(), 8000u);
  EXPECT_NEAR(g.center(0, 0), -0.95, 1e-12);
  EXPECT_NEAR(g.center(19, 2), 0.95, 1e-12);
}

TEST(EnvGrid, AnisotropicDims) {
  const EnvGrid g(Vec3(1.0, 0.5, 0.2), Vec3(0.1, 0.05, 0.04));
  EXPECT_EQ(g.dims(), Index3(20, 20, 10));
  EXPECT_EQ(g.voxel_count(), 4000u);
}

TEST(EnvGrid, RejectsIndivisibleExtent) {
  EXPECT_THROW(EnvGrid::cubic(1.0, 0.3), ValidationError);
  EXPECT_THROW(EnvGrid::cubic(1.0, 0.0), ValidationError);
  EXPECT_THROW(EnvGrid::cubic(-1.0, 0.1), ValidationError);
}

TEST(EnvGrid, LinearIndexIsXFastest) {
  const EnvGrid g(Vec3(0.2, 0.3, 0.4), Vec3(0.1, 0.1, 0.1));
  EXPECT_EQ(g.linear_index(Index3(1, 0, 0)), 1u);
  EXPECT_EQ(g.linear_index(Index3(0, 1, 0)), 4u);
  EXPECT_EQ(g.linear_index(Index3(0, 0, 1)), 24u);
  for (std::size_t v = 0; v < g.voxel_count(); ++v) EXPECT_EQ(g.linear_index(g.index_from_linear(v)), v);
}

TEST(VoxelIndexOf, VoxelCenter) {
  const EnvGrid g = EnvGrid::cubic(1.0, 0.1);
  const Index3 j = voxel_index_of(Vec3(0.05, 0.05, 0.05), g);
  EXPECT_EQ(j, Index3(10, 10, 10));
  EXPECT_TRUE(g.center(j).isApprox(Vec3(0.05, 0.05, 0.05), 1e-12));
}

TEST(VoxelIndexOf, FaceGoesToLowerIndexSide) {
  const EnvGrid g = EnvGrid::cubic(1.0, 0.1);
  EXPECT_EQ(voxel_index_of(Vec3(0, 0, 0), g), Index3(10, 10, 10));
}

TEST(VoxelIndexOf, OutOfBounds) {
  const EnvGrid g = EnvGrid::cubic(1.0, 0.1);
  EXPECT_THROW(voxel_index_of(Vec3(1.2, 0, 0), g), OutOfBounds);
  EXPECT_THROW(voxel_index_of(Vec3(1.0, 0, 0), g), OutOfBounds);
  EXPECT_THROW(voxel_index_of(Vec3(0, -1.0001, 0), g), OutOfBounds);
  EXPECT_EQ(voxel_index_of(Vec3(-1.0, 0, 0), g).x(), 0);
}

TEST(VoxelIndexOf, RoundTripEveryCenter) {
  const EnvGrid g(Vec3(1.0, 0.6, 0.4), Vec3(0.1, 0.04, 0.05));
  for (std::size_t v = 0; v < g.voxel_count(); ++v) {
    const Index3 j = g.index_from_linear(v);
    ASSERT_EQ(voxel_index_of(g.center(j), g), j);
  }
}

TEST(VoxelIndexOf, NearestCenterForRandomPoints) {
  const EnvGrid g = EnvGrid::cubic(1.0, 0.04);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 10000; ++i) {
    const Vec3 p(u(rng), u(rng), u(rng));
    const Vec3 d = p - g.center(voxel_index_of(p, g));
    EXPECT_LE(d.cwiseAbs().maxCoeff(), 0.02 + 1e-12);
  }
}

namespace {

// Link grid whose values are an affine function of the cell center, so
// trilinear interpolation must reproduce the function exactly.
LinkSdf affine_sdf(const Vec3& slope, double offset) {
  LinkSdf sdf(0, Vec3f::Constant(0.3f), Vec3f::Constant(0.05f));
  for (std::size_t v = 0; v < sdf.cell_count(); ++v) {
    const Index3 i = sdf.index_from_linear(v);
    sdf.values()[v] = static_cast<float>(slope.dot(sdf.center(i)) + offset);
  }
  return sdf;
}

LinkSdf random_sdf(std::uint64_t seed) {
  LinkSdf sdf(0, Vec3f::Constant(0.2f), Vec3f::Constant(0.05f));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-0.1f, 0.3f);
  for (auto& v : sdf.values()) v = u(rng);
  return sdf;
}

}  // namespace

TEST(LinkSdf, GeometryAndDFar) {
  const LinkSdf sdf(2, Vec3f(0.6f, 0.4f, 0.5f), Vec3f(0.01f, 0.01f, 0.01f));
  EXPECT_EQ(sdf.dims(), Index3(120, 80, 100));
  EXPECT_FLOAT_EQ(static_cast<float>(sdf.d_far()), 0.4f);
  EXPECT_NEAR(sdf.center(Index3(0, 0, 0)).x(), -0.595, 1e-6);
}

TEST(TrilinearSample, CellCenterIdentity) {
  const LinkSdf sdf = random_sdf(1);
  for (std::size_t v = 0; v < sdf.cell_count(); ++v) {
    const Index3 i = sdf.index_from_linear(v);
    ASSERT_NEAR(trilinear_sample(sdf, sdf.center(i)), sdf.at(i), 1e-6);
  }
}

TEST(TrilinearSample, MidpointOfTwoCells) {
  LinkSdf sdf(0, Vec3f::Constant(0.1f), Vec3f::Constant(0.05f));
  std::fill(sdf.values().begin(), sdf.values().end(), 0.0f);
  for (int y = 0; y < 4; ++y)
    for (int z = 0; z < 4; ++z) {
      sdf.at(Index3(1, y, z)) = 0.10f;
      sdf.at(Index3(2, y, z)) = 0.20f;
    }
  const Vec3 mid = 0.5 * (sdf.center(Index3(1, 1, 1)) + sdf.center(Index3(2, 1, 1)));
  EXPECT_NEAR(trilinear_sample(sdf, mid), 0.15, 1e-6);
}

TEST(TrilinearSample, OutsideReturnsDFar) {
  const LinkSdf sdf = random_sdf(2);
  EXPECT_EQ(trilinear_sample(sdf, Vec3(10 * 0.2, 0, 0)), sdf.d_far());
  EXPECT_EQ(trilinear_sample(sdf, Vec3(0, -0.2001, 0)), sdf.d_far());
}

TEST(TrilinearSample, ReproducesAffineFields) {
  const Vec3 slope(0.3, -0.5, 0.8);
  const LinkSdf sdf = affine_sdf(slope, 0.05);
  std::mt19937_64 rng(4);
  // Inside the cell-center hull interpolation of an affine field is exact.
  std::uniform_real_distribution<double> u(-0.275, 0.275);
  for (int i = 0; i < 2000; ++i) {
    const Vec3 p(u(rng), u(rng), u(rng));
    ASSERT_NEAR(trilinear_sample(sdf, p), slope.dot(p) + 0.05, 1e-5);
  }
}

TEST(TrilinearSample, BoundedByNeighbourCells) {
  const LinkSdf sdf = random_sdf(5);
  std::mt19937_64 rng(6);
  const double lo = -0.2 + 0.025, hi = 0.2 - 0.025;
  std::uniform_real_distribution<double> u(lo, hi);
  for (int i = 0; i < 10000; ++i) {
    const Vec3 p(u(rng), u(rng), u(rng));
    Index3 base;
    for (int a = 0; a < 3; ++a) base[a] = std::min(static_cast<int>(std::floor((p[a] + 0.2) / 0.05 - 0.5)), sdf.dims()[a] - 2);
    float mn = 1e9f, mx = -1e9f;
    for (int c = 0; c < 8; ++c) {
      const float v = sdf.at(base + Index3(c & 1, (c >> 1) & 1, (c >> 2) & 1));
      mn = std::min(mn, v);
      mx = std::max(mx, v);
    }
    const double s = trilinear_sample(sdf, p);
    ASSERT_GE(s, mn - 1e-6);
    ASSERT_LE(s, mx + 1e-6);
  }
}

TEST(TrilinearSample, LipschitzContinuity) {
  const LinkSdf sdf = random_sdf(7);
  // Max adjacent-cell difference over spacing, per axis; the trilinear
  // interpolant's gradient norm is bounded by sqrt(3) times it.
  double max_diff = 0.0;
  for (std::size_t v = 0; v < sdf.cell_count(); ++v) {
    const Index3 i = sdf.index_from_linear(v);
    for (int a = 0; a < 3; ++a) {
      Index3 n = i;
      ++n[a];
      if (n[a] < sdf.dims()[a]) max_diff = std::max(max_diff, std::abs(static_cast<double>(sdf.at(n) - sdf.at(i))));
    }
  }
  const double lip = std::sqrt(3.0) * max_diff / 0.05;
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-0.19, 0.19), d(-1.0, 1.0);
  const double eps = 1e-3;
  for (int i = 0; i < 10000; ++i) {
    const Vec3 p(u(rng), u(rng), u(rng));
    Vec3 delta(d(rng), d(rng), d(rng));
    delta *= eps * d(rng) / delta.norm();
    const Vec3 q = (p + delta).cwiseMax(Vec3::Constant(-0.2)).cwiseMin(Vec3::Constant(0.2));
    ASSERT_LE(std::abs(trilinear_sample(sdf, q) - trilinear_sample(sdf, p)), lip * (q - p).norm() + 1e-6);
  }
}

TEST(LinkSdfIo, RoundTripIsBitExact) {
  const LinkSdf sdf = random_sdf(9);
  std::stringstream ss;
  write_link_sdf(ss, sdf);
  const LinkSdf back = read_link_sdf(ss);
  EXPECT_EQ(back, sdf);
  EXPECT_EQ(back.link_id(), sdf.link_id());
}

TEST(LinkSdfIo, HeaderLayout) {
  LinkSdf sdf(3, Vec3f(0.1f, 0.1f, 0.05f), Vec3f(0.05f, 0.05f, 0.05f));
  std::stringstream ss;
  write_link_sdf(ss, sdf);
  const std::string bytes = ss.str();
  ASSERT_EQ(bytes.size(), 4 + 4 + 12 + 12 + 12 + 4 + 4 * sdf.cell_count());
  EXPECT_EQ(bytes.substr(0, 4), "LSDF");
  EXPECT_EQ(test::le_u32(bytes, 4), kLsdfVersion);
  EXPECT_EQ(test::le_u32(bytes, 8), 4u);
  EXPECT_EQ(test::le_u32(bytes, 16), 2u);
  EXPECT_EQ(test::le_f32(bytes, 20), 0.1f);
  EXPECT_EQ(test::le_u32(bytes, 44), 3u);
}

TEST(LinkSdfIo, RejectsBadInput) {
  std::stringstream bad_magic("LSDX0000");
  EXPECT_THROW(read_link_sdf(bad_magic), FormatError);

  const LinkSdf sdf = random_sdf(10);
  std::stringstream ss;
  write_link_sdf(ss, sdf);
  std::string truncated = ss.str();
  truncated.resize(truncated.size() - 7);
  std::stringstream ts(truncated);
  EXPECT_THROW(read_link_sdf(ts), FormatError);

  std::string wrong_version = ss.str();
  wrong_version[4] = 9;
  std::stringstream vs(wrong_version);
  EXPECT_THROW(read_link_sdf(vs), FormatError);
}
