#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "test_util.hpp"
#include "windfc/graph.hpp"

using namespace windfc;

namespace {

FarmLayout line_layout(std::vector<double> xs) {
  std::vector<std::string> ids;
  std::vector<Point> pts;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    ids.push_back("t" + std::to_string(i));
    pts.push_back({xs[i], 0.0});
  }
  return FarmLayout(ids, pts);
}

FarmLayout random_layout(std::size_t n, std::mt19937_64& rng, double extent = 5000.0) {
  std::uniform_real_distribution<double> u(0.0, extent);
  std::vector<std::string> ids;
  std::vector<Point> pts;
  for (std::size_t i = 0; i < n; ++i) {
    ids.push_back("w" + std::to_string(i));
    pts.push_back({u(rng), u(rng)});
  }
  return FarmLayout(ids, pts);
}

// Full ordering of every turbine by (self first, distance, index).
std::vector<std::vector<std::size_t>> brute_force_order(const FarmLayout& layout) {
  const std::size_t n = layout.size();
  std::vector<std::vector<std::size_t>> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::tuple<int, double, std::size_t>> keyed;
    for (std::size_t j = 0; j < n; ++j) {
      const double dx = layout.coord(i).x - layout.coord(j).x, dy = layout.coord(i).y - layout.coord(j).y;
      keyed.emplace_back(j == i ? 0 : 1, std::sqrt(dx * dx + dy * dy), j);
    }
    std::sort(keyed.begin(), keyed.end());
    for (const auto& kv : keyed) out[i].push_back(std::get<2>(kv));
  }
  return out;
}

}  // namespace

TEST(BuildKnn, CollinearExample) {
  const auto idx = build_knn(line_layout({0, 1, 3}), 2);
  EXPECT_EQ(idx.of(0), (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(idx.of(1), (std::vector<std::size_t>{1, 0}));
  EXPECT_EQ(idx.of(2), (std::vector<std::size_t>{2, 1}));
}

TEST(BuildKnn, KOneIsSelfOnly) {
  std::mt19937_64 rng(1);
  const auto layout = random_layout(12, rng);
  const auto idx = build_knn(layout, 1);
  for (std::size_t i = 0; i < layout.size(); ++i) EXPECT_EQ(idx.of(i), std::vector<std::size_t>{i});
}

TEST(BuildKnn, MatchesBruteForceOracle) {
  std::mt19937_64 rng(2024);
  const auto layout = random_layout(50, rng);
  const auto idx = build_knn(layout, 6);
  const auto oracle = brute_force_order(layout);
  for (std::size_t i = 0; i < 50; ++i)
    EXPECT_EQ(idx.of(i), std::vector<std::size_t>(oracle[i].begin(), oracle[i].begin() + 6)) << "turbine " << i;
}

TEST(BuildKnn, EveryKMatchesOracleOnSmallLayout) {
  std::mt19937_64 rng(9);
  const auto layout = random_layout(17, rng);
  const auto oracle = brute_force_order(layout);
  for (std::size_t k = 1; k <= 17; ++k) {
    const auto idx = build_knn(layout, k);
    for (std::size_t i = 0; i < 17; ++i)
      ASSERT_EQ(idx.of(i), std::vector<std::size_t>(oracle[i].begin(), oracle[i].begin() + k));
  }
}

TEST(BuildKnn, TiesBreakByIndexAndSelfLeads) {
  // Turbines 0, 1 and 2 share a coordinate; 3 and 4 are equidistant from them.
  const FarmLayout layout({"a", "b", "c", "d", "e"}, {{0, 0}, {0, 0}, {0, 0}, {1, 0}, {-1, 0}});
  const auto idx = build_knn(layout, 5);
  EXPECT_EQ(idx.of(0), (std::vector<std::size_t>{0, 1, 2, 3, 4}));
  EXPECT_EQ(idx.of(2), (std::vector<std::size_t>{2, 0, 1, 3, 4}));
  EXPECT_EQ(idx.of(3), (std::vector<std::size_t>{3, 0, 1, 2, 4}));
}

TEST(BuildKnn, TranslationInvariant) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> u(0, 3000);
  std::vector<std::string> ids;
  std::vector<Point> pts, shifted;
  for (int i = 0; i < 40; ++i) {
    ids.push_back("p" + std::to_string(i));
    pts.push_back({double(u(rng)), double(u(rng))});
    shifted.push_back({pts.back().x + 1024.0, pts.back().y - 4096.0});
  }
  const auto a = build_knn(FarmLayout(ids, pts), 7), b = build_knn(FarmLayout(ids, shifted), 7);
  EXPECT_EQ(a.neighbors, b.neighbors);
}

TEST(BuildKnn, DistancesAreMonotone) {
  std::mt19937_64 rng(5);
  const auto layout = random_layout(60, rng);
  const auto idx = build_knn(layout, 10);
  for (std::size_t i = 0; i < layout.size(); ++i) {
    EXPECT_EQ(idx.distances[i][0], 0.0);
    for (std::size_t r = 1; r < 10; ++r) EXPECT_LE(idx.distances[i][r - 1], idx.distances[i][r]);
  }
}

TEST(BuildKnn, RejectsBadK) {
  const auto layout = line_layout({0, 1, 2});
  EXPECT_THROW(build_knn(layout, 0), ConfigError);
  EXPECT_THROW(build_knn(layout, 4), ConfigError);
}

TEST(FarmLayout, RejectsBadInput) {
  EXPECT_THROW(FarmLayout({}, {}), DataError);
  EXPECT_THROW(FarmLayout({"a", "a"}, {{0, 0}, {1, 1}}), DataError);
  EXPECT_THROW(FarmLayout({"a", "b"}, {{0, 0}}), DataError);
  EXPECT_THROW(FarmLayout({"a"}, {{NAN, 0}}), DataError);
  EXPECT_THROW(line_layout({0, 1}).index_of("zz"), DataError);
}

TEST(FarmLayout, CsvRoundTrip) {
  std::mt19937_64 rng(6);
  const auto layout = random_layout(8, rng);
  windfc::testing::TempDir dir("graph");
  {
    std::ofstream out(dir / "layout.csv");
    write_layout(out, layout);
  }
  const auto back = read_layout(dir / "layout.csv");
  EXPECT_EQ(back.ids(), layout.ids());
  EXPECT_EQ(back.digest(), layout.digest());
}

TEST(FarmLayout, DigestChangesWithCoordinates) {
  const auto a = line_layout({0, 1, 3}), b = line_layout({0, 1, 4});
  EXPECT_NE(a.digest(), b.digest());
  EXPECT_NE(build_knn(a, 2).digest(a), build_knn(b, 2).digest(b));
}

TEST(ProjectLonLat, PreservesSmallDistances) {
  // 0.01 degree of latitude is about 1112 m.
  const FarmLayout ll({"a", "b"}, {{-97.0, 35.0}, {-97.0, 35.01}});
  const auto p = project_lonlat(ll);
  EXPECT_NEAR(distance(p.coord(0), p.coord(1)), 1111.95, 0.5);
}

TEST(WriteNeighbors, OneRowPerRank) {
  const auto layout = line_layout({0, 1, 3});
  std::ostringstream os;
  write_neighbors(os, layout, build_knn(layout, 2));
  EXPECT_EQ(os.str(), "turbine_id,rank,neighbor_id,distance\nt0,0,t0,0\nt0,1,t1,1\nt1,0,t1,0\nt1,1,t0,1\n"
                      "t2,0,t2,0\nt2,1,t1,2\n");
}
