#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <random>
#include <vector>

#include "qhd/point_cloud.hpp"

using namespace qhd;

namespace {

/// Brute-force oracle: full distance sort with the (distance, index)
/// tie-break.
std::vector<int> brute_force_knn(const std::vector<Vec2>& pts, const Vec2& target, int k) {
    std::vector<std::pair<double, int>> all;
    for (std::size_t i = 0; i < pts.size(); ++i)
        all.emplace_back(norm2(pts[i] - target), static_cast<int>(i));
    std::sort(all.begin(), all.end());
    std::vector<int> idx(k);
    for (int i = 0; i < k; ++i) idx[i] = all[static_cast<std::size_t>(i)].second;
    return idx;
}

}  // namespace

TEST_CASE("query at a cloud point returns that point first") {
    std::vector<Vec2> pts{{0.0, 0.0}, {1.0, 0.5}, {-2.0, 1.0}, {0.3, -0.4}, {2.0, 2.0},
                          {0.9, 0.1}, {1.4, -1.2}, {-0.5, 0.5}, {0.1, 0.9}, {-1.0, -1.0},
                          {0.6, 0.6}, {1.1, 1.2}};
    PointCloud cloud(pts);
    const auto nn = cloud.k_nearest(pts[3], 3);
    CHECK(nn[0].index == 3);
    CHECK(nn[0].dist == 0.0);
}

TEST_CASE("exact ties break by ascending index") {
    // four points at unit distance on the axes
    std::vector<Vec2> pts{{1.0, 0.0}, {0.0, 1.0}, {-1.0, 0.0}, {0.0, -1.0}};
    PointCloud cloud(pts);
    const auto nn = cloud.k_nearest({0.0, 0.0}, 2);
    CHECK(nn[0].index == 0);
    CHECK(nn[1].index == 1);
}

TEST_CASE("cell-center query on a uniform grid returns the four corners") {
    std::vector<Vec2> pts;
    for (int j = 0; j < 40; ++j)
        for (int i = 0; i < 40; ++i) pts.push_back({static_cast<double>(i), static_cast<double>(j)});
    PointCloud cloud(pts);
    const Vec2 center{10.5, 17.5};
    const auto nn = cloud.k_nearest(center, 4);
    const auto expected = brute_force_knn(pts, center, 4);
    for (int i = 0; i < 4; ++i) CHECK(nn[static_cast<std::size_t>(i)].index == expected[static_cast<std::size_t>(i)]);
}

TEST_CASE("kd-tree matches the brute-force oracle on random and gridded clouds") {
    std::mt19937 rng(2024);
    std::uniform_real_distribution<double> coord(-4.0, 4.0);

    SECTION("random cloud") {
        std::vector<Vec2> pts(500);
        for (auto& p : pts) p = {coord(rng), coord(rng)};
        PointCloud cloud(pts);
        for (int q = 0; q < 50; ++q) {
            const Vec2 target{coord(rng), coord(rng)};
            const auto nn = cloud.k_nearest(target, 35);
            const auto expected = brute_force_knn(pts, target, 35);
            REQUIRE(nn.size() == 35);
            for (int i = 0; i < 35; ++i) CHECK(nn[static_cast<std::size_t>(i)].index == expected[static_cast<std::size_t>(i)]);
        }
    }

    SECTION("grid cloud with massive distance ties") {
        std::vector<Vec2> pts;
        for (int j = -10; j <= 10; ++j)
            for (int i = -10; i <= 10; ++i) pts.push_back({0.25 * i, 0.25 * j});
        PointCloud cloud(pts);
        std::uniform_int_distribution<int> pick(0, static_cast<int>(pts.size()) - 1);
        for (int q = 0; q < 40; ++q) {
            const Vec2 target = pts[static_cast<std::size_t>(pick(rng))];
            const auto nn = cloud.k_nearest(target, 30);
            const auto expected = brute_force_knn(pts, target, 30);
            for (int i = 0; i < 30; ++i) CHECK(nn[static_cast<std::size_t>(i)].index == expected[static_cast<std::size_t>(i)]);
        }
    }
}

TEST_CASE("construction rejects duplicate points") {
    std::vector<Vec2> pts{{0.0, 0.0}, {1.0, 1.0}, {1.0 + 5e-11, 1.0}};
    CHECK_THROWS_AS(PointCloud(pts), ConfigError);
}

TEST_CASE("construction rejects non-finite points") {
    std::vector<Vec2> pts{{0.0, 0.0}, {std::nan(""), 1.0}};
    CHECK_THROWS_AS(PointCloud(pts), ConfigError);
}

TEST_CASE("oversized queries are sizing errors") {
    std::vector<Vec2> pts{{0.0, 0.0}, {1.0, 0.0}, {0.0, 1.0}};
    PointCloud cloud(pts);
    CHECK_THROWS_AS(cloud.k_nearest({0.0, 0.0}, 4), ConfigError);
    CHECK_THROWS_AS(cloud.k_nearest({0.0, 0.0}, 0), ConfigError);
}

TEST_CASE("bounding box covers all points") {
    std::vector<Vec2> pts{{-1.0, 2.0}, {3.0, -0.5}, {0.0, 0.0}, {2.0, 4.0}};
    PointCloud cloud(pts);
    const Rect b = cloud.bounding_box();
    CHECK(b.x_min == -1.0);
    CHECK(b.x_max == 3.0);
    CHECK(b.y_min == -0.5);
    CHECK(b.y_max == 4.0);
}
