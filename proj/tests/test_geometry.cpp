#include "doctest.h"
#include "oracles.hpp"
#include "support.hpp"

#include "sct/geometry.hpp"

#include <set>

using namespace sct;

TEST_CASE("index_tiles: single slide is unchanged") {
    std::vector<GridPoint> c{{0, 0}, {3, 1}, {2, 5}};
    std::vector<std::uint16_t> s{1, 1, 1};
    const auto a = index_tiles(c, s);
    CHECK(a.coords == c);
    CHECK(a.per_slide_offsets == std::vector<GridPoint>{{0, 0}});
}

TEST_CASE("index_tiles: cumulative offsets with a one-tile margin") {
    {
        std::vector<GridPoint> c{{0, 0}, {4, 6}, {1, 2}};
        std::vector<std::uint16_t> s{1, 1, 2};
        CHECK(index_tiles(c, s).coords[2] == GridPoint{6, 9});
    }
    {
        std::vector<GridPoint> c{{0, 0}, {10, 10}, {0, 0}, {2, 2}, {0, 0}};
        std::vector<std::uint16_t> s{1, 1, 2, 2, 3};
        const auto a = index_tiles(c, s);
        CHECK(a.per_slide_offsets[2] == GridPoint{14, 14});
        CHECK(a.coords[4] == GridPoint{14, 14});
        // Slide 2 occupies [11, 13]^2.
        CHECK(a.coords[3] == GridPoint{13, 13});
    }
}

TEST_CASE("index_tiles errors") {
    std::vector<GridPoint> c{{1, 1}, {1, 1}};
    std::vector<std::uint16_t> s{1, 1};
    CHECK_THROWS_AS(index_tiles(c, s), Error);
    std::vector<std::uint16_t> two{1, 2};
    CHECK_NOTHROW(index_tiles(c, two));
    std::vector<GridPoint> neg{{-1, 0}};
    std::vector<std::uint16_t> one{1};
    CHECK_THROWS_AS(index_tiles(neg, one), Error);
}

TEST_CASE("index_tiles property: no collisions across up to 6 slides") {
    Rng rng(77);
    for (int trial = 0; trial < 300; ++trial) {
        const int slides = static_cast<int>(rng.uniform_int(1, 6));
        std::vector<GridPoint> c;
        std::vector<std::uint16_t> s;
        for (int k = 1; k <= slides; ++k) {
            const int extent = static_cast<int>(rng.uniform_int(1, 12));
            const auto n = static_cast<std::size_t>(rng.uniform_int(1, std::min(30, extent * extent)));
            for (auto p : testing::random_coords(rng, n, extent)) {
                c.push_back(p);
                s.push_back(static_cast<std::uint16_t>(k));
            }
        }
        const auto a = index_tiles(c, s);
        std::set<std::pair<int, int>> seen;
        for (auto p : a.coords) seen.insert({p.x, p.y});
        CHECK(seen.size() == c.size());
        // Within-slide geometry preserved.
        for (std::size_t i = 0; i < c.size(); ++i) {
            const auto o = a.per_slide_offsets[s[i] - 1u];
            CHECK(a.coords[i] == GridPoint{c[i].x + o.x, c[i].y + o.y});
        }
    }
}

TEST_CASE("receptive fields: hand examples") {
    std::vector<GridPoint> c{{0, 0}, {1, 0}, {5, 5}};
    const auto k1 = build_receptive_fields(c, 1);
    for (std::size_t i = 0; i < c.size(); ++i) {
        CHECK(k1.at(i, 0) == static_cast<int>(i));
        CHECK(k1.live_count(i) == 1);
    }
    const auto rf = build_receptive_fields(c, 3);
    CHECK(rf.live_count(0) == 2);
    CHECK(rf.at(0, 4) == 0);
    CHECK(rf.at(0, 5) == 1);  // (dy, dx) = (0, +1)
    CHECK(rf.live_count(2) == 1);
    CHECK(rf.at(2, 4) == 2);
    CHECK_THROWS_AS(build_receptive_fields(c, 2), Error);

    std::vector<GridPoint> grid;
    for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 5; ++x) grid.push_back({x, y});
    const auto g = build_receptive_fields(grid, 3);
    CHECK(g.live_count(12) == 9);  // (2, 2)
    CHECK(g.live_count(0) == 4);
    CHECK(g.live_count(24) == 4);
    CHECK(g.live_count(2) == 6);
}

TEST_CASE("receptive fields match a brute-force neighbour scan") {
    Rng rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        const auto n = static_cast<std::size_t>(rng.uniform_int(1, trial < 10 ? 500 : 120));
        const int k = 2 * static_cast<int>(rng.uniform_int(0, 2)) + 1;
        const auto c = testing::random_coords(rng, n, static_cast<int>(rng.uniform_int(1, 40)) + static_cast<int>(std::sqrt(n)));
        const auto rf = build_receptive_fields(c, k);
        const auto ref = oracle::receptive_fields(c, k);
        REQUIRE(rf.size() == n);
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(rf.centers[i] == static_cast<int>(i));
            for (int s = 0; s < k * k; ++s) {
                CHECK(rf.at(i, s) == ref[i][static_cast<std::size_t>(s)]);
                CHECK(rf.mask(i, s) == (ref[i][static_cast<std::size_t>(s)] >= 0));
            }
        }
    }
}

TEST_CASE("cell partition: hand examples") {
    std::vector<GridPoint> c{{0, 0}, {1, 1}, {2, 2}, {3, 3}};
    const auto p = partition_cells(c, 3, 3);
    REQUIRE(p.cells.size() == 2);
    CHECK(p.cells[0].at == GridPoint{0, 0});
    CHECK(p.cells[0].members == std::vector<std::int32_t>{0, 1, 2});
    CHECK(p.cells[1].at == GridPoint{1, 1});
    CHECK(p.cells[1].members == std::vector<std::int32_t>{3});

    const auto id = partition_cells(c, 1, 1);
    REQUIRE(id.cells.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) CHECK(id.cells[i].members == std::vector<std::int32_t>{static_cast<std::int32_t>(i)});

    CHECK_THROWS_AS(partition_cells(c, 3, 2), Error);
    try {
        partition_cells(c, 2, 3);
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Unsupported);
    }
}

TEST_CASE("cell partition matches a brute-force bucketing") {
    Rng rng(4);
    for (int trial = 0; trial < 100; ++trial) {
        const auto n = static_cast<std::size_t>(rng.uniform_int(1, trial < 10 ? 500 : 150));
        const int s = static_cast<int>(rng.uniform_int(1, 4));
        auto c = testing::random_coords(rng, n, 40);
        const int shift = static_cast<int>(rng.uniform_int(0, 7));
        for (auto& p : c) p.x += shift;
        const auto part = partition_cells(c, s, s);
        const auto ref = oracle::partition(c, s);
        REQUIRE(part.cells.size() == ref.size());
        std::vector<int> count(n, 0);
        for (std::size_t q = 0; q < ref.size(); ++q) {
            CHECK(part.cells[q].at == GridPoint{ref[q].a, ref[q].b});
            CHECK(std::vector<int>(part.cells[q].members.begin(), part.cells[q].members.end()) == ref[q].members);
            for (auto m : part.cells[q].members) {
                ++count[static_cast<std::size_t>(m)];
                CHECK(part.cell_of_token[static_cast<std::size_t>(m)] == static_cast<int>(q));
            }
        }
        for (int v : count) CHECK(v == 1);
        CHECK(part.cells.size() <= n);
    }
}

TEST_CASE("geometry is order-free") {
    Rng rng(8);
    const auto c = testing::random_coords(rng, 60, 12);
    const auto perm = testing::random_permutation(rng, c.size());
    std::vector<GridPoint> pc(c.size());
    for (std::size_t i = 0; i < c.size(); ++i) pc[i] = c[perm[i]];
    const auto a = build_receptive_fields(c, 3);
    const auto b = build_receptive_fields(pc, 3);
    for (std::size_t i = 0; i < c.size(); ++i)
        for (int s = 0; s < 9; ++s) {
            const auto ja = a.at(perm[i], s);
            const auto jb = b.at(i, s);
            CHECK((ja == kPad) == (jb == kPad));
            if (jb != kPad) CHECK(perm[static_cast<std::size_t>(jb)] == static_cast<std::size_t>(ja));
        }
}
