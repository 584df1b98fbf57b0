#include "sct/geometry.hpp"

#include <algorithm>
#include <map>
#include <unordered_map>
#include <unordered_set>

namespace sct {

namespace {

std::uint64_t key(GridPoint p) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(p.x)) << 32) | static_cast<std::uint32_t>(p.y);
}

}  // namespace

AdjustedCoords index_tiles(std::span<const GridPoint> coords, std::span<const std::uint16_t> slide) {
    if (coords.size() != slide.size()) fail(ErrorKind::Input, "index_tiles: coords and slide indices differ in length");
    int n_slides = 0;
    for (auto s : slide) {
        if (s < 1) fail(ErrorKind::Input, "index_tiles: slide indices start at 1");
        n_slides = std::max<int>(n_slides, s);
    }

    std::vector<GridPoint> extent(static_cast<std::size_t>(n_slides), GridPoint{-1, -1});
    std::unordered_set<std::uint64_t> seen;
    seen.reserve(coords.size());
    for (std::size_t i = 0; i < coords.size(); ++i) {
        const auto p = coords[i];
        if (p.x < 0 || p.y < 0)
            fail(ErrorKind::Input, "index_tiles: negative coordinate at tile " + std::to_string(i) + " (normalize first)");
        if (!seen.insert(key(p) ^ (static_cast<std::uint64_t>(slide[i]) << 52)).second)
            fail(ErrorKind::Input, "index_tiles: duplicate coordinate (" + std::to_string(p.x) + "," + std::to_string(p.y) +
                                       ") within slide " + std::to_string(slide[i]));
        auto& e = extent[slide[i] - 1u];
        e.x = std::max(e.x, p.x);
        e.y = std::max(e.y, p.y);
    }

    AdjustedCoords out;
    out.per_slide_offsets.resize(static_cast<std::size_t>(n_slides));
    GridPoint offset{0, 0};
    for (int s = 0; s < n_slides; ++s) {
        out.per_slide_offsets[s] = offset;
        // An empty slide (no tiles) contributes no extent.
        offset.x += extent[s].x + 1;
        offset.y += extent[s].y + 1;
    }
    out.coords.resize(coords.size());
    for (std::size_t i = 0; i < coords.size(); ++i) {
        const auto o = out.per_slide_offsets[slide[i] - 1u];
        out.coords[i] = {coords[i].x + o.x, coords[i].y + o.y};
    }
    return out;
}

int ReceptiveFieldIndex::live_count(std::size_t center) const {
    int n = 0;
    for (int s = 0; s < area(); ++s) n += mask(center, s) ? 1 : 0;
    return n;
}

ReceptiveFieldIndex build_receptive_fields(std::span<const GridPoint> coords, int k) {
    if (k < 1 || k % 2 == 0) fail(ErrorKind::Config, "receptive field kernel size must be odd and >= 1, got " + std::to_string(k));
    std::unordered_map<std::uint64_t, std::int32_t> where;
    where.reserve(coords.size() * 2);
    for (std::size_t i = 0; i < coords.size(); ++i) {
        if (!where.emplace(key(coords[i]), static_cast<std::int32_t>(i)).second)
            fail(ErrorKind::Input, "receptive fields: duplicate coordinate at token " + std::to_string(i));
    }

    ReceptiveFieldIndex rf;
    rf.k = k;
    const int h = k / 2;
    const auto area = static_cast<std::size_t>(k * k);
    rf.centers.resize(coords.size());
    rf.slots.assign(coords.size() * area, kPad);
    for (std::size_t i = 0; i < coords.size(); ++i) {
        rf.centers[i] = static_cast<std::int32_t>(i);
        std::size_t slot = 0;
        for (int dy = -h; dy <= h; ++dy) {
            for (int dx = -h; dx <= h; ++dx, ++slot) {
                auto it = where.find(key({coords[i].x + dx, coords[i].y + dy}));
                if (it != where.end()) rf.slots[i * area + slot] = it->second;
            }
        }
    }
    return rf;
}

std::vector<GridPoint> CellPartition::cell_coords() const {
    std::vector<GridPoint> out;
    out.reserve(cells.size());
    for (const auto& c : cells) out.push_back(c.at);
    return out;
}

namespace {

std::int32_t floor_div(std::int32_t a, std::int32_t b) {
    std::int32_t q = a / b;
    if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
    return q;
}

}  // namespace

CellPartition partition_cells(std::span<const GridPoint> coords, int pool, int stride) {
    if (stride < 1) fail(ErrorKind::Config, "pooling stride must be >= 1");
    if (pool != stride)
        fail(ErrorKind::Unsupported, "pooling with pool size " + std::to_string(pool) + " != stride " +
                                         std::to_string(stride) + " (overlapping windows) is not supported");
    CellPartition part;
    part.pool = pool;
    part.stride = stride;
    part.cell_of_token.assign(coords.size(), -1);
    if (coords.empty()) return part;

    std::int32_t min_x = coords[0].x, min_y = coords[0].y;
    for (auto p : coords) {
        min_x = std::min(min_x, p.x);
        min_y = std::min(min_y, p.y);
    }
    // (b, a) ordering == (y, x) ordering of cells.
    std::map<std::pair<std::int32_t, std::int32_t>, std::vector<std::int32_t>> buckets;
    for (std::size_t i = 0; i < coords.size(); ++i) {
        const auto a = floor_div(coords[i].x - min_x, stride);
        const auto b = floor_div(coords[i].y - min_y, stride);
        buckets[{b, a}].push_back(static_cast<std::int32_t>(i));
    }
    part.cells.reserve(buckets.size());
    for (auto& [ba, members] : buckets) {
        std::sort(members.begin(), members.end(), [&](std::int32_t l, std::int32_t r) {
            if (coords[l].y != coords[r].y) return coords[l].y < coords[r].y;
            return coords[l].x < coords[r].x;
        });
        const auto id = static_cast<std::int32_t>(part.cells.size());
        for (auto m : members) part.cell_of_token[m] = id;
        part.cells.push_back(Cell{GridPoint{ba.second, ba.first}, std::move(members)});
    }
    return part;
}

}  // namespace sct
