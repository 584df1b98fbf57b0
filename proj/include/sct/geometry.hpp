#pragma once

#include "sct/blockdata.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace sct {

inline constexpr std::int32_t kPad = -1;

// Block-wide coordinates in which tiles from different slides never collide.
struct AdjustedCoords {
    std::vector<GridPoint> coords;             // N
    std::vector<GridPoint> per_slide_offsets;  // N_s, offset added to slide s at index s-1
};

// Slide 1 keeps its coordinates; slide j is shifted by the cumulative extent of slides 1..j-1,
// each extent being (max x + 1, max y + 1). Coordinates must be non-negative.
AdjustedCoords index_tiles(std::span<const GridPoint> coords, std::span<const std::uint16_t> slide);

// k x k neighbourhood of every token. Slot order is row-major over (dy, dx) in [-k/2, k/2]^2, so
// slot k*k/2 is always the centre itself.
struct ReceptiveFieldIndex {
    int k = 1;
    std::vector<std::int32_t> centers;  // token indices, here always 0..N-1
    std::vector<std::int32_t> slots;    // N * k^2, token index or kPad

    std::size_t size() const { return centers.size(); }
    int area() const { return k * k; }
    std::int32_t at(std::size_t center, int slot) const { return slots[center * static_cast<std::size_t>(area()) + slot]; }
    bool mask(std::size_t center, int slot) const { return at(center, slot) != kPad; }
    int live_count(std::size_t center) const;
};

ReceptiveFieldIndex build_receptive_fields(std::span<const GridPoint> coords, int k);

struct Cell {
    GridPoint at;                      // cell index (a, b)
    std::vector<std::int32_t> members; // sorted by (y, x)
};

// Non-overlapping s x s cells anchored at the minimum corner of the token set.
struct CellPartition {
    int pool = 1;
    int stride = 1;
    std::vector<std::int32_t> cell_of_token;  // N
    std::vector<Cell> cells;                  // non-empty cells, ordered by (b, a)

    std::vector<GridPoint> cell_coords() const;
};

CellPartition partition_cells(std::span<const GridPoint> coords, int pool, int stride);

}  // namespace sct
