#pragma once

#include "sct/common.hpp"

#include <array>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace sct {

struct GridPoint {
    std::int32_t x = 0;
    std::int32_t y = 0;
    friend bool operator==(const GridPoint&, const GridPoint&) = default;
};

enum class DetectionLabel : std::uint8_t { Benign = 0, Carcinoma = 1, Unknown = 255 };

// Gleason pattern; numeric values match the on-disk coding.
enum class Pattern : std::uint8_t { None = 0, P3 = 3, P4 = 4, P5 = 5 };

struct GradingLabel {
    Pattern primary = Pattern::None;
    Pattern secondary = Pattern::None;
    friend bool operator==(const GradingLabel&, const GradingLabel&) = default;
};

// Pattern <-> class index used by the grading heads: {None, 3, 4, 5} -> {0, 1, 2, 3}.
int pattern_class(Pattern p);
Pattern pattern_from_class(int c);

// One tissue block: the unit of prediction. Row i of `features` belongs to tile i.
struct Block {
    std::string id;
    Mat<float> features;              // N x D
    std::vector<GridPoint> coords;    // N, tile-grid units
    std::vector<std::uint16_t> slide; // N, values 1..N_s
    DetectionLabel label = DetectionLabel::Unknown;
    std::optional<GradingLabel> grading;

    std::size_t size() const { return coords.size(); }
    int dim() const { return static_cast<int>(features.cols()); }
    int slide_count() const;
};

// Throws Data/Input errors if any Block invariant is violated.
void validate(const Block& block);

// Per slide, shift coordinates so the minimum x and y are both 0.
Block normalize_coords(Block block);

// --- SCTB container -------------------------------------------------------------------------

inline constexpr std::array<char, 4> kBlockMagic{'S', 'C', 'T', 'B'};
inline constexpr std::uint16_t kBlockVersion = 1;

std::string encode_blocks(const std::vector<Block>& blocks);
std::vector<Block> decode_blocks(const std::string& bytes);

void write_blocks(const std::filesystem::path& path, const std::vector<Block>& blocks);
std::vector<Block> load_blocks(const std::filesystem::path& path);

// --- synthetic generator --------------------------------------------------------------------

struct IntRange {
    int lo = 0;
    int hi = 0;
};

struct SynthConfig {
    int n_blocks = 200;
    IntRange tiles_per_slide{40, 90};
    IntRange slides_per_block{1, 3};
    int dim = 64;
    double focus_radius = 3.0;
    double carcinoma_shift = 4.0;
    double noise_sigma = 1.0;
    double carcinoma_fraction = 0.3;
    // Weights over (primary, secondary) in row-major order of {3,4,5} x {3,4,5}.
    std::array<double, 9> pattern_mix{4, 3, 0.5, 2, 2, 0.5, 0.2, 0.5, 0.5};
    // Context-only variant: positive/negative pairs share the tile-feature multiset and differ
    // only in whether the marked tiles form a contiguous disc or are scattered.
    bool context_only = false;
    std::uint64_t seed = 1;
};

void validate(const SynthConfig& cfg);

std::vector<Block> synth_generate(const SynthConfig& cfg);

// Tiles planted inside a carcinoma focus, by block; exposed for property tests.
struct SynthTruth {
    std::vector<std::vector<std::uint8_t>> in_focus;
};
std::vector<Block> synth_generate(const SynthConfig& cfg, SynthTruth* truth);

}  // namespace sct
