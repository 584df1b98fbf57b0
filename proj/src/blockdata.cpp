#include "sct/blockdata.hpp"

#include "bytes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <unordered_set>

namespace sct {

const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Usage: return "usage error";
        case ErrorKind::Config: return "config error";
        case ErrorKind::Unsupported: return "unsupported configuration";
        case ErrorKind::Input: return "input error";
        case ErrorKind::Format: return "format error";
        case ErrorKind::Schema: return "schema error";
        case ErrorKind::Data: return "data error";
        case ErrorKind::Corruption: return "corruption error";
        case ErrorKind::Io: return "I/O error";
        case ErrorKind::Divergence: return "divergence error";
    }
    return "error";
}

int exit_code(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Usage:
        case ErrorKind::Config:
        case ErrorKind::Unsupported: return 1;
        case ErrorKind::Divergence: return 3;
        default: return 2;
    }
}

int pattern_class(Pattern p) {
    switch (p) {
        case Pattern::None: return 0;
        case Pattern::P3: return 1;
        case Pattern::P4: return 2;
        case Pattern::P5: return 3;
    }
    fail(ErrorKind::Data, "invalid Gleason pattern code " + std::to_string(static_cast<int>(p)));
}

Pattern pattern_from_class(int c) {
    static constexpr Pattern table[] = {Pattern::None, Pattern::P3, Pattern::P4, Pattern::P5};
    if (c < 0 || c > 3) fail(ErrorKind::Input, "pattern class out of range: " + std::to_string(c));
    return table[c];
}

int Block::slide_count() const {
    int n = 0;
    for (auto s : slide) n = std::max<int>(n, s);
    return n;
}

namespace {

std::uint64_t pack(std::int64_t slide, GridPoint p) {
    return (static_cast<std::uint64_t>(slide) << 48) ^ (static_cast<std::uint64_t>(static_cast<std::uint32_t>(p.x)) << 24) ^
           static_cast<std::uint64_t>(static_cast<std::uint32_t>(p.y));
}

bool valid_pattern_code(std::uint8_t v) { return v == 0 || v == 3 || v == 4 || v == 5; }

}  // namespace

void validate(const Block& b) {
    const auto n = b.size();
    const std::string where = "block '" + b.id + "'";
    if (n == 0) fail(ErrorKind::Input, where + ": no tiles");
    if (static_cast<std::size_t>(b.features.rows()) != n || b.slide.size() != n)
        fail(ErrorKind::Input, where + ": features/coords/slide lengths disagree");
    for (Eigen::Index i = 0; i < b.features.rows(); ++i) {
        if (!b.features.row(i).allFinite())
            fail(ErrorKind::Data, where + ": non-finite feature at tile " + std::to_string(i));
    }
    const int ns = b.slide_count();
    std::vector<char> seen(static_cast<std::size_t>(ns) + 1, 0);
    for (auto s : b.slide) {
        if (s < 1) fail(ErrorKind::Data, where + ": slide index 0");
        seen[s] = 1;
    }
    for (int s = 1; s <= ns; ++s)
        if (!seen[s]) fail(ErrorKind::Data, where + ": slide indices not contiguous (missing " + std::to_string(s) + ")");

    std::unordered_set<std::uint64_t> keys;
    keys.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!keys.insert(pack(b.slide[i], b.coords[i])).second)
            fail(ErrorKind::Data, where + ": duplicate coordinate within slide " + std::to_string(b.slide[i]) +
                                      " at tile " + std::to_string(i));
    }
    if (b.grading) {
        const bool p_none = b.grading->primary == Pattern::None;
        const bool s_none = b.grading->secondary == Pattern::None;
        if (p_none != s_none) fail(ErrorKind::Data, where + ": primary/secondary pattern mix None and non-None");
        if (b.label != DetectionLabel::Unknown && p_none != (b.label == DetectionLabel::Benign))
            fail(ErrorKind::Data, where + ": grading label inconsistent with detection label");
    }
}

Block normalize_coords(Block block) {
    const int ns = block.slide_count();
    std::vector<GridPoint> mins(static_cast<std::size_t>(ns) + 1,
                                GridPoint{std::numeric_limits<std::int32_t>::max(), std::numeric_limits<std::int32_t>::max()});
    for (std::size_t i = 0; i < block.size(); ++i) {
        auto& m = mins[block.slide[i]];
        m.x = std::min(m.x, block.coords[i].x);
        m.y = std::min(m.y, block.coords[i].y);
    }
    for (std::size_t i = 0; i < block.size(); ++i) {
        const auto& m = mins[block.slide[i]];
        block.coords[i].x -= m.x;
        block.coords[i].y -= m.y;
    }
    return block;
}

// --- SCTB -----------------------------------------------------------------------------------

std::string encode_blocks(const std::vector<Block>& blocks) {
    detail::ByteWriter w;
    w.put_bytes(std::string_view(kBlockMagic.data(), kBlockMagic.size()));
    w.put<std::uint16_t>(kBlockVersion);
    const int dim = blocks.empty() ? 0 : blocks.front().dim();
    if (dim > 0xFFFF) fail(ErrorKind::Schema, "embedding dimension exceeds 65535");
    w.put<std::uint16_t>(static_cast<std::uint16_t>(dim));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(blocks.size()));
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        const Block& blk = blocks[b];
        if (blk.dim() != dim)
            fail(ErrorKind::Schema, "block " + std::to_string(b + 1) + " ('" + blk.id + "') has D=" +
                                        std::to_string(blk.dim()) + ", expected " + std::to_string(dim));
        w.put_string16(blk.id);
        w.put<std::uint8_t>(static_cast<std::uint8_t>(blk.label));
        w.put<std::uint8_t>(blk.grading ? static_cast<std::uint8_t>(blk.grading->primary) : 255);
        w.put<std::uint8_t>(blk.grading ? static_cast<std::uint8_t>(blk.grading->secondary) : 255);
        w.put<std::uint16_t>(static_cast<std::uint16_t>(blk.slide_count()));
        w.put<std::uint32_t>(static_cast<std::uint32_t>(blk.size()));
        for (std::size_t i = 0; i < blk.size(); ++i) {
            w.put<std::uint16_t>(blk.slide[i]);
            w.put<std::int32_t>(blk.coords[i].x);
            w.put<std::int32_t>(blk.coords[i].y);
            for (int d = 0; d < dim; ++d) w.put<float>(blk.features(static_cast<Eigen::Index>(i), d));
        }
    }
    return std::move(w.str());
}

std::vector<Block> decode_blocks(const std::string& bytes) {
    detail::ByteReader r(bytes);
    auto magic = r.get_bytes(4, ErrorKind::Format, "header");
    if (magic != std::string_view(kBlockMagic.data(), 4)) fail(ErrorKind::Format, "bad magic, expected SCTB");
    const auto version = r.get<std::uint16_t>(ErrorKind::Format, "header");
    if (version != kBlockVersion)
        fail(ErrorKind::Format, "unsupported SCTB version " + std::to_string(version) + " (this build reads version " +
                                    std::to_string(kBlockVersion) + ")");
    const int dim = r.get<std::uint16_t>(ErrorKind::Format, "header");
    const auto count = r.get<std::uint32_t>(ErrorKind::Format, "header");

    std::vector<Block> blocks;
    blocks.reserve(std::min<std::uint32_t>(count, 1u << 16));
    for (std::uint32_t b = 0; b < count; ++b) {
        // Record-level inconsistencies (a block written with a different D, wrong counts) surface
        // as misaligned tile records; they are attributed to the block being parsed.
        const std::string ctx = "block " + std::to_string(b + 1);
        Block blk;
        blk.id = r.get_string16(ErrorKind::Schema, ctx);
        const auto label = r.get<std::uint8_t>(ErrorKind::Schema, ctx);
        if (label != 0 && label != 1 && label != 255)
            fail(ErrorKind::Schema, ctx + ": invalid detection label code " + std::to_string(label));
        blk.label = static_cast<DetectionLabel>(label);
        const auto prim = r.get<std::uint8_t>(ErrorKind::Schema, ctx);
        const auto sec = r.get<std::uint8_t>(ErrorKind::Schema, ctx);
        if ((prim == 255) != (sec == 255)) fail(ErrorKind::Schema, ctx + ": only one grading pattern is unknown");
        if (prim != 255) {
            if (!valid_pattern_code(prim) || !valid_pattern_code(sec))
                fail(ErrorKind::Schema, ctx + ": invalid Gleason pattern code");
            blk.grading = GradingLabel{static_cast<Pattern>(prim), static_cast<Pattern>(sec)};
        }
        const auto n_slides = r.get<std::uint16_t>(ErrorKind::Schema, ctx);
        const auto n_tiles = r.get<std::uint32_t>(ErrorKind::Schema, ctx);
        const std::size_t record = 2 + 4 + 4 + 4 * static_cast<std::size_t>(dim);
        if (static_cast<std::size_t>(n_tiles) * record > r.remaining())
            fail(ErrorKind::Schema, ctx + ": " + std::to_string(n_tiles) + " tile records of D=" + std::to_string(dim) +
                                        " exceed the remaining file size");
        blk.features.resize(n_tiles, dim);
        blk.coords.resize(n_tiles);
        blk.slide.resize(n_tiles);
        for (std::uint32_t i = 0; i < n_tiles; ++i) {
            blk.slide[i] = r.get<std::uint16_t>(ErrorKind::Schema, ctx);
            if (blk.slide[i] < 1 || blk.slide[i] > n_slides)
                fail(ErrorKind::Schema, ctx + ": tile " + std::to_string(i) + " has slide index " +
                                            std::to_string(blk.slide[i]) + " outside 1.." + std::to_string(n_slides) +
                                            " (tile records inconsistent with header D=" + std::to_string(dim) + ")");
            blk.coords[i].x = r.get<std::int32_t>(ErrorKind::Schema, ctx);
            blk.coords[i].y = r.get<std::int32_t>(ErrorKind::Schema, ctx);
            for (int d = 0; d < dim; ++d) {
                const float v = r.get<float>(ErrorKind::Schema, ctx);
                if (!std::isfinite(v))
                    fail(ErrorKind::Data, "block '" + blk.id + "': non-finite feature at tile " + std::to_string(i));
                blk.features(i, d) = v;
            }
        }
        if (blk.slide_count() != n_slides)
            fail(ErrorKind::Schema, ctx + ": declares " + std::to_string(n_slides) + " slides but tiles reference " +
                                        std::to_string(blk.slide_count()));
        validate(blk);
        blocks.push_back(std::move(blk));
    }
    if (!r.at_end()) {
        const std::string who = count == 0 ? "header" : "block " + std::to_string(count);
        fail(ErrorKind::Schema, std::to_string(r.remaining()) + " trailing bytes after " + who +
                                    " (tile records inconsistent with header D=" + std::to_string(dim) + ")");
    }
    return blocks;
}

void write_blocks(const std::filesystem::path& path, const std::vector<Block>& blocks) {
    detail::write_file(path, encode_blocks(blocks));
}

std::vector<Block> load_blocks(const std::filesystem::path& path) { return decode_blocks(detail::read_file(path)); }

// --- synthetic generator --------------------------------------------------------------------

void validate(const SynthConfig& cfg) {
    auto check_range = [](IntRange r, const char* name) {
        if (r.lo < 1 || r.hi < r.lo)
            fail(ErrorKind::Config, std::string("synth: degenerate range for ") + name + ": [" + std::to_string(r.lo) +
                                        ", " + std::to_string(r.hi) + "]");
    };
    check_range(cfg.tiles_per_slide, "tiles_per_slide");
    check_range(cfg.slides_per_block, "slides_per_block");
    if (cfg.n_blocks < 0) fail(ErrorKind::Config, "synth: n_blocks must be non-negative");
    if (cfg.dim < 1 || cfg.dim > 0xFFFF) fail(ErrorKind::Config, "synth: dim must be in [1, 65535]");
    if (!(cfg.noise_sigma > 0)) fail(ErrorKind::Config, "synth: noise_sigma must be > 0");
    if (!(cfg.focus_radius >= 1)) fail(ErrorKind::Config, "synth: focus_radius must be >= 1");
    if (!(cfg.carcinoma_fraction >= 0 && cfg.carcinoma_fraction <= 1))
        fail(ErrorKind::Config, "synth: carcinoma_fraction must lie in [0, 1]");
    if (!std::isfinite(cfg.carcinoma_shift)) fail(ErrorKind::Config, "synth: carcinoma_shift must be finite");
    double total = 0;
    for (double w : cfg.pattern_mix) {
        if (!(w >= 0)) fail(ErrorKind::Config, "synth: pattern_mix weights must be non-negative");
        total += w;
    }
    if (!(total > 0)) fail(ErrorKind::Config, "synth: pattern_mix must have positive mass");
    if (cfg.context_only && cfg.tiles_per_slide.lo < 30)
        fail(ErrorKind::Config, "synth: context_only needs tiles_per_slide >= 30 to scatter marked tiles");
}

namespace {

constexpr int kPrototypes = 4;
constexpr std::uint64_t kPaletteSeed = 0x5C7B10C5ull;

struct Palette {
    Mat<double> prototypes;  // kPrototypes x D
    Eigen::RowVectorXd carcinoma_dir;
    std::array<Eigen::RowVectorXd, 3> pattern_dir;  // P3, P4, P5
};

Eigen::RowVectorXd random_unit(Rng& rng, int dim) {
    Eigen::RowVectorXd v(dim);
    for (int d = 0; d < dim; ++d) v[d] = rng.normal();
    return v / v.norm();
}

Palette make_palette(Rng& rng, int dim) {
    Palette p;
    p.prototypes.resize(kPrototypes, dim);
    for (int k = 0; k < kPrototypes; ++k)
        for (int d = 0; d < dim; ++d) p.prototypes(k, d) = rng.normal();
    p.carcinoma_dir = random_unit(rng, dim);
    for (auto& v : p.pattern_dir) v = random_unit(rng, dim);
    return p;
}

// Eden growth of a 4-connected tissue fragment with `n` tiles, placed at a random offset.
std::vector<GridPoint> grow_fragment(Rng& rng, int n) {
    std::vector<GridPoint> cells{{0, 0}};
    std::set<std::pair<int, int>> occupied{{0, 0}};
    std::vector<GridPoint> frontier;
    auto push_neighbors = [&](GridPoint p) {
        static constexpr int dx[] = {1, -1, 0, 0};
        static constexpr int dy[] = {0, 0, 1, -1};
        for (int k = 0; k < 4; ++k) frontier.push_back({p.x + dx[k], p.y + dy[k]});
    };
    push_neighbors(cells[0]);
    while (static_cast<int>(cells.size()) < n) {
        const auto pick = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(frontier.size()) - 1));
        const GridPoint c = frontier[pick];
        frontier[pick] = frontier.back();
        frontier.pop_back();
        if (!occupied.insert({c.x, c.y}).second) continue;
        cells.push_back(c);
        push_neighbors(c);
    }
    int min_x = 0, min_y = 0;
    for (auto c : cells) {
        min_x = std::min(min_x, c.x);
        min_y = std::min(min_y, c.y);
    }
    const int ox = static_cast<int>(rng.uniform_int(0, 20)) - min_x;
    const int oy = static_cast<int>(rng.uniform_int(0, 20)) - min_y;
    for (auto& c : cells) {
        c.x += ox;
        c.y += oy;
    }
    return cells;
}

struct Layout {
    std::vector<GridPoint> coords;
    std::vector<std::uint16_t> slide;
};

Layout make_layout(Rng& rng, const SynthConfig& cfg) {
    Layout l;
    const int n_slides = static_cast<int>(rng.uniform_int(cfg.slides_per_block.lo, cfg.slides_per_block.hi));
    for (int s = 1; s <= n_slides; ++s) {
        const int n = static_cast<int>(rng.uniform_int(cfg.tiles_per_slide.lo, cfg.tiles_per_slide.hi));
        for (auto c : grow_fragment(rng, n)) {
            l.coords.push_back(c);
            l.slide.push_back(static_cast<std::uint16_t>(s));
        }
    }
    return l;
}

Eigen::RowVectorXd background_tile(Rng& rng, const Palette& pal, double sigma) {
    const auto k = rng.uniform_int(0, kPrototypes - 1);
    Eigen::RowVectorXd f = pal.prototypes.row(k);
    for (Eigen::Index d = 0; d < f.size(); ++d) f[d] += sigma * rng.normal();
    return f;
}

GradingLabel draw_grading(Rng& rng, const std::array<double, 9>& mix) {
    const double total = std::accumulate(mix.begin(), mix.end(), 0.0);
    double u = rng.uniform() * total;
    int pick = 8;
    for (int i = 0; i < 9; ++i) {
        if (u < mix[i]) {
            pick = i;
            break;
        }
        u -= mix[i];
    }
    static constexpr Pattern pats[] = {Pattern::P3, Pattern::P4, Pattern::P5};
    return GradingLabel{pats[pick / 3], pats[pick % 3]};
}

int pattern_slot(Pattern p) { return static_cast<int>(p) - 3; }

// Tiles of `slide` within Euclidean distance `radius` of tile `center`.
std::vector<std::size_t> disc_members(const Layout& l, std::size_t center, double radius) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < l.coords.size(); ++i) {
        if (l.slide[i] != l.slide[center]) continue;
        const double dx = l.coords[i].x - l.coords[center].x;
        const double dy = l.coords[i].y - l.coords[center].y;
        if (dx * dx + dy * dy <= radius * radius + 1e-9) out.push_back(i);
    }
    return out;
}

Block to_block(std::string id, const Layout& l, const Mat<double>& feats, DetectionLabel label, GradingLabel g) {
    Block b;
    b.id = std::move(id);
    b.coords = l.coords;
    b.slide = l.slide;
    b.features = feats.cast<float>();
    b.label = label;
    b.grading = g;
    return b;
}

std::string block_name(const char* prefix, int i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s-%06d", prefix, i);
    return buf;
}

void generate_standard(const SynthConfig& cfg, Rng& rng, const Palette& pal, std::vector<Block>& out, SynthTruth* truth) {
    for (int b = 0; b < cfg.n_blocks; ++b) {
        const bool positive = rng.bernoulli(cfg.carcinoma_fraction);
        Layout l = make_layout(rng, cfg);
        const auto n = l.coords.size();
        Mat<double> feats(static_cast<Eigen::Index>(n), cfg.dim);
        for (std::size_t i = 0; i < n; ++i) feats.row(static_cast<Eigen::Index>(i)) = background_tile(rng, pal, cfg.noise_sigma);

        std::vector<std::uint8_t> focus(n, 0);
        GradingLabel g{};
        if (positive) {
            g = draw_grading(rng, cfg.pattern_mix);
            const auto center = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1));
            const double radius = rng.uniform(1.0, cfg.focus_radius);
            // Inner core carries the primary pattern, the rim the secondary one.
            for (auto i : disc_members(l, center, radius)) {
                const double dx = l.coords[i].x - l.coords[center].x;
                const double dy = l.coords[i].y - l.coords[center].y;
                const bool core = std::sqrt(dx * dx + dy * dy) <= 0.6 * radius;
                const Pattern p = core ? g.primary : g.secondary;
                feats.row(static_cast<Eigen::Index>(i)) +=
                    cfg.carcinoma_shift * (pal.carcinoma_dir + 0.75 * pal.pattern_dir[pattern_slot(p)]);
                focus[i] = 1;
            }
        }
        out.push_back(to_block(block_name("synth", b), l, feats,
                               positive ? DetectionLabel::Carcinoma : DetectionLabel::Benign, g));
        if (truth) truth->in_focus.push_back(std::move(focus));
    }
}

// Greedy random placement of `m` tiles, no two in the same slide within Chebyshev distance 2.
bool scatter(Rng& rng, const Layout& l, std::size_t m, std::vector<std::size_t>& chosen) {
    std::vector<std::size_t> order(l.coords.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
    chosen.clear();
    for (auto i : order) {
        bool ok = true;
        for (auto j : chosen) {
            if (l.slide[i] == l.slide[j] && std::abs(l.coords[i].x - l.coords[j].x) <= 2 &&
                std::abs(l.coords[i].y - l.coords[j].y) <= 2) {
                ok = false;
                break;
            }
        }
        if (ok) chosen.push_back(i);
        if (chosen.size() == m) return true;
    }
    return false;
}

void generate_context_only(const SynthConfig& cfg, Rng& rng, const Palette& pal, std::vector<Block>& out,
                           SynthTruth* truth) {
    int made = 0;
    while (made < cfg.n_blocks) {
        Layout l = make_layout(rng, cfg);
        const auto n = l.coords.size();
        const auto center = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1));
        // Discs of radius < 2 are barely distinguishable from a scatter.
        const double radius = rng.uniform(std::min(2.0, cfg.focus_radius), cfg.focus_radius);
        const auto disc = disc_members(l, center, radius);
        std::vector<std::size_t> scattered;
        if (disc.size() < 3 || !scatter(rng, l, disc.size(), scattered)) continue;

        const auto m = disc.size();
        std::vector<Eigen::RowVectorXd> marked, plain;
        for (std::size_t j = 0; j < m; ++j)
            marked.push_back(background_tile(rng, pal, cfg.noise_sigma) + cfg.carcinoma_shift * pal.carcinoma_dir);
        for (std::size_t j = 0; j < n - m; ++j) plain.push_back(background_tile(rng, pal, cfg.noise_sigma));
        const GradingLabel g = draw_grading(rng, cfg.pattern_mix);

        auto assemble = [&](const std::vector<std::size_t>& hot, std::vector<std::uint8_t>& flags) {
            Mat<double> feats(static_cast<Eigen::Index>(n), cfg.dim);
            flags.assign(n, 0);
            for (auto i : hot) flags[i] = 1;
            std::size_t a = 0, p = 0;
            for (std::size_t i = 0; i < n; ++i)
                feats.row(static_cast<Eigen::Index>(i)) = flags[i] ? marked[a++] : plain[p++];
            return feats;
        };
        std::vector<std::uint8_t> pos_flags, neg_flags;
        Mat<double> pos = assemble(disc, pos_flags);
        Mat<double> neg = assemble(scattered, neg_flags);

        out.push_back(to_block(block_name("ctx", made), l, pos, DetectionLabel::Carcinoma, g));
        if (truth) truth->in_focus.push_back(std::move(pos_flags));
        ++made;
        if (made < cfg.n_blocks) {
            out.push_back(to_block(block_name("ctx", made), l, neg, DetectionLabel::Benign, GradingLabel{}));
            // Scattered marked tiles are not a focus.
            if (truth) truth->in_focus.push_back(std::vector<std::uint8_t>(n, 0));
            ++made;
        }
    }
}

}  // namespace

std::vector<Block> synth_generate(const SynthConfig& cfg) { return synth_generate(cfg, nullptr); }

std::vector<Block> synth_generate(const SynthConfig& cfg, SynthTruth* truth) {
    validate(cfg);
    // The palette is the "tissue" every dataset shares; only the blocks depend on the seed, so
    // train and test sets generated with different seeds come from the same distribution.
    Rng palette_rng(kPaletteSeed);
    const Palette pal = make_palette(palette_rng, cfg.dim);
    Rng rng(cfg.seed);
    std::vector<Block> out;
    out.reserve(static_cast<std::size_t>(cfg.n_blocks));
    if (truth) truth->in_focus.clear();
    if (cfg.context_only)
        generate_context_only(cfg, rng, pal, out, truth);
    else
        generate_standard(cfg, rng, pal, out, truth);
    return out;
}

}  // namespace sct
