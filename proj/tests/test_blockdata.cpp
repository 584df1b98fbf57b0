#include "doctest.h"
#include "support.hpp"

#include "sct/blockdata.hpp"

#include <cmath>
#include <functional>

using namespace sct;

namespace {

Block tiny_block(const std::string& id, int dim, DetectionLabel label) {
    Block b;
    b.id = id;
    b.coords = {{0, 0}, {1, 0}, {0, 1}};
    b.slide = {1, 1, 2};
    b.features.resize(3, dim);
    for (Eigen::Index i = 0; i < b.features.size(); ++i) b.features.data()[i] = 0.25f * static_cast<float>(i) - 1.0f;
    b.label = label;
    if (label == DetectionLabel::Carcinoma) b.grading = GradingLabel{Pattern::P4, Pattern::P3};
    if (label == DetectionLabel::Benign) b.grading = GradingLabel{};
    return b;
}

void expect_kind(ErrorKind kind, const std::function<void()>& f, const std::string& mention = "") {
    try {
        f();
        FAIL("expected an error of kind " << to_string(kind));
    } catch (const Error& e) {
        CHECK(e.kind() == kind);
        if (!mention.empty()) CHECK_MESSAGE(std::string(e.what()).find(mention) != std::string::npos, e.what());
    }
}

bool same_blocks(const std::vector<Block>& a, const std::vector<Block>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].id != b[i].id || a[i].label != b[i].label || a[i].grading != b[i].grading) return false;
        if (a[i].coords != b[i].coords || a[i].slide != b[i].slide) return false;
        if (a[i].features.rows() != b[i].features.rows() || a[i].features.cols() != b[i].features.cols()) return false;
        if (std::memcmp(a[i].features.data(), b[i].features.data(), sizeof(float) * a[i].features.size()) != 0) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("SCTB round trip keeps blocks in file order, bit for bit") {
    std::vector<Block> blocks{tiny_block("first", 4, DetectionLabel::Benign), tiny_block("second", 4, DetectionLabel::Carcinoma),
                              tiny_block("third", 4, DetectionLabel::Unknown)};
    blocks[1].features(2, 3) = -0.0f;
    blocks[2].features(0, 0) = 1e-38f;
    const auto bytes = encode_blocks(blocks);
    const auto back = decode_blocks(bytes);
    REQUIRE(back.size() == 3);
    CHECK(back[0].id == "first");
    CHECK(back[2].id == "third");
    CHECK(!back[2].grading.has_value());
    CHECK(same_blocks(blocks, back));
    CHECK(encode_blocks(back) == bytes);

    const auto dir = testing::scratch_dir("blockdata");
    write_blocks(dir / "x.sctb", blocks);
    CHECK(same_blocks(load_blocks(dir / "x.sctb"), blocks));
}

TEST_CASE("SCTB rejects bad magic and unknown versions") {
    auto bytes = encode_blocks({tiny_block("a", 4, DetectionLabel::Benign)});
    auto bad = bytes;
    bad.replace(0, 4, "XXXX");
    expect_kind(ErrorKind::Format, [&] { decode_blocks(bad); });
    auto newer = bytes;
    newer.replace(4, 2, testing::le_bytes<std::uint16_t>(2));
    expect_kind(ErrorKind::Format, [&] { decode_blocks(newer); }, "version");
}

TEST_CASE("SCTB block written with a different D is a schema error naming that block") {
    // Hand-built: header D=4, block 1 with 4-float tiles, block 2 with 8-float tiles.
    std::string f = "SCTB" + testing::le_bytes<std::uint16_t>(1) + testing::le_bytes<std::uint16_t>(4) +
                    testing::le_bytes<std::uint32_t>(2);
    auto block = [&](const std::string& id, int dim) {
        f += testing::le_bytes<std::uint16_t>(static_cast<std::uint16_t>(id.size())) + id;
        f += std::string(1, '\0') + std::string(1, '\0') + std::string(1, '\0');  // benign, None, None
        f += testing::le_bytes<std::uint16_t>(1) + testing::le_bytes<std::uint32_t>(2);
        for (int t = 0; t < 2; ++t) {
            f += testing::le_bytes<std::uint16_t>(1) + testing::le_bytes<std::int32_t>(t) + testing::le_bytes<std::int32_t>(0);
            for (int d = 0; d < dim; ++d) f += testing::le_bytes<float>(1.5f);
        }
    };
    block("one", 4);
    block("two", 8);
    expect_kind(ErrorKind::Schema, [&] { decode_blocks(f); }, "block 2");

    // The writer refuses mixed D up front.
    expect_kind(ErrorKind::Schema, [&] {
        encode_blocks({tiny_block("a", 4, DetectionLabel::Benign), tiny_block("b", 8, DetectionLabel::Benign)});
    }, "block 2");
}

TEST_CASE("SCTB non-finite feature is a data error with block id and tile index") {
    auto b = tiny_block("nanblock", 2, DetectionLabel::Benign);
    auto bytes = encode_blocks({b});
    // Features of tile 1 start after header(12) + id(2+8) + labels(3) + counts(6) + tile 0 (18) + tile 1 prefix (10).
    const std::size_t at = 12 + 2 + 8 + 3 + 6 + 18 + 10;
    bytes.replace(at, 4, testing::le_bytes<float>(NAN));
    expect_kind(ErrorKind::Data, [&] { decode_blocks(bytes); }, "nanblock");
    expect_kind(ErrorKind::Data, [&] { decode_blocks(bytes); }, "tile 1");
}

TEST_CASE("SCTB truncation is reported, not silently accepted") {
    auto bytes = encode_blocks({tiny_block("a", 4, DetectionLabel::Benign)});
    CHECK_THROWS_AS(decode_blocks(bytes.substr(0, bytes.size() - 3)), Error);
    CHECK_THROWS_AS(decode_blocks(bytes.substr(0, 7)), Error);
}

TEST_CASE("block validation") {
    auto b = tiny_block("v", 2, DetectionLabel::Benign);
    CHECK_NOTHROW(validate(b));
    auto dup = b;
    dup.coords[1] = dup.coords[0];
    expect_kind(ErrorKind::Data, [&] { validate(dup); }, "duplicate");
    auto gap = b;
    gap.slide[2] = 3;
    expect_kind(ErrorKind::Data, [&] { validate(gap); }, "contiguous");
    auto inconsistent = b;
    inconsistent.grading = GradingLabel{Pattern::P3, Pattern::P3};
    expect_kind(ErrorKind::Data, [&] { validate(inconsistent); });
    auto mixed = tiny_block("m", 2, DetectionLabel::Carcinoma);
    mixed.grading = GradingLabel{Pattern::P3, Pattern::None};
    expect_kind(ErrorKind::Data, [&] { validate(mixed); });
    Block empty;
    expect_kind(ErrorKind::Input, [&] { validate(empty); });
}

TEST_CASE("normalize_coords zeroes each slide independently") {
    Block b;
    b.coords = {{5, 7}, {6, 7}};
    b.slide = {1, 1};
    b.features = Mat<float>::Zero(2, 1);
    auto n = normalize_coords(b);
    CHECK(n.coords == std::vector<GridPoint>{{0, 0}, {1, 0}});
    CHECK(normalize_coords(n).coords == n.coords);

    Block two;
    two.coords = {{100, 0}, {102, 4}, {3, 3}, {5, 3}};
    two.slide = {1, 1, 2, 2};
    two.features = Mat<float>::Zero(4, 1);
    CHECK(normalize_coords(two).coords == std::vector<GridPoint>{{0, 0}, {2, 4}, {0, 0}, {2, 0}});
}

TEST_CASE("synth_generate is deterministic and honours its configuration") {
    SynthConfig cfg;
    cfg.n_blocks = 200;
    cfg.carcinoma_fraction = 0.3;
    cfg.seed = 1;
    const auto a = synth_generate(cfg);
    const auto b = synth_generate(cfg);
    CHECK(encode_blocks(a) == encode_blocks(b));

    long positives = 0;
    for (const auto& blk : a) {
        CHECK_NOTHROW(validate(blk));
        const int s = blk.slide_count();
        CHECK(s >= cfg.slides_per_block.lo);
        CHECK(s <= cfg.slides_per_block.hi);
        positives += blk.label == DetectionLabel::Carcinoma;
    }
    // Binomial(200, 0.3): sd ~ 6.5; 4 sd either side.
    CHECK(positives >= 60 - 26);
    CHECK(positives <= 60 + 26);

    cfg.carcinoma_fraction = 0;
    for (const auto& blk : synth_generate(cfg)) CHECK(blk.label == DetectionLabel::Benign);

    cfg.seed = 2;
    cfg.carcinoma_fraction = 0.3;
    CHECK(encode_blocks(synth_generate(cfg)) != encode_blocks(a));
}

TEST_CASE("synthetic foci are contiguous discs present exactly in positive blocks") {
    SynthConfig cfg;
    cfg.n_blocks = 60;
    cfg.seed = 5;
    SynthTruth truth;
    const auto blocks = synth_generate(cfg, &truth);
    REQUIRE(truth.in_focus.size() == blocks.size());
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        const auto& f = truth.in_focus[b];
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < f.size(); ++i)
            if (f[i]) members.push_back(i);
        if (blocks[b].label == DetectionLabel::Benign) {
            CHECK(members.empty());
            continue;
        }
        REQUIRE(!members.empty());
        // Contiguity: flood fill over 8-neighbours within the focus reaches every member.
        std::vector<std::uint8_t> reached(f.size(), 0);
        std::vector<std::size_t> stack{members[0]};
        reached[members[0]] = 1;
        while (!stack.empty()) {
            const auto i = stack.back();
            stack.pop_back();
            for (auto j : members) {
                if (reached[j] || blocks[b].slide[j] != blocks[b].slide[i]) continue;
                if (std::abs(blocks[b].coords[j].x - blocks[b].coords[i].x) <= 1 &&
                    std::abs(blocks[b].coords[j].y - blocks[b].coords[i].y) <= 1) {
                    reached[j] = 1;
                    stack.push_back(j);
                }
            }
        }
        for (auto j : members) CHECK(reached[j]);
        // Radius: every member within focus_radius of some member (the centre) in Euclidean distance.
        bool has_centre = false;
        for (auto c : members) {
            bool all = true;
            for (auto j : members) {
                const double dx = blocks[b].coords[j].x - blocks[b].coords[c].x;
                const double dy = blocks[b].coords[j].y - blocks[b].coords[c].y;
                all = all && blocks[b].slide[j] == blocks[b].slide[c] && std::sqrt(dx * dx + dy * dy) <= cfg.focus_radius;
            }
            has_centre = has_centre || all;
        }
        CHECK(has_centre);
        CHECK(blocks[b].grading.has_value());
        CHECK(blocks[b].grading->primary != Pattern::None);
    }
}

TEST_CASE("context-only pairs share the tile-feature multiset") {
    SynthConfig cfg;
    cfg.n_blocks = 10;
    cfg.context_only = true;
    cfg.seed = 9;
    const auto blocks = synth_generate(cfg);
    REQUIRE(blocks.size() == 10);
    for (std::size_t b = 0; b + 1 < blocks.size(); b += 2) {
        CHECK(blocks[b].label == DetectionLabel::Carcinoma);
        CHECK(blocks[b + 1].label == DetectionLabel::Benign);
        auto rows = [](const Block& blk) {
            std::vector<std::vector<float>> r;
            for (Eigen::Index i = 0; i < blk.features.rows(); ++i)
                r.emplace_back(blk.features.row(i).data(), blk.features.row(i).data() + blk.features.cols());
            std::sort(r.begin(), r.end());
            return r;
        };
        CHECK(rows(blocks[b]) == rows(blocks[b + 1]));
        CHECK(blocks[b].coords == blocks[b + 1].coords);
    }
}

TEST_CASE("synth configuration errors") {
    SynthConfig cfg;
    cfg.tiles_per_slide = {50, 40};
    CHECK_THROWS_AS(synth_generate(cfg), Error);
    cfg = SynthConfig{};
    cfg.noise_sigma = 0;
    expect_kind(ErrorKind::Config, [&] { synth_generate(cfg); });
    cfg = SynthConfig{};
    cfg.carcinoma_fraction = 1.5;
    expect_kind(ErrorKind::Config, [&] { synth_generate(cfg); });
}
