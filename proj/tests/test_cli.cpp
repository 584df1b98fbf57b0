#include "doctest.h"
#include "support.hpp"

#include "bytes.hpp"
#include "sct/cli.hpp"
#include "sct/config.hpp"
#include "sct/report.hpp"
#include "sct/weights.hpp"

#include <fstream>
#include <sstream>

using namespace sct;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out, err;
};

Run cli(std::vector<std::string> args) {
    args.insert(args.begin(), "sct");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) { return detail::read_file(p); }

std::vector<std::string> lines(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string l;
    while (std::getline(in, l)) out.push_back(l);
    return out;
}

const char* kSmallConfig =
    "# tiny model for fast tests\n"
    "synth.n_blocks = 24\n"
    "synth.dim = 8\n"
    "synth.tiles_min = 12\n"
    "synth.tiles_max = 20\n"
    "synth.carcinoma_fraction = 0.5\n"
    "model.stages = 1\n"
    "model.width = 8\n"
    "model.embed = 4\n"
    "model.heads = 2\n"
    "model.hidden = 8\n"
    "abmil.attention_dim = 8\n"
    "train.epochs = 2\n"
    "eval.bootstrap = 50\n";

fs::path write_config(const fs::path& dir) {
    const auto p = dir / "small.cfg";
    detail::write_file(p, kSmallConfig);
    return p;
}

// Byte offset of a tensor's first dimension in an SCTW payload.
std::size_t dim_offset(const std::string& bytes, const std::string& tensor) {
    std::size_t pos = 4 + 2;
    std::uint32_t count;
    std::memcpy(&count, bytes.data() + pos, 4);
    pos += 4;
    for (std::uint32_t t = 0; t < count; ++t) {
        std::uint16_t len;
        std::memcpy(&len, bytes.data() + pos, 2);
        const std::string name = bytes.substr(pos + 2, len);
        pos += 2 + len;
        const auto rank = static_cast<std::uint8_t>(bytes[pos]);
        pos += 1;
        if (name == tensor) return pos;
        std::size_t elems = 1;
        for (int d = 0; d < rank; ++d) {
            std::uint32_t v;
            std::memcpy(&v, bytes.data() + pos, 4);
            elems *= v;
            pos += 4;
        }
        pos += 4 * elems;
    }
    FAIL("tensor not found: " << tensor);
    return 0;
}

template <class P>
bool same_tensors(const P& a, const P& b) {
    std::vector<const Mat<float>*> ma, mb;
    P::visit(a, "", [&](const std::string&, const Mat<float>& m) { ma.push_back(&m); });
    P::visit(b, "", [&](const std::string&, const Mat<float>& m) { mb.push_back(&m); });
    if (ma.size() != mb.size()) return false;
    for (std::size_t i = 0; i < ma.size(); ++i) {
        if (ma[i]->rows() != mb[i]->rows() || ma[i]->cols() != mb[i]->cols()) return false;
        if (std::memcmp(ma[i]->data(), mb[i]->data(), sizeof(float) * static_cast<std::size_t>(ma[i]->size())) != 0) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("weights round trip is bitwise for both model kinds") {
    const auto sct = init_sct<float>(testing::small_sct(6, 2, HeadKind::Grading), 3);
    const auto back = decode_weights(encode_weights(sct));
    REQUIRE(std::holds_alternative<SctModelParams<float>>(back));
    CHECK(same_tensors(sct, std::get<SctModelParams<float>>(back)));
    CHECK(encode_weights(back) == encode_weights(sct));

    AbmilConfig ac;
    ac.input_dim = 6;
    ac.gated = false;
    const auto ab = init_abmil<float>(ac, 4);
    const auto dir = testing::scratch_dir("weights");
    save_weights(dir / "a.sctw", ab);
    const auto loaded = load_weights(dir / "a.sctw");
    REQUIRE(std::holds_alternative<AbmilParams<float>>(loaded));
    CHECK(!std::get<AbmilParams<float>>(loaded).config.gated);
    CHECK(same_tensors(ab, std::get<AbmilParams<float>>(loaded)));
}

TEST_CASE("corrupted weight files map to the right error classes") {
    const auto model = init_sct<float>(testing::small_sct(6, 1), 3);
    const auto bytes = encode_weights(model);

    auto expect = [](const std::string& b, ErrorKind kind, const std::string& mention) {
        try {
            decode_weights(b);
            FAIL("expected an error");
        } catch (const Error& e) {
            CHECK(e.kind() == kind);
            CHECK_MESSAGE(std::string(e.what()).find(mention) != std::string::npos, e.what());
        }
    };
    expect(bytes.substr(0, bytes.size() - 9), ErrorKind::Corruption, "checksum");
    expect(bytes.substr(0, 8), ErrorKind::Corruption, "");

    auto flipped = bytes;
    flipped[bytes.size() / 2] ^= 0x10;
    expect(flipped, ErrorKind::Corruption, "checksum");

    // One dimension edited, checksum recomputed: the shape check must catch it.
    auto edited = bytes;
    const auto at = dim_offset(edited, "stage0.sscsa.w_c");
    std::uint32_t rows;
    std::memcpy(&rows, edited.data() + at, 4);
    const std::uint32_t new_rows = rows + 1;
    std::memcpy(edited.data() + at, &new_rows, 4);
    const auto payload = edited.substr(0, edited.size() - 4);
    const auto crc = crc32_of(payload);
    edited = payload + testing::le_bytes<std::uint32_t>(crc);
    expect(edited, ErrorKind::Schema, "stage0.sscsa.w_c");

    auto magic = bytes;
    magic[0] = 'X';
    expect(magic, ErrorKind::Format, "magic");
}

TEST_CASE("config parsing") {
    const auto cfg = parse_config("synth.dim = 12\nmodel.stages = 2\nmodel.width = 16, 32\ntrain.lr = 0.01\n", "t");
    CHECK(cfg.synth.dim == 12);
    CHECK(cfg.model.sct.input_dim == 12);
    REQUIRE(cfg.model.sct.stages.size() == 2);
    CHECK(cfg.model.sct.stages[1].width == 32);
    CHECK(cfg.train.lr == 0.01);
    CHECK(cfg.has("train.lr"));
    CHECK(!cfg.has("train.epochs"));

    auto usage = [](const std::string& text, const std::string& mention) {
        try {
            parse_config(text, "c.cfg");
            FAIL("expected an error");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::Usage);
            CHECK_MESSAGE(std::string(e.what()).find(mention) != std::string::npos, e.what());
        }
    };
    usage("synth.dim = 8\nbogus.key = 1\n", "c.cfg:2");
    usage("train.lr = 1\ntrain.lr = 2\n", "duplicate");
    usage("train.epochs = many\n", "c.cfg:1");
    for (const auto& [key, doc] : config_keys()) CHECK(!doc.empty());
}

TEST_CASE("eval report: summary row from confusion counts") {
    EvalReport r;
    r.rows.push_back(summary_from_counts(209, 11, 655, 15, 0.5));
    const auto csv = lines(eval_csv(r));
    REQUIRE(csv.size() == 2);
    CHECK(csv[0] == kEvalHeader);
    CHECK(csv[1].find(",0.950000,0.977612,") != std::string::npos);
    CHECK(csv[1].rfind("all,890,nan,0.500000,209,15,655,11,", 0) == 0);
}

TEST_CASE("sweep report row counts") {
    Rng rng(1);
    std::vector<double> s(30), p(30);
    std::vector<int> y(30);
    for (int i = 0; i < 30; ++i) {
        y[i] = i % 3 == 0;
        s[i] = rng.uniform();
        p[i] = rng.uniform();
    }
    const auto curves = threshold_sweep(s, p, y, default_threshold_grid());
    CHECK(lines(sweep_csv(curves)).size() == 200);
    const auto empty = lines(sweep_csv(SweepCurves{}));
    REQUIRE(empty.size() == 1);
    CHECK(empty[0].rfind("tau,t_lo,t_hi,", 0) == 0);
    CHECK(format_number(0.95) == "0.950000");
    CHECK(format_number(std::nan("")) == "nan");
    CHECK(plot_path("r.csv") == fs::path("r.plot.csv"));
}

TEST_CASE("cli: usage errors exit 1") {
    CHECK(cli({"bogus"}).code == 1);
    CHECK(!cli({"bogus"}).err.empty());
    CHECK(cli({}).code == 1);
    CHECK(cli({"synth"}).code == 1);
    const auto dir = testing::scratch_dir("cli_usage");
    detail::write_file(dir / "bad.cfg", "nonsense.key = 3\n");
    CHECK(cli({"synth", "--config", (dir / "bad.cfg").string(), "--out", (dir / "x.sctb").string()}).code == 1);
}

TEST_CASE("cli: synth is byte-identical for a fixed seed") {
    const auto dir = testing::scratch_dir("cli_synth");
    const auto cfg = write_config(dir).string();
    REQUIRE(cli({"synth", "--config", cfg, "--out", (dir / "a.sctb").string(), "--seed", "7"}).code == 0);
    REQUIRE(cli({"synth", "--config", cfg, "--out", (dir / "b.sctb").string(), "--seed", "7"}).code == 0);
    CHECK(slurp(dir / "a.sctb") == slurp(dir / "b.sctb"));
    REQUIRE(cli({"synth", "--config", cfg, "--out", (dir / "c.sctb").string(), "--seed", "8"}).code == 0);
    CHECK(slurp(dir / "a.sctb") != slurp(dir / "c.sctb"));
    CHECK(load_blocks(dir / "a.sctb").size() == 24);
}

TEST_CASE("cli: train, eval, screen, sweep, export end to end") {
    const auto dir = testing::scratch_dir("cli_e2e");
    const auto cfg = write_config(dir).string();
    const auto data = (dir / "d.sctb").string();
    REQUIRE(cli({"synth", "--config", cfg, "--out", data, "--seed", "3"}).code == 0);

    const auto w = (dir / "w.sctw").string();
    const auto tr = cli({"train", "--config", cfg, "--data", data, "--out", w, "--history", (dir / "h.csv").string()});
    INFO(tr.err);
    REQUIRE(tr.code == 0);
    CHECK(lines(slurp(dir / "h.csv"))[0] == "epoch,loss,val_auc");
    // Retraining is byte-identical.
    REQUIRE(cli({"train", "--config", cfg, "--data", data, "--out", (dir / "w2.sctw").string()}).code == 0);
    CHECK(slurp(w) == slurp(dir / "w2.sctw"));

    const auto report = dir / "r.csv";
    REQUIRE(cli({"eval", "--config", cfg, "--data", data, "--weights", w, "--report", report.string()}).code == 0);
    const auto rows = lines(slurp(report));
    CHECK(rows[0] == kEvalHeader);
    CHECK(rows[1].rfind("all,24,", 0) == 0);
    CHECK(fs::exists(dir / "r.plot.csv"));
    CHECK(lines(slurp(dir / "r.plot.csv"))[0] == "series,x,y");

    const auto ws = (dir / "s.sctw").string(), wp = (dir / "p.sctw").string();
    REQUIRE(cli({"train", "--config", cfg, "--data", data, "--out", ws, "--task", "sensitive", "--model", "abmil"}).code == 0);
    REQUIRE(cli({"train", "--config", cfg, "--data", data, "--out", wp, "--task", "specific", "--model", "abmil"}).code == 0);
    REQUIRE(cli({"screen", "--data", data, "--sensitive", ws, "--specific", wp, "--out", (dir / "dec.csv").string()}).code == 0);
    CHECK(lines(slurp(dir / "dec.csv")).size() == 25);
    const auto sw = cli({"sweep", "--data", data, "--sensitive", ws, "--specific", wp, "--report", (dir / "sw.csv").string()});
    REQUIRE(sw.code == 0);
    CHECK(lines(slurp(dir / "sw.csv")).size() == 200);
    CHECK(fs::exists(dir / "sw.plot.csv"));

    REQUIRE(cli({"export-embeddings", "--data", data, "--weights", w, "--out", (dir / "e.csv").string()}).code == 0);
    CHECK(lines(slurp(dir / "e.csv")).size() == 25);

    // Grading task and its report rows.
    const auto wg = (dir / "g.sctw").string();
    REQUIRE(cli({"train", "--config", cfg, "--data", data, "--out", wg, "--task", "grading"}).code == 0);
    REQUIRE(cli({"eval", "--config", cfg, "--data", data, "--weights", wg, "--report", (dir / "g.csv").string()}).code == 0);
    const auto g = slurp(dir / "g.csv");
    CHECK(g.find("\nisup,") != std::string::npos);
    CHECK(g.find("\ngg3plus,") != std::string::npos);
}

TEST_CASE("cli: data and file errors exit 2") {
    const auto dir = testing::scratch_dir("cli_errors");
    const auto cfg = write_config(dir).string();
    const auto data = (dir / "d.sctb").string();
    REQUIRE(cli({"synth", "--config", cfg, "--out", data, "--seed", "3"}).code == 0);
    const auto model = init_sct<float>(testing::small_sct(8, 1), 1);
    const auto bytes = encode_weights(model);
    detail::write_file(dir / "trunc.sctw", bytes.substr(0, bytes.size() / 2));
    const auto r = cli({"eval", "--data", data, "--weights", (dir / "trunc.sctw").string(), "--report", (dir / "r.csv").string()});
    CHECK(r.code == 2);
    CHECK(!r.err.empty());

    // Model trained for another input dimension.
    save_weights(dir / "d16.sctw", init_sct<float>(testing::small_sct(16, 1), 1));
    CHECK(cli({"eval", "--data", data, "--weights", (dir / "d16.sctw").string(), "--report", (dir / "r.csv").string()}).code == 2);
    CHECK(cli({"eval", "--data", (dir / "missing.sctb").string(), "--weights", (dir / "d16.sctw").string(), "--report",
               (dir / "r.csv").string()}).code == 2);
}

TEST_CASE("cli: gradcheck exit status follows the tolerance") {
    const auto ok = cli({"gradcheck", "--op", "linear", "--trials", "3", "--seed", "3"});
    CHECK(ok.code == 0);
    CHECK(ok.out.find("linear") != std::string::npos);
    CHECK(cli({"gradcheck", "--op", "mha", "--trials", "2", "--tolerance", "1e-30"}).code == 3);
    CHECK(cli({"gradcheck", "--op", "nope"}).code == 1);
}
