#include "sct/config.hpp"

#include "bytes.hpp"

#include <charconv>
#include <functional>
#include <sstream>

namespace sct {

const std::vector<std::pair<std::string, std::string>>& config_keys() {
    static const std::vector<std::pair<std::string, std::string>> keys{
        {"synth.n_blocks", "number of blocks to generate"},
        {"synth.tiles_min", "minimum tiles per slide"},
        {"synth.tiles_max", "maximum tiles per slide"},
        {"synth.slides_min", "minimum slides per block"},
        {"synth.slides_max", "maximum slides per block"},
        {"synth.dim", "tile embedding dimension D"},
        {"synth.focus_radius", "maximum radius of a planted carcinoma focus, in tiles"},
        {"synth.carcinoma_shift", "feature shift of focus tiles along the carcinoma direction"},
        {"synth.noise_sigma", "per-feature Gaussian noise"},
        {"synth.carcinoma_fraction", "fraction of carcinoma blocks"},
        {"synth.pattern_mix", "9 comma-separated weights over (primary, secondary) in {3,4,5}^2"},
        {"synth.context_only", "true: labels depend only on the spatial layout of marked tiles"},
        {"synth.seed", "generator seed"},
        {"train.epochs", "training epochs"},
        {"train.batch_size", "blocks per optimizer step"},
        {"train.lr", "Adam learning rate"},
        {"train.beta1", "Adam beta1"},
        {"train.beta2", "Adam beta2"},
        {"train.eps", "Adam epsilon"},
        {"train.w_benign", "loss weight of benign blocks"},
        {"train.w_carcinoma", "loss weight of carcinoma blocks"},
        {"train.task", "detection | grading | sensitive | specific"},
        {"train.seed", "initialisation and shuffling seed"},
        {"train.patience", "early-stopping patience in epochs"},
        {"train.val_fraction", "fraction of the training data held out for model selection"},
        {"model.kind", "sct | abmil"},
        {"model.stages", "number of SCT stages"},
        {"model.width", "per-stage projection width Z (one value or a comma list)"},
        {"model.embed", "per-stage ESA embedding width C"},
        {"model.kernel", "per-stage receptive field size k (odd)"},
        {"model.pool", "per-stage pooling size p"},
        {"model.stride", "per-stage pooling stride s (must equal p)"},
        {"model.pool_mode", "per-stage max | avg"},
        {"model.heads", "per-stage attention heads n_h"},
        {"model.hidden", "per-stage MLP hidden width H"},
        {"model.aggregate", "block aggregation of final tokens: mean | max"},
        {"abmil.attention_dim", "ABMIL attention width L"},
        {"abmil.gated", "true: gated attention"},
        {"sweep.grid", "'default' or comma-separated ascending thresholds in [0.5, 1]"},
        {"sweep.max_fnr", "constraint on carcinoma ruled out / all carcinoma"},
        {"sweep.max_fpr", "constraint on benign ruled in / all benign"},
        {"screen.t_lo", "rule-out threshold on the sensitive model"},
        {"screen.t_hi", "rule-in threshold on the specific model"},
        {"eval.threshold", "decision threshold for confusion counts"},
        {"eval.bootstrap", "kappa bootstrap resamples"},
        {"eval.bootstrap_seed", "kappa bootstrap seed"},
    };
    return keys;
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(trim(item));
    return out;
}

struct Parser {
    std::string where;

    [[noreturn]] void bad(const std::string& msg) const { fail(ErrorKind::Usage, where + ": " + msg); }

    long long integer(const std::string& v) const {
        long long x = 0;
        const auto* end = v.data() + v.size();
        const auto [p, ec] = std::from_chars(v.data(), end, x);
        if (ec != std::errc() || p != end) bad("expected an integer, got '" + v + "'");
        return x;
    }
    int small_int(const std::string& v) const {
        const auto x = integer(v);
        if (x < -1000000000LL || x > 1000000000LL) bad("integer out of range: " + v);
        return static_cast<int>(x);
    }
    std::uint64_t seed(const std::string& v) const {
        std::uint64_t x = 0;
        const auto* end = v.data() + v.size();
        const auto [p, ec] = std::from_chars(v.data(), end, x);
        if (ec != std::errc() || p != end) bad("expected a non-negative integer seed, got '" + v + "'");
        return x;
    }
    double real(const std::string& v) const {
        std::size_t used = 0;
        double x = 0;
        try {
            x = std::stod(v, &used);
        } catch (...) {
            bad("expected a number, got '" + v + "'");
        }
        if (used != v.size() || !std::isfinite(x)) bad("expected a finite number, got '" + v + "'");
        return x;
    }
    bool boolean(const std::string& v) const {
        if (v == "true" || v == "1") return true;
        if (v == "false" || v == "0") return false;
        bad("expected true or false, got '" + v + "'");
    }
};

}  // namespace

RunConfig parse_config(const std::string& text, const std::string& origin) {
    RunConfig cfg;
    std::map<std::string, std::string> stage_lists;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        Parser p{origin + ":" + std::to_string(lineno)};
        const auto eq = line.find('=');
        if (eq == std::string::npos) p.bad("expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        bool known = false;
        for (const auto& [k, d] : config_keys()) known = known || k == key;
        if (!known) p.bad("unknown key '" + key + "'");
        if (cfg.given.count(key)) p.bad("duplicate key '" + key + "'");
        if (val.empty()) p.bad("empty value for '" + key + "'");
        cfg.given[key] = val;

        auto& s = cfg.synth;
        auto& t = cfg.train;
        if (key == "synth.n_blocks") s.n_blocks = p.small_int(val);
        else if (key == "synth.tiles_min") s.tiles_per_slide.lo = p.small_int(val);
        else if (key == "synth.tiles_max") s.tiles_per_slide.hi = p.small_int(val);
        else if (key == "synth.slides_min") s.slides_per_block.lo = p.small_int(val);
        else if (key == "synth.slides_max") s.slides_per_block.hi = p.small_int(val);
        else if (key == "synth.dim") s.dim = p.small_int(val);
        else if (key == "synth.focus_radius") s.focus_radius = p.real(val);
        else if (key == "synth.carcinoma_shift") s.carcinoma_shift = p.real(val);
        else if (key == "synth.noise_sigma") s.noise_sigma = p.real(val);
        else if (key == "synth.carcinoma_fraction") s.carcinoma_fraction = p.real(val);
        else if (key == "synth.pattern_mix") {
            const auto items = split_list(val);
            if (items.size() != 9) p.bad("synth.pattern_mix needs 9 weights");
            for (std::size_t i = 0; i < 9; ++i) s.pattern_mix[i] = p.real(items[i]);
        } else if (key == "synth.context_only") s.context_only = p.boolean(val);
        else if (key == "synth.seed") s.seed = p.seed(val);
        else if (key == "train.epochs") t.epochs = p.small_int(val);
        else if (key == "train.batch_size") t.batch_size = p.small_int(val);
        else if (key == "train.lr") t.lr = p.real(val);
        else if (key == "train.beta1") t.beta1 = p.real(val);
        else if (key == "train.beta2") t.beta2 = p.real(val);
        else if (key == "train.eps") t.eps = p.real(val);
        else if (key == "train.w_benign") {
            auto w = t.weights.value_or(ClassWeights{0, 0});
            w.benign = p.real(val);
            t.weights = w;
        } else if (key == "train.w_carcinoma") {
            auto w = t.weights.value_or(ClassWeights{0, 0});
            w.carcinoma = p.real(val);
            t.weights = w;
        } else if (key == "train.task") {
            try {
                t.task = parse_task(val);
            } catch (const Error& e) {
                p.bad(e.what());
            }
        } else if (key == "train.seed") t.seed = p.seed(val);
        else if (key == "train.patience") t.patience = p.small_int(val);
        else if (key == "train.val_fraction") t.val_fraction = p.real(val);
        else if (key == "model.kind") {
            try {
                cfg.model.kind = parse_model_kind(val);
            } catch (const Error& e) {
                p.bad(e.what());
            }
        } else if (key == "model.stages") {
            const int n = p.small_int(val);
            if (n < 1 || n > 16) p.bad("model.stages must lie in [1, 16]");
            cfg.model.sct.stages.resize(static_cast<std::size_t>(n), cfg.model.sct.stages.back());
        } else if (key == "model.aggregate") {
            if (val == "mean") cfg.model.sct.aggregate = Aggregation::Mean;
            else if (val == "max") cfg.model.sct.aggregate = Aggregation::Max;
            else p.bad("model.aggregate must be mean or max");
        } else if (key.rfind("model.", 0) == 0) {
            stage_lists[key] = p.where + "\n" + val;  // resolved once the stage count is known
        } else if (key == "abmil.attention_dim") cfg.model.abmil.attention_dim = p.small_int(val);
        else if (key == "abmil.gated") cfg.model.abmil.gated = p.boolean(val);
        else if (key == "sweep.grid") {
            if (val != "default") {
                cfg.sweep_grid.clear();
                for (const auto& item : split_list(val)) cfg.sweep_grid.push_back(p.real(item));
            }
        } else if (key == "sweep.max_fnr") cfg.max_fnr = p.real(val);
        else if (key == "sweep.max_fpr") cfg.max_fpr = p.real(val);
        else if (key == "screen.t_lo") cfg.t_lo = p.real(val);
        else if (key == "screen.t_hi") cfg.t_hi = p.real(val);
        else if (key == "eval.threshold") cfg.eval_threshold = p.real(val);
        else if (key == "eval.bootstrap") cfg.bootstrap = p.small_int(val);
        else if (key == "eval.bootstrap_seed") cfg.bootstrap_seed = p.seed(val);
    }

    auto& stages = cfg.model.sct.stages;
    for (const auto& [key, packed] : stage_lists) {
        const auto nl = packed.find('\n');
        Parser p{packed.substr(0, nl)};
        const auto items = split_list(packed.substr(nl + 1));
        if (items.size() != 1 && items.size() != stages.size())
            p.bad(key + " needs 1 or " + std::to_string(stages.size()) + " values");
        for (std::size_t s = 0; s < stages.size(); ++s) {
            const std::string& v = items.size() == 1 ? items[0] : items[s];
            auto& st = stages[s];
            if (key == "model.width") st.width = p.small_int(v);
            else if (key == "model.embed") st.embed = p.small_int(v);
            else if (key == "model.kernel") st.kernel = p.small_int(v);
            else if (key == "model.pool") st.pool = p.small_int(v);
            else if (key == "model.stride") st.stride = p.small_int(v);
            else if (key == "model.heads") st.heads = p.small_int(v);
            else if (key == "model.hidden") st.hidden = p.small_int(v);
            else if (key == "model.pool_mode") {
                if (v == "max") st.pool_mode = PoolMode::Max;
                else if (v == "avg") st.pool_mode = PoolMode::Avg;
                else p.bad("model.pool_mode must be max or avg");
            }
        }
    }
    if (cfg.train.weights) {
        const auto d = default_weights(cfg.train.task);
        if (!cfg.has("train.w_benign")) cfg.train.weights->benign = d.benign;
        if (!cfg.has("train.w_carcinoma")) cfg.train.weights->carcinoma = d.carcinoma;
    }
    cfg.model.abmil.input_dim = cfg.model.sct.input_dim = cfg.synth.dim;
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
    return parse_config(detail::read_file(path), path.filename().string());
}

}  // namespace sct
