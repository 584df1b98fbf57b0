#include "sct/cli.hpp"

#include "sct/config.hpp"
#include "sct/report.hpp"
#include "sct/weights.hpp"

#include "bytes.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <cstdlib>
#include <optional>

namespace sct {

namespace {

struct Common {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    int threads = 1;
};

RunConfig config_of(const Common& c) { return c.config_path.empty() ? parse_config("") : load_config(c.config_path); }

// Command-line flag, then the config file, then SCT_SEED, then the built-in default.
std::uint64_t resolve_seed(const Common& c, const RunConfig& cfg, const char* key, std::uint64_t from_config) {
    if (c.seed) return *c.seed;
    if (cfg.has(key)) return from_config;
    if (const char* env = std::getenv("SCT_SEED"); env && *env) {
        std::uint64_t v = 0;
        const std::string s(env);
        const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc() || p != s.data() + s.size()) fail(ErrorKind::Usage, "SCT_SEED must be a non-negative integer");
        return v;
    }
    return from_config;
}

std::vector<int> binary_labels(const std::vector<Block>& blocks) {
    std::vector<int> labels;
    for (const auto& b : blocks) {
        if (b.label == DetectionLabel::Unknown) fail(ErrorKind::Data, "block '" + b.id + "' has an Unknown label");
        labels.push_back(b.label == DetectionLabel::Carcinoma ? 1 : 0);
    }
    return labels;
}

int input_dim_of(const TrainedModel& m) {
    if (const auto* s = std::get_if<SctModelParams<float>>(&m)) return s->config.input_dim;
    return std::get<AbmilParams<float>>(m).config.input_dim;
}

void check_dims(const std::vector<Block>& blocks, const TrainedModel& m, const std::string& weights) {
    const int d = input_dim_of(m);
    for (const auto& b : blocks)
        if (b.dim() != d)
            fail(ErrorKind::Schema, "block '" + b.id + "' has D=" + std::to_string(b.dim()) + " but " + weights + " expects D=" +
                                        std::to_string(d));
}

std::vector<double> detection_scores(const TrainedModel& m, const std::vector<Block>& blocks) {
    std::vector<double> s;
    s.reserve(blocks.size());
    for (const auto& b : blocks) s.push_back(predict_score(m, b));
    return s;
}

std::string label_name(DetectionLabel l) {
    if (l == DetectionLabel::Benign) return "benign";
    if (l == DetectionLabel::Carcinoma) return "carcinoma";
    return "unknown";
}

int cmd_synth(const Common& c, const std::string& out_path, std::optional<int> n_blocks, bool context_only, std::ostream& out) {
    RunConfig cfg = config_of(c);
    cfg.synth.seed = resolve_seed(c, cfg, "synth.seed", cfg.synth.seed);
    if (n_blocks) cfg.synth.n_blocks = *n_blocks;
    if (context_only) cfg.synth.context_only = true;
    const auto blocks = synth_generate(cfg.synth);
    write_blocks(out_path, blocks);
    long pos = 0;
    for (const auto& b : blocks) pos += b.label == DetectionLabel::Carcinoma;
    out << "wrote " << blocks.size() << " blocks (" << pos << " carcinoma) to " << out_path << "\n";
    return 0;
}

struct TrainArgs {
    std::string data, val_data, out, history, model, task;
    std::optional<int> epochs;
};

int cmd_train(const Common& c, const TrainArgs& a, std::ostream& out) {
    RunConfig cfg = config_of(c);
    cfg.train.seed = resolve_seed(c, cfg, "train.seed", cfg.train.seed);
    cfg.train.threads = c.threads;
    if (!a.model.empty()) cfg.model.kind = parse_model_kind(a.model);
    if (!a.task.empty()) cfg.train.task = parse_task(a.task);
    if (a.epochs) cfg.train.epochs = *a.epochs;
    const auto data = load_blocks(a.data);
    if (data.empty()) fail(ErrorKind::Data, a.data + " contains no blocks");
    cfg.model.sct.input_dim = cfg.model.abmil.input_dim = data.front().dim();

    TrainResult result = a.val_data.empty() ? train(data, cfg.train, cfg.model)
                                            : train(data, load_blocks(a.val_data), cfg.train, cfg.model);
    save_weights(a.out, result.model);
    const auto& h = result.history;
    if (!a.history.empty()) {
        std::string csv = "epoch,loss,val_auc\n";
        for (std::size_t e = 0; e < h.loss.size(); ++e)
            csv += std::to_string(e + 1) + "," + format_number(h.loss[e]) + "," + format_number(h.val_auc[e]) + "\n";
        detail::write_file(a.history, csv);
    }
    out << "trained " << to_string(cfg.model.kind) << " (" << to_string(cfg.train.task) << ") for " << h.loss.size()
        << " epochs in " << format_number(h.seconds.empty() ? 0.0 : h.seconds.back()) << " s; best epoch "
        << h.best_epoch + 1;
    if (h.best_epoch >= 0) out << ", validation AUC " << format_number(h.val_auc[static_cast<std::size_t>(h.best_epoch)]);
    out << "\nwrote " << a.out << "\n";
    return 0;
}

int cmd_eval(const Common& c, const std::string& data_path, const std::string& weights_path, const std::string& report,
             std::optional<double> threshold, std::ostream& out) {
    const RunConfig cfg = config_of(c);
    const auto model = load_weights(weights_path);
    const auto blocks = load_blocks(data_path);
    if (blocks.empty()) fail(ErrorKind::Data, data_path + " contains no blocks");
    check_dims(blocks, model, weights_path);
    const double thr = threshold.value_or(cfg.eval_threshold);
    const KappaOptions kopt{cfg.bootstrap, cfg.bootstrap_seed};
    EvalReport rep;
    const auto* sct = std::get_if<SctModelParams<float>>(&model);
    if (sct && sct->config.head == HeadKind::Grading) {
        std::vector<GradeDistributions> pred;
        for (const auto& b : blocks) pred.push_back(model_forward_grade(b, *sct));
        rep = evaluate_grading(pred, blocks, thr, kopt);
    } else {
        rep = evaluate_detection(detection_scores(model, blocks), binary_labels(blocks), thr, kopt);
    }
    write_eval_report(report, rep);
    const auto& all = rep.rows.front();
    out << "AUC " << format_number(all.auc) << ", sensitivity " << format_number(all.sensitivity) << ", specificity "
        << format_number(all.specificity) << " at threshold " << format_number(thr) << "\nwrote " << report << "\n";
    return 0;
}

struct DualScores {
    std::vector<Block> blocks;
    std::vector<double> sens, spec;
};

DualScores dual_scores(const std::string& data, const std::string& sens_path, const std::string& spec_path) {
    DualScores d;
    d.blocks = load_blocks(data);
    const auto sens = load_weights(sens_path);
    const auto spec = load_weights(spec_path);
    check_dims(d.blocks, sens, sens_path);
    check_dims(d.blocks, spec, spec_path);
    d.sens = detection_scores(sens, d.blocks);
    d.spec = detection_scores(spec, d.blocks);
    return d;
}

int cmd_screen(const Common& c, const std::string& data, const std::string& sens, const std::string& spec,
               const std::string& out_path, std::optional<double> t_lo, std::optional<double> t_hi, std::ostream& out) {
    const RunConfig cfg = config_of(c);
    const double lo = t_lo.value_or(cfg.t_lo), hi = t_hi.value_or(cfg.t_hi);
    const auto d = dual_scores(data, sens, spec);
    std::string csv = "block_id,label,p_sensitive,p_specific,t_lo,t_hi,decision\n";
    long counts[3] = {0, 0, 0};
    for (std::size_t i = 0; i < d.blocks.size(); ++i) {
        const auto o = dual_decide(d.sens[i], d.spec[i], lo, hi);
        ++counts[static_cast<int>(o.decision)];
        csv += d.blocks[i].id + "," + label_name(d.blocks[i].label) + "," + format_number(o.p_sensitive) + "," +
               format_number(o.p_specific) + "," + format_number(lo) + "," + format_number(hi) + "," + to_string(o.decision) + "\n";
    }
    detail::write_file(out_path, csv);
    out << "rule_out_benign " << counts[0] << ", rule_in_carcinoma " << counts[1] << ", equivocal " << counts[2] << "\nwrote "
        << out_path << "\n";
    return 0;
}

int cmd_sweep(const Common& c, const std::string& data, const std::string& sens, const std::string& spec,
              const std::string& report, std::optional<double> max_fnr, std::optional<double> max_fpr, std::ostream& out) {
    const RunConfig cfg = config_of(c);
    const auto d = dual_scores(data, sens, spec);
    const auto grid = cfg.sweep_grid.empty() ? default_threshold_grid() : cfg.sweep_grid;
    const auto curves = threshold_sweep(d.sens, d.spec, binary_labels(d.blocks), grid);
    write_sweep_report(report, curves);
    const auto choice = choose_thresholds(curves, max_fnr.value_or(cfg.max_fnr), max_fpr.value_or(cfg.max_fpr));
    const auto& p = curves.points[choice.index];
    out << (choice.feasible ? "chosen" : "no feasible point; strictest") << " tau " << format_number(choice.tau) << " (t_lo "
        << format_number(choice.t_lo) << ", t_hi " << format_number(choice.t_hi) << "): screened "
        << format_number(p.screened_total) << ", FNR " << format_number(p.fnr) << ", FPR " << format_number(p.fpr)
        << "\nwrote " << report << "\n";
    return 0;
}

int cmd_gradcheck(const Common& c, const std::string& op, double eps, int trials, double tolerance, std::ostream& out) {
    const std::uint64_t seed = resolve_seed(c, parse_config(""), "", 1);
    const auto ops = op == "all" ? all_grad_ops() : std::vector<GradOp>{parse_grad_op(op)};
    double worst = 0;
    std::string worst_name;
    for (auto o : ops) {
        const auto r = gradcheck(o, trials, eps, seed);
        out << to_string(o) << ": max relative error " << format_number(r.worst()) << " (" << r.worst_tensor() << ")\n";
        if (r.worst() >= worst) {
            worst = r.worst();
            worst_name = to_string(o) + ":" + r.worst_tensor();
        }
    }
    const bool pass = worst <= tolerance;
    out << (pass ? "PASS" : "FAIL") << " worst " << format_number(worst) << " at " << worst_name << "\n";
    return pass ? 0 : exit_code(ErrorKind::Divergence);
}

int cmd_export(const std::string& data, const std::string& weights, const std::string& out_path, std::ostream& out) {
    const auto model = load_weights(weights);
    const auto blocks = load_blocks(data);
    check_dims(blocks, model, weights);
    std::string csv;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        std::vector<double> e;
        if (const auto* s = std::get_if<SctModelParams<float>>(&model)) {
            e = sct_embedding(blocks[i], *s);
        } else {
            const auto& p = std::get<AbmilParams<float>>(model);
            const auto o = abmil_forward(p, Mat<float>(blocks[i].features), static_cast<AbmilTrace<float>*>(nullptr));
            for (Eigen::Index d = 0; d < o.pooled.cols(); ++d) e.push_back(o.pooled(0, d));
        }
        if (i == 0) {
            csv = "block_id,label";
            for (std::size_t d = 0; d < e.size(); ++d) csv += ",e" + std::to_string(d);
            csv += "\n";
        }
        csv += blocks[i].id + "," + label_name(blocks[i].label);
        for (double v : e) csv += "," + format_number(v);
        csv += "\n";
    }
    if (blocks.empty()) csv = "block_id,label\n";
    detail::write_file(out_path, csv);
    out << "wrote " << blocks.size() << " embeddings to " << out_path << "\n";
    return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Sparse convolutional transformer for tissue blocks: data synthesis, training, evaluation and screening"};
    app.name("sct");
    app.require_subcommand(1);
    app.fallthrough();
    Common common;
    app.add_option("--threads", common.threads, "worker threads for batch gradients (default 1)")->check(CLI::PositiveNumber);

    const auto add_common = [&](CLI::App* sub, bool seeded) {
        sub->add_option("--config", common.config_path, "flat key=value config file")->check(CLI::ExistingFile);
        if (seeded) sub->add_option("--seed", common.seed, "seed (overrides config; SCT_SEED is the fallback)");
    };

    auto* synth = app.add_subcommand("synth", "generate a synthetic SCTB dataset");
    std::string synth_out;
    std::optional<int> n_blocks;
    bool context_only = false;
    add_common(synth, true);
    synth->add_option("--out", synth_out, "output .sctb")->required();
    synth->add_option("--n-blocks", n_blocks, "number of blocks (overrides config)");
    synth->add_flag("--context-only", context_only, "labels depend only on tile layout");

    auto* trn = app.add_subcommand("train", "train an SCT or ABMIL model");
    TrainArgs targs;
    add_common(trn, true);
    trn->add_option("--data", targs.data, "training .sctb")->required();
    trn->add_option("--val-data", targs.val_data, "explicit validation .sctb (default: stratified hold-out)");
    trn->add_option("--out", targs.out, "output .sctw")->required();
    trn->add_option("--model", targs.model, "sct | abmil");
    trn->add_option("--task", targs.task, "detection | grading | sensitive | specific");
    trn->add_option("--epochs", targs.epochs, "epochs (overrides config)");
    trn->add_option("--history", targs.history, "per-epoch loss / validation AUC CSV");

    auto* ev = app.add_subcommand("eval", "evaluate a model and write a CSV report");
    std::string ev_data, ev_weights, ev_report;
    std::optional<double> ev_thr;
    add_common(ev, false);
    ev->add_option("--data", ev_data, ".sctb to evaluate")->required();
    ev->add_option("--weights", ev_weights, ".sctw")->required();
    ev->add_option("--report", ev_report, "output CSV")->required();
    ev->add_option("--threshold", ev_thr, "decision threshold (default 0.5)");

    auto* scr = app.add_subcommand("screen", "dual-model rule-out / rule-in decisions per block");
    std::string sc_data, sc_sens, sc_spec, sc_out;
    std::optional<double> sc_lo, sc_hi;
    add_common(scr, false);
    scr->add_option("--data", sc_data, ".sctb")->required();
    scr->add_option("--sensitive", sc_sens, "sensitive model .sctw")->required();
    scr->add_option("--specific", sc_spec, "specific model .sctw")->required();
    scr->add_option("--out", sc_out, "output CSV")->required();
    scr->add_option("--t-lo", sc_lo, "rule-out threshold (default 0.05)");
    scr->add_option("--t-hi", sc_hi, "rule-in threshold (default 0.95)");

    auto* swp = app.add_subcommand("sweep", "threshold trade-off curves for a sensitive/specific model pair");
    std::string sw_data, sw_sens, sw_spec, sw_report;
    std::optional<double> sw_fnr, sw_fpr;
    add_common(swp, false);
    swp->add_option("--data", sw_data, ".sctb with known labels")->required();
    swp->add_option("--sensitive", sw_sens, "sensitive model .sctw")->required();
    swp->add_option("--specific", sw_spec, "specific model .sctw")->required();
    swp->add_option("--report", sw_report, "output CSV")->required();
    swp->add_option("--max-fnr", sw_fnr, "FNR constraint for the threshold choice (default 0.01)");
    swp->add_option("--max-fpr", sw_fpr, "FPR constraint for the threshold choice (default 0.02)");

    auto* gc = app.add_subcommand("gradcheck", "compare analytic gradients with central differences");
    std::string gc_op = "all";
    double gc_eps = 1e-5, gc_tol = 1e-4;
    int gc_trials = 20;
    gc->add_option("--seed", common.seed, "seed (SCT_SEED is the fallback)");
    gc->add_option("--op", gc_op, "kernel to check, or 'all'");
    gc->add_option("--eps", gc_eps, "finite-difference step");
    gc->add_option("--trials", gc_trials, "random instances per kernel")->check(CLI::PositiveNumber);
    gc->add_option("--tolerance", gc_tol, "maximum accepted relative error");

    auto* ex = app.add_subcommand("export-embeddings", "write block embeddings as CSV");
    std::string ex_data, ex_weights, ex_out;
    ex->add_option("--data", ex_data, ".sctb")->required();
    ex->add_option("--weights", ex_weights, ".sctw")->required();
    ex->add_option("--out", ex_out, "output CSV")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == static_cast<int>(CLI::ExitCodes::Success)) {
            out << app.help();
            return 0;
        }
        err << "error: " << e.what() << "\n\n" << app.help();
        return exit_code(ErrorKind::Usage);
    }

    try {
        if (*synth) return cmd_synth(common, synth_out, n_blocks, context_only, out);
        if (*trn) return cmd_train(common, targs, out);
        if (*ev) return cmd_eval(common, ev_data, ev_weights, ev_report, ev_thr, out);
        if (*scr) return cmd_screen(common, sc_data, sc_sens, sc_spec, sc_out, sc_lo, sc_hi, out);
        if (*swp) return cmd_sweep(common, sw_data, sw_sens, sw_spec, sw_report, sw_fnr, sw_fpr, out);
        if (*gc) return cmd_gradcheck(common, gc_op, gc_eps, gc_trials, gc_tol, out);
        if (*ex) return cmd_export(ex_data, ex_weights, ex_out, out);
    } catch (const Error& e) {
        err << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }
    return exit_code(ErrorKind::Usage);
}

}  // namespace sct
