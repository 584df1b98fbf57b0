#include "sct/report.hpp"

#include "bytes.hpp"

#include <cmath>
#include <cstdio>

namespace sct {

std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%#.6g", v);
    return buf;
}

namespace {

std::string count(long v) { return v < 0 ? "" : std::to_string(v); }

double ratio(long num, long den) {
    return den > 0 ? static_cast<double>(num) / static_cast<double>(den) : std::numeric_limits<double>::quiet_NaN();
}

void fill_kappa(EvalRow& row, const std::vector<int>& pred, const std::vector<int>& actual, int categories,
                const KappaOptions& opt) {
    try {
        const auto k = quadratic_kappa(pred, actual, categories, opt.resamples, opt.seed);
        row.kappa = k.kappa;
        row.kappa_ci_low = k.ci_low;
        row.kappa_ci_high = k.ci_high;
    } catch (const Error&) {
        // undefined kappa (degenerate marginals) stays nan
    }
}

void fill_auc(EvalRow& row, std::span<const double> scores, std::span<const int> labels) {
    bool pos = false, neg = false;
    for (int l : labels) (l ? pos : neg) = true;
    if (pos && neg) row.auc = roc_auc(scores, labels).auc;
}

}  // namespace

EvalRow summary_from_counts(long tp, long fn, long tn, long fp, double threshold) {
    EvalRow r;
    r.scope = "all";
    r.n = tp + fn + tn + fp;
    r.threshold = threshold;
    r.tp = tp;
    r.fn = fn;
    r.tn = tn;
    r.fp = fp;
    r.sensitivity = ratio(tp, tp + fn);
    r.specificity = ratio(tn, tn + fp);
    return r;
}

EvalReport evaluate_detection(std::span<const double> scores, std::span<const int> labels, double threshold,
                              const KappaOptions& kappa) {
    if (scores.size() != labels.size()) fail(ErrorKind::Input, "evaluate: score and label arrays differ in length");
    if (scores.empty()) fail(ErrorKind::Input, "evaluate: no blocks");
    const auto c = confusion_at(scores, labels, threshold);
    EvalReport rep;
    EvalRow all = summary_from_counts(c.tp, c.fn, c.tn, c.fp, threshold);
    fill_auc(all, scores, labels);
    std::vector<int> pred(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) pred[i] = scores[i] >= threshold ? 1 : 0;
    fill_kappa(all, pred, std::vector<int>(labels.begin(), labels.end()), 2, kappa);
    rep.rows.push_back(all);

    EvalRow benign;
    benign.scope = "benign";
    benign.n = c.tn + c.fp;
    benign.threshold = threshold;
    benign.tn = c.tn;
    benign.fp = c.fp;
    benign.specificity = ratio(c.tn, c.tn + c.fp);
    rep.rows.push_back(benign);

    EvalRow carc;
    carc.scope = "carcinoma";
    carc.n = c.tp + c.fn;
    carc.threshold = threshold;
    carc.tp = c.tp;
    carc.fn = c.fn;
    carc.sensitivity = ratio(c.tp, c.tp + c.fn);
    rep.rows.push_back(carc);

    if (!std::isnan(all.auc)) {
        PlotSeries roc{"roc", {}};
        for (const auto& p : roc_auc(scores, labels).curve) roc.points.emplace_back(1.0 - p.specificity, p.sensitivity);
        rep.plots.push_back(std::move(roc));
    }
    return rep;
}

EvalReport evaluate_grading(const std::vector<GradeDistributions>& predicted, const std::vector<Block>& blocks,
                            double threshold, const KappaOptions& kappa) {
    if (predicted.size() != blocks.size()) fail(ErrorKind::Input, "evaluate: prediction and block counts differ");
    std::vector<double> scores;
    std::vector<int> labels;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        if (blocks[i].label == DetectionLabel::Unknown) fail(ErrorKind::Data, "block '" + blocks[i].id + "' has an Unknown label");
        scores.push_back(1.0 - predicted[i].primary[0]);
        labels.push_back(blocks[i].label == DetectionLabel::Carcinoma ? 1 : 0);
    }
    EvalReport rep = evaluate_detection(scores, labels, threshold, kappa);

    const auto argmax = [](const std::array<double, 4>& d) {
        return static_cast<int>(std::max_element(d.begin(), d.end()) - d.begin());
    };
    std::vector<int> pp, ap, ps, as, pg, ag;
    std::vector<double> gg_scores;
    std::vector<int> gg_labels;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        if (!blocks[i].grading) continue;
        const auto& g = *blocks[i].grading;
        const int p1 = argmax(predicted[i].primary), p2 = argmax(predicted[i].secondary);
        pp.push_back(p1);
        ap.push_back(pattern_class(g.primary));
        ps.push_back(p2);
        as.push_back(pattern_class(g.secondary));
        const auto pred_gg = (p1 == 0 || p2 == 0) ? GradeGroup::Benign : isup_group(pattern_from_class(p1), pattern_from_class(p2));
        const auto true_gg = isup_group(g.primary, g.secondary);
        pg.push_back(static_cast<int>(pred_gg));
        ag.push_back(static_cast<int>(true_gg));
        if (true_gg != GradeGroup::Benign) {
            gg_scores.push_back(gg3plus_score(predicted[i].primary, predicted[i].secondary));
            gg_labels.push_back(static_cast<int>(true_gg) >= 3 ? 1 : 0);
        }
    }
    const auto kappa_row = [&](const char* scope, const std::vector<int>& p, const std::vector<int>& a, int cats) {
        EvalRow r;
        r.scope = scope;
        r.n = static_cast<long>(p.size());
        if (p.size() >= 2) fill_kappa(r, p, a, cats, kappa);
        rep.rows.push_back(r);
    };
    kappa_row("primary", pp, ap, 4);
    kappa_row("secondary", ps, as, 4);
    kappa_row("isup", pg, ag, 6);

    EvalRow gg;
    gg.scope = "gg3plus";
    gg.n = static_cast<long>(gg_scores.size());
    gg.threshold = threshold;
    if (!gg_scores.empty()) {
        const auto c = confusion_at(gg_scores, gg_labels, threshold);
        gg.tp = c.tp;
        gg.fp = c.fp;
        gg.tn = c.tn;
        gg.fn = c.fn;
        gg.sensitivity = ratio(c.tp, c.tp + c.fn);
        gg.specificity = ratio(c.tn, c.tn + c.fp);
        fill_auc(gg, gg_scores, gg_labels);
    }
    rep.rows.push_back(gg);
    return rep;
}

std::string eval_csv(const EvalReport& report) {
    std::string out = std::string(kEvalHeader) + "\n";
    for (const auto& r : report.rows) {
        out += r.scope + "," + std::to_string(r.n) + "," + format_number(r.auc) + "," + format_number(r.threshold) + "," +
               count(r.tp) + "," + count(r.fp) + "," + count(r.tn) + "," + count(r.fn) + "," + format_number(r.sensitivity) +
               "," + format_number(r.specificity) + "," + format_number(r.kappa) + "," + format_number(r.kappa_ci_low) + "," +
               format_number(r.kappa_ci_high) + "\n";
    }
    return out;
}

std::string sweep_csv(const SweepCurves& curves) {
    std::string out =
        "tau,t_lo,t_hi,rule_out_benign,rule_out_carcinoma,rule_in_carcinoma,rule_in_benign,equivocal_benign,"
        "equivocal_carcinoma,fnr_among_carcinoma,fpr_among_benign,tpr_among_decided_carcinoma,tnr_among_decided_benign,"
        "screened_benign,screened_carcinoma,screened_total,total_error_among_screened,total_error_among_all\n";
    for (const auto& p : curves.points) {
        out += format_number(p.tau) + "," + format_number(p.t_lo) + "," + format_number(p.t_hi) + "," +
               std::to_string(p.rule_out_benign) + "," + std::to_string(p.rule_out_carcinoma) + "," +
               std::to_string(p.rule_in_carcinoma) + "," + std::to_string(p.rule_in_benign) + "," +
               std::to_string(p.equivocal_benign) + "," + std::to_string(p.equivocal_carcinoma) + "," + format_number(p.fnr) +
               "," + format_number(p.fpr) + "," + format_number(p.tpr) + "," + format_number(p.tnr) + "," +
               format_number(p.screened_benign) + "," + format_number(p.screened_carcinoma) + "," +
               format_number(p.screened_total) + "," + format_number(p.error_screened) + "," + format_number(p.error_all) + "\n";
    }
    return out;
}

std::vector<PlotSeries> sweep_plots(const SweepCurves& curves) {
    std::vector<PlotSeries> s{{"screened_total", {}},     {"screened_benign", {}},
                              {"screened_carcinoma", {}}, {"fnr_among_carcinoma", {}},
                              {"fpr_among_benign", {}},   {"total_error_among_screened", {}}};
    for (const auto& p : curves.points) {
        s[0].points.emplace_back(p.tau, p.screened_total);
        s[1].points.emplace_back(p.tau, p.screened_benign);
        s[2].points.emplace_back(p.tau, p.screened_carcinoma);
        s[3].points.emplace_back(p.tau, p.fnr);
        s[4].points.emplace_back(p.tau, p.fpr);
        s[5].points.emplace_back(p.tau, p.error_screened);
    }
    return s;
}

std::string plot_csv(const std::vector<PlotSeries>& series) {
    std::string out = "series,x,y\n";
    for (const auto& s : series)
        for (const auto& [x, y] : s.points) out += s.name + "," + format_number(x) + "," + format_number(y) + "\n";
    return out;
}

std::filesystem::path plot_path(const std::filesystem::path& report) {
    auto p = report;
    p.replace_extension(".plot.csv");
    return p;
}

void write_eval_report(const std::filesystem::path& path, const EvalReport& report) {
    detail::write_file(path, eval_csv(report));
    detail::write_file(plot_path(path), plot_csv(report.plots));
}

void write_sweep_report(const std::filesystem::path& path, const SweepCurves& curves) {
    detail::write_file(path, sweep_csv(curves));
    detail::write_file(plot_path(path), plot_csv(sweep_plots(curves)));
}

}  // namespace sct
