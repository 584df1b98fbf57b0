#include "sct/screening.hpp"

#include "sct/common.hpp"

#include <cmath>
#include <limits>

namespace sct {

std::string to_string(Decision d) {
    switch (d) {
        case Decision::RuleOutBenign: return "rule_out_benign";
        case Decision::RuleInCarcinoma: return "rule_in_carcinoma";
        case Decision::Equivocal: return "equivocal";
    }
    return "equivocal";
}

ScreeningOutcome dual_decide(double p_sens, double p_spec, double t_lo, double t_hi) {
    if (!(t_lo >= 0 && t_lo <= t_hi && t_hi <= 1))
        fail(ErrorKind::Config, "screening thresholds must satisfy 0 <= t_lo <= t_hi <= 1");
    ScreeningOutcome o{Decision::Equivocal, p_sens, p_spec, t_lo, t_hi};
    if (p_sens < t_lo && p_spec < t_hi) o.decision = Decision::RuleOutBenign;
    if (p_spec > t_hi && p_sens >= t_lo) o.decision = Decision::RuleInCarcinoma;
    return o;
}

std::vector<double> default_threshold_grid() {
    std::vector<double> g;
    for (int k = 0; k <= 196; ++k) g.push_back(static_cast<double>(202 + k) / 400.0);
    g.push_back(0.999);
    g.push_back(1.0);
    return g;
}

SweepCurves threshold_sweep(std::span<const double> p_sens, std::span<const double> p_spec, std::span<const int> labels,
                            std::span<const double> grid) {
    if (p_sens.size() != p_spec.size() || p_sens.size() != labels.size())
        fail(ErrorKind::Input, "threshold_sweep: score and label arrays differ in length");
    for (std::size_t i = 1; i < grid.size(); ++i)
        if (!(grid[i] > grid[i - 1])) fail(ErrorKind::Input, "threshold_sweep: grid must be strictly ascending");
    SweepCurves c;
    for (int l : labels) {
        if (l != 0 && l != 1) fail(ErrorKind::Input, "threshold_sweep: labels must be 0 or 1");
        (l == 1 ? c.n_carcinoma : c.n_benign) += 1;
    }
    const auto ratio = [](long num, long den) {
        return den > 0 ? static_cast<double>(num) / static_cast<double>(den) : 0.0;
    };
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (double tau : grid) {
        if (!(tau >= 0.5 && tau <= 1.0)) fail(ErrorKind::Input, "threshold_sweep: grid values must lie in [0.5, 1]");
        SweepPoint pt;
        pt.tau = tau;
        pt.t_lo = 1.0 - tau;
        pt.t_hi = tau;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            const auto d = dual_decide(p_sens[i], p_spec[i], pt.t_lo, pt.t_hi).decision;
            const bool carc = labels[i] == 1;
            if (d == Decision::RuleOutBenign) (carc ? pt.rule_out_carcinoma : pt.rule_out_benign) += 1;
            if (d == Decision::RuleInCarcinoma) (carc ? pt.rule_in_carcinoma : pt.rule_in_benign) += 1;
            if (d == Decision::Equivocal) (carc ? pt.equivocal_carcinoma : pt.equivocal_benign) += 1;
        }
        const long decided_carc = pt.rule_in_carcinoma + pt.rule_out_carcinoma;
        const long decided_benign = pt.rule_out_benign + pt.rule_in_benign;
        const long screened = decided_carc + decided_benign;
        const long errors = pt.rule_out_carcinoma + pt.rule_in_benign;
        pt.fnr = ratio(pt.rule_out_carcinoma, c.n_carcinoma);
        pt.fpr = ratio(pt.rule_in_benign, c.n_benign);
        pt.tpr = decided_carc > 0 ? ratio(pt.rule_in_carcinoma, decided_carc) : nan;
        pt.tnr = decided_benign > 0 ? ratio(pt.rule_out_benign, decided_benign) : nan;
        pt.screened_benign = ratio(decided_benign, c.n_benign);
        pt.screened_carcinoma = ratio(decided_carc, c.n_carcinoma);
        pt.screened_total = ratio(screened, c.n_benign + c.n_carcinoma);
        pt.error_screened = ratio(errors, screened);
        pt.error_all = ratio(errors, c.n_benign + c.n_carcinoma);
        c.points.push_back(pt);
    }
    return c;
}

ThresholdChoice choose_thresholds(const SweepCurves& curves, double max_fnr, double max_fpr) {
    if (curves.points.empty()) fail(ErrorKind::Input, "choose_thresholds: empty sweep");
    if (!(max_fnr >= 0 && max_fnr <= 1 && max_fpr >= 0 && max_fpr <= 1))
        fail(ErrorKind::Config, "choose_thresholds: constraints must lie in [0, 1]");
    ThresholdChoice best;
    bool found = false;
    for (std::size_t i = 0; i < curves.points.size(); ++i) {
        const auto& p = curves.points[i];
        // A point that screens nothing trivially meets any error bound; it is not an operating point.
        if (p.screened_total <= 0 || p.fnr > max_fnr || p.fpr > max_fpr) continue;
        if (!found || p.screened_total > curves.points[best.index].screened_total) {
            best = {p.tau, p.t_lo, p.t_hi, i, true};
            found = true;
        }
    }
    if (found) return best;
    std::size_t strict = 0;
    for (std::size_t i = 1; i < curves.points.size(); ++i)
        if (curves.points[i].tau > curves.points[strict].tau) strict = i;
    const auto& p = curves.points[strict];
    return {p.tau, p.t_lo, p.t_hi, strict, false};
}

}  // namespace sct
