#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace sct {

enum class Decision : std::uint8_t { RuleOutBenign = 0, RuleInCarcinoma = 1, Equivocal = 2 };

std::string to_string(Decision d);

struct ScreeningOutcome {
    Decision decision = Decision::Equivocal;
    double p_sensitive = 0;
    double p_specific = 0;
    double t_lo = 0.05;
    double t_hi = 0.95;
};

// Rule-out needs the sensitive model below t_lo and the specific model below t_hi; rule-in needs
// the specific model above t_hi and the sensitive model not below t_lo. Anything else, including
// the two models contradicting each other, stays equivocal.
ScreeningOutcome dual_decide(double p_sens, double p_spec, double t_lo = 0.05, double t_hi = 0.95);

struct SweepPoint {
    double tau = 0, t_lo = 0, t_hi = 0;
    long rule_out_benign = 0, rule_out_carcinoma = 0;
    long rule_in_carcinoma = 0, rule_in_benign = 0;
    long equivocal_benign = 0, equivocal_carcinoma = 0;
    double fnr = 0;  // carcinoma ruled out / all carcinoma
    double fpr = 0;  // benign ruled in / all benign
    double tpr = 0;  // carcinoma ruled in / decided carcinoma (NaN when none decided)
    double tnr = 0;  // benign ruled out / decided benign (NaN when none decided)
    double screened_benign = 0, screened_carcinoma = 0, screened_total = 0;
    double error_screened = 0;  // (FN + FP) / screened blocks, 0 when nothing is screened
    double error_all = 0;       // (FN + FP) / all blocks
};

struct SweepCurves {
    long n_benign = 0;
    long n_carcinoma = 0;
    std::vector<SweepPoint> points;
};

// tau in {0.505, 0.5075, ..., 0.995} plus {0.999, 1.0}, ascending.
std::vector<double> default_threshold_grid();

// labels: 0 benign, 1 carcinoma. Each tau is applied as t_lo = 1 - tau, t_hi = tau.
SweepCurves threshold_sweep(std::span<const double> p_sens, std::span<const double> p_spec, std::span<const int> labels,
                            std::span<const double> grid);

struct ThresholdChoice {
    double tau = 1, t_lo = 0, t_hi = 1;
    std::size_t index = 0;
    bool feasible = false;
};

// Most permissive point (largest screened fraction, ties to the smaller tau) that screens at least
// one block and meets both constraints; otherwise the strictest grid point with feasible = false.
ThresholdChoice choose_thresholds(const SweepCurves& curves, double max_fnr, double max_fpr);

}  // namespace sct
