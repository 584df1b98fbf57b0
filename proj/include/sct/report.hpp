#pragma once

// CSV reports. Floats are printed with 6 significant digits ("%#.6g"), undefined values as
// "nan", and counts that do not apply to a row are left empty. Every report also writes a
// companion <name>.plot.csv with labelled (series, x, y) points for external plotting.

#include "sct/metrics.hpp"
#include "sct/model.hpp"
#include "sct/screening.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace sct {

struct EvalRow {
    std::string scope;
    long n = 0;
    double auc = std::numeric_limits<double>::quiet_NaN();
    double threshold = std::numeric_limits<double>::quiet_NaN();
    long tp = -1, fp = -1, tn = -1, fn = -1;  // -1: not applicable
    double sensitivity = std::numeric_limits<double>::quiet_NaN();
    double specificity = std::numeric_limits<double>::quiet_NaN();
    double kappa = std::numeric_limits<double>::quiet_NaN();
    double kappa_ci_low = std::numeric_limits<double>::quiet_NaN();
    double kappa_ci_high = std::numeric_limits<double>::quiet_NaN();
};

struct PlotSeries {
    std::string name;
    std::vector<std::pair<double, double>> points;
};

struct EvalReport {
    std::vector<EvalRow> rows;  // "all" summary row first, then per-class rows
    std::vector<PlotSeries> plots;
};

inline constexpr const char* kEvalHeader =
    "scope,n,auc,threshold,tp,fp,tn,fn,sensitivity,specificity,kappa,kappa_ci_low,kappa_ci_high";

struct KappaOptions {
    int resamples = 2000;
    std::uint64_t seed = 20240229;
};

// Summary row built from confusion counts alone (AUC and kappa left undefined).
EvalRow summary_from_counts(long tp, long fn, long tn, long fp, double threshold);

// labels: 0 benign, 1 carcinoma.
EvalReport evaluate_detection(std::span<const double> scores, std::span<const int> labels, double threshold,
                              const KappaOptions& kappa = {});

// Adds pattern, ISUP and GG>=3 rows to the detection rows computed from 1 - P(primary = None).
EvalReport evaluate_grading(const std::vector<GradeDistributions>& predicted, const std::vector<Block>& blocks,
                            double threshold, const KappaOptions& kappa = {});

std::string format_number(double v);

std::string eval_csv(const EvalReport& report);
std::string sweep_csv(const SweepCurves& curves);
std::string plot_csv(const std::vector<PlotSeries>& series);
std::vector<PlotSeries> sweep_plots(const SweepCurves& curves);

std::filesystem::path plot_path(const std::filesystem::path& report);

void write_eval_report(const std::filesystem::path& path, const EvalReport& report);
void write_sweep_report(const std::filesystem::path& path, const SweepCurves& curves);

}  // namespace sct
