#pragma once

#include "sct/blockdata.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace sct {

// Labels are 0 (negative) / 1 (positive). A score >= threshold is a positive call.

struct RocPoint {
    double threshold;
    double sensitivity;
    double specificity;
};

struct RocResult {
    double auc = 0.5;
    std::vector<RocPoint> curve;  // thresholds descending, starting at +inf
};

// AUC = (concordant + ties/2) / (positives * negatives).
RocResult roc_auc(std::span<const double> scores, std::span<const int> labels);

struct Confusion {
    long tp = 0, fp = 0, tn = 0, fn = 0;
    double sensitivity = 0, specificity = 0;
};

Confusion confusion_at(std::span<const double> scores, std::span<const int> labels, double threshold);
Confusion confusion_from_counts(long tp, long fp, long tn, long fn);

struct KappaResult {
    double kappa = 0;
    double ci_low = 0;
    double ci_high = 0;
    int resamples = 0;  // bootstrap resamples with a defined kappa
};

// Quadratic-weighted Cohen's kappa over categories 0..n-1 without a confidence interval.
double quadratic_kappa_point(std::span<const int> pred, std::span<const int> actual, int n_categories);

// Percentile bootstrap CI (95%) from `resamples` resamples derived from `seed`.
KappaResult quadratic_kappa(std::span<const int> pred, std::span<const int> actual, int n_categories,
                            int resamples = 2000, std::uint64_t seed = 20240229);

struct DelongPaired {
    double auc_a = 0, auc_b = 0;
    double var_a = 0, var_b = 0, cov_ab = 0;
    double z = 0, p = 1;
};

DelongPaired delong_paired(std::span<const double> scores_a, std::span<const double> scores_b, std::span<const int> labels);

struct DelongUnpaired {
    double auc_a = 0, auc_b = 0;
    double var_a = 0, var_b = 0;
    double z = 0, p = 1;
};

DelongUnpaired delong_unpaired(std::span<const double> scores_a, std::span<const int> labels_a,
                               std::span<const double> scores_b, std::span<const int> labels_b);

// Exact two-sided binomial test on discordant pairs (b: A right & B wrong, c: A wrong & B right).
double mcnemar_exact(long b, long c);
double mcnemar_exact(std::span<const std::uint8_t> a_correct, std::span<const std::uint8_t> b_correct);

enum class GradeGroup : std::uint8_t { Benign = 0, GG1 = 1, GG2 = 2, GG3 = 3, GG4 = 4, GG5 = 5 };

GradeGroup isup_group(Pattern primary, Pattern secondary);

// P(GG >= 3 | carcinoma) under independent primary/secondary heads; distributions are over
// {None, 3, 4, 5}. Returns 0 when the heads put no mass on carcinoma pairs.
double gg3plus_score(const std::array<double, 4>& primary, const std::array<double, 4>& secondary);

double normal_two_sided_p(double z);

}  // namespace sct
