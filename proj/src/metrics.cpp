#include "sct/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace sct {

namespace {

void check_aligned(std::size_t a, std::size_t b, const char* what) {
    if (a != b) fail(ErrorKind::Input, std::string(what) + ": score and label arrays differ in length");
}

void split_classes(std::span<const double> scores, std::span<const int> labels, std::vector<double>& pos,
                   std::vector<double>& neg, const char* what) {
    check_aligned(scores.size(), labels.size(), what);
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] == 1)
            pos.push_back(scores[i]);
        else if (labels[i] == 0)
            neg.push_back(scores[i]);
        else
            fail(ErrorKind::Input, std::string(what) + ": labels must be 0 or 1");
    }
    if (pos.empty() || neg.empty()) fail(ErrorKind::Input, std::string(what) + ": AUC undefined with a single class");
}

// Mid-ranks (1-based, ties averaged) of `values`.
std::vector<double> midranks(std::span<const double> values) {
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(values.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

// DeLong structural components: v10[i] = P(pos_i > neg) + ties/2, v01[j] = P(pos > neg_j) + ties/2.
struct Components {
    double auc;
    std::vector<double> v10, v01;
};

Components components(const std::vector<double>& pos, const std::vector<double>& neg) {
    const auto m = pos.size();
    const auto n = neg.size();
    std::vector<double> all(pos);
    all.insert(all.end(), neg.begin(), neg.end());
    const auto r_all = midranks(all);
    const auto r_pos = midranks(pos);
    const auto r_neg = midranks(neg);
    Components c;
    c.v10.resize(m);
    c.v01.resize(n);
    for (std::size_t i = 0; i < m; ++i) c.v10[i] = (r_all[i] - r_pos[i]) / static_cast<double>(n);
    for (std::size_t j = 0; j < n; ++j) c.v01[j] = 1.0 - (r_all[m + j] - r_neg[j]) / static_cast<double>(m);
    c.auc = std::accumulate(c.v10.begin(), c.v10.end(), 0.0) / static_cast<double>(m);
    return c;
}

double covariance(const std::vector<double>& a, const std::vector<double>& b) {
    const auto k = a.size();
    if (k < 2) return 0.0;
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(k);
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / static_cast<double>(k);
    double s = 0;
    for (std::size_t i = 0; i < k; ++i) s += (a[i] - ma) * (b[i] - mb);
    return s / static_cast<double>(k - 1);
}

double auc_variance(const Components& c) {
    return covariance(c.v10, c.v10) / static_cast<double>(c.v10.size()) +
           covariance(c.v01, c.v01) / static_cast<double>(c.v01.size());
}

}  // namespace

double normal_two_sided_p(double z) { return std::erfc(std::fabs(z) / std::sqrt(2.0)); }

RocResult roc_auc(std::span<const double> scores, std::span<const int> labels) {
    std::vector<double> pos, neg;
    split_classes(scores, labels, pos, neg, "roc_auc");
    RocResult r;
    r.auc = components(pos, neg).auc;

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    const double np = static_cast<double>(pos.size());
    const double nn = static_cast<double>(neg.size());
    long tp = 0, fp = 0;
    r.curve.push_back({std::numeric_limits<double>::infinity(), 0.0, 1.0});
    std::size_t i = 0;
    while (i < order.size()) {
        const double thr = scores[order[i]];
        while (i < order.size() && scores[order[i]] == thr) {
            (labels[order[i]] == 1 ? tp : fp) += 1;
            ++i;
        }
        r.curve.push_back({thr, static_cast<double>(tp) / np, 1.0 - static_cast<double>(fp) / nn});
    }
    return r;
}

Confusion confusion_from_counts(long tp, long fp, long tn, long fn) {
    Confusion c{tp, fp, tn, fn, 0, 0};
    c.sensitivity = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    c.specificity = tn + fp > 0 ? static_cast<double>(tn) / static_cast<double>(tn + fp) : 0.0;
    return c;
}

Confusion confusion_at(std::span<const double> scores, std::span<const int> labels, double threshold) {
    check_aligned(scores.size(), labels.size(), "confusion_at");
    long tp = 0, fp = 0, tn = 0, fn = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool call = scores[i] >= threshold;
        if (labels[i] == 1)
            (call ? tp : fn) += 1;
        else
            (call ? fp : tn) += 1;
    }
    return confusion_from_counts(tp, fp, tn, fn);
}

namespace {

// Returns NaN when the expected weighted disagreement is zero.
double kappa_from_indices(std::span<const int> pred, std::span<const int> actual, int n, const std::vector<std::size_t>* idx) {
    std::vector<double> obs(static_cast<std::size_t>(n * n), 0.0);
    std::vector<double> row(static_cast<std::size_t>(n), 0.0), col(static_cast<std::size_t>(n), 0.0);
    const std::size_t count = idx ? idx->size() : pred.size();
    for (std::size_t t = 0; t < count; ++t) {
        const std::size_t i = idx ? (*idx)[t] : t;
        obs[static_cast<std::size_t>(pred[i] * n + actual[i])] += 1;
        row[static_cast<std::size_t>(pred[i])] += 1;
        col[static_cast<std::size_t>(actual[i])] += 1;
    }
    const double total = static_cast<double>(count);
    const double denom_w = static_cast<double>((n - 1) * (n - 1));
    double num = 0, den = 0;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            const double w = static_cast<double>((i - j) * (i - j)) / denom_w;
            num += w * obs[static_cast<std::size_t>(i * n + j)];
            den += w * row[static_cast<std::size_t>(i)] * col[static_cast<std::size_t>(j)] / total;
        }
    }
    if (den == 0) return std::numeric_limits<double>::quiet_NaN();
    return 1.0 - num / den;
}

void check_kappa_inputs(std::span<const int> pred, std::span<const int> actual, int n) {
    if (pred.size() != actual.size()) fail(ErrorKind::Input, "quadratic_kappa: rater arrays differ in length");
    if (pred.size() < 2) fail(ErrorKind::Input, "quadratic_kappa: need at least 2 items");
    if (n < 2) fail(ErrorKind::Input, "quadratic_kappa: need at least 2 categories");
    for (std::size_t i = 0; i < pred.size(); ++i)
        if (pred[i] < 0 || pred[i] >= n || actual[i] < 0 || actual[i] >= n)
            fail(ErrorKind::Input, "quadratic_kappa: category out of range at item " + std::to_string(i));
}

double quantile(std::vector<double>& sorted, double q) {
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace

double quadratic_kappa_point(std::span<const int> pred, std::span<const int> actual, int n_categories) {
    check_kappa_inputs(pred, actual, n_categories);
    const double k = kappa_from_indices(pred, actual, n_categories, nullptr);
    if (std::isnan(k)) fail(ErrorKind::Input, "quadratic_kappa: degenerate marginals (zero expected disagreement)");
    return k;
}

KappaResult quadratic_kappa(std::span<const int> pred, std::span<const int> actual, int n_categories, int resamples,
                            std::uint64_t seed) {
    KappaResult r;
    r.kappa = quadratic_kappa_point(pred, actual, n_categories);
    std::vector<double> boot;
    boot.reserve(static_cast<std::size_t>(resamples));
    std::vector<std::size_t> idx(pred.size());
    for (int b = 0; b < resamples; ++b) {
        Rng rng(Rng::derive(seed, static_cast<std::uint64_t>(b)));
        for (auto& i : idx) i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(pred.size()) - 1));
        const double k = kappa_from_indices(pred, actual, n_categories, &idx);
        if (!std::isnan(k)) boot.push_back(k);
    }
    r.resamples = static_cast<int>(boot.size());
    if (boot.empty()) {
        r.ci_low = r.ci_high = r.kappa;
        return r;
    }
    std::sort(boot.begin(), boot.end());
    // Percentile bounds, widened if necessary so the interval always covers the point estimate.
    r.ci_low = std::min(quantile(boot, 0.025), r.kappa);
    r.ci_high = std::max(quantile(boot, 0.975), r.kappa);
    return r;
}

DelongPaired delong_paired(std::span<const double> a, std::span<const double> b, std::span<const int> labels) {
    check_aligned(a.size(), b.size(), "delong_paired");
    std::vector<double> pa, na, pb, nb;
    split_classes(a, labels, pa, na, "delong_paired");
    split_classes(b, labels, pb, nb, "delong_paired");
    const auto ca = components(pa, na);
    const auto cb = components(pb, nb);
    DelongPaired r;
    r.auc_a = ca.auc;
    r.auc_b = cb.auc;
    const double m = static_cast<double>(pa.size());
    const double n = static_cast<double>(na.size());
    r.var_a = auc_variance(ca);
    r.var_b = auc_variance(cb);
    r.cov_ab = covariance(ca.v10, cb.v10) / m + covariance(ca.v01, cb.v01) / n;
    const double var = r.var_a + r.var_b - 2 * r.cov_ab;
    const double diff = r.auc_a - r.auc_b;
    if (!(var > 1e-300)) {
        r.z = 0;
        r.p = diff == 0 ? 1.0 : 0.0;
        if (diff != 0) r.z = diff > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
        return r;
    }
    r.z = diff / std::sqrt(var);
    r.p = normal_two_sided_p(r.z);
    return r;
}

DelongUnpaired delong_unpaired(std::span<const double> a, std::span<const int> la, std::span<const double> b,
                               std::span<const int> lb) {
    std::vector<double> pa, na, pb, nb;
    split_classes(a, la, pa, na, "delong_unpaired");
    split_classes(b, lb, pb, nb, "delong_unpaired");
    const auto ca = components(pa, na);
    const auto cb = components(pb, nb);
    DelongUnpaired r;
    r.auc_a = ca.auc;
    r.auc_b = cb.auc;
    r.var_a = auc_variance(ca);
    r.var_b = auc_variance(cb);
    const double var = r.var_a + r.var_b;
    const double diff = r.auc_a - r.auc_b;
    if (!(var > 1e-300)) {
        r.p = diff == 0 ? 1.0 : 0.0;
        r.z = diff == 0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), diff);
        return r;
    }
    r.z = diff / std::sqrt(var);
    r.p = normal_two_sided_p(r.z);
    return r;
}

double mcnemar_exact(long b, long c) {
    if (b < 0 || c < 0) fail(ErrorKind::Input, "mcnemar_exact: negative counts");
    const long n = b + c;
    if (n == 0) return 1.0;
    const long k = std::min(b, c);
    // log-space binomial tail P(X <= k), X ~ Bin(n, 1/2)
    double tail = 0;
    for (long i = 0; i <= k; ++i) {
        const double log_term = std::lgamma(static_cast<double>(n) + 1) - std::lgamma(static_cast<double>(i) + 1) -
                                std::lgamma(static_cast<double>(n - i) + 1) - static_cast<double>(n) * std::log(2.0);
        tail += std::exp(log_term);
    }
    return std::min(1.0, 2.0 * tail);
}

double mcnemar_exact(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
    if (a.size() != b.size()) fail(ErrorKind::Input, "mcnemar_exact: arrays differ in length");
    long bc = 0, cb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] && !b[i]) ++bc;
        if (!a[i] && b[i]) ++cb;
    }
    return mcnemar_exact(bc, cb);
}

GradeGroup isup_group(Pattern primary, Pattern secondary) {
    const bool pn = primary == Pattern::None;
    const bool sn = secondary == Pattern::None;
    if (pn && sn) return GradeGroup::Benign;
    if (pn != sn) fail(ErrorKind::Input, "isup_group: primary and secondary must both be None or both be patterns");
    const int a = static_cast<int>(primary);
    const int b = static_cast<int>(secondary);
    const int sum = a + b;
    if (sum <= 6) return GradeGroup::GG1;
    if (sum == 7) return a == 3 ? GradeGroup::GG2 : GradeGroup::GG3;
    if (sum == 8) return GradeGroup::GG4;
    return GradeGroup::GG5;
}

double gg3plus_score(const std::array<double, 4>& primary, const std::array<double, 4>& secondary) {
    double high = 0, total = 0;
    for (int a = 1; a <= 3; ++a) {
        for (int b = 1; b <= 3; ++b) {
            const double w = primary[static_cast<std::size_t>(a)] * secondary[static_cast<std::size_t>(b)];
            total += w;
            if (static_cast<int>(isup_group(pattern_from_class(a), pattern_from_class(b))) >= 3) high += w;
        }
    }
    return total > 0 ? high / total : 0.0;
}

}  // namespace sct
