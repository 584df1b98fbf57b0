#include "doctest.h"
#include "oracles.hpp"

#include "sct/metrics.hpp"

#include <algorithm>

using namespace sct;

namespace {

double paired_permutation_p(const std::vector<double>& a, const std::vector<double>& b, const std::vector<int>& y,
                            int permutations, std::uint64_t seed) {
    const double observed = std::abs(oracle::auc_pairs(a, y) - oracle::auc_pairs(b, y));
    Rng rng(seed);
    int extreme = 0;
    std::vector<double> pa(a.size()), pb(b.size());
    for (int r = 0; r < permutations; ++r) {
        for (std::size_t i = 0; i < a.size(); ++i) {
            const bool swap = rng.bernoulli(0.5);
            pa[i] = swap ? b[i] : a[i];
            pb[i] = swap ? a[i] : b[i];
        }
        // Pair counting is O(n^2); the midrank AUC is checked against it separately.
        extreme += std::abs(roc_auc(pa, y).auc - roc_auc(pb, y).auc) >= observed - 1e-12;
    }
    return static_cast<double>(extreme) / permutations;
}

}  // namespace

TEST_CASE("AUC examples") {
    const std::vector<int> y{0, 0, 1, 1};
    CHECK(roc_auc(std::vector<double>{0.1, 0.4, 0.35, 0.8}, y).auc == 0.75);
    CHECK(roc_auc(std::vector<double>{0.1, 0.2, 0.6, 0.8}, y).auc == 1.0);
    CHECK(roc_auc(std::vector<double>{0.3, 0.3, 0.3, 0.3}, y).auc == 0.5);
    CHECK_THROWS_AS(roc_auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), Error);
}

TEST_CASE("AUC equals pair counting and respects its invariants") {
    Rng rng(1);
    for (int trial = 0; trial < 100; ++trial) {
        const auto n = static_cast<std::size_t>(rng.uniform_int(2, 500));
        std::vector<double> s(n), neg(n), mono(n);
        std::vector<int> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            y[i] = rng.bernoulli(0.4);
            // Coarse scores force ties on about half the trials.
            s[i] = trial % 2 ? std::round(rng.uniform() * 10) / 10 : rng.normal() + y[i];
        }
        y[0] = 0;
        y[1] = 1;
        const double ref = oracle::auc_pairs(s, y);
        const auto r = roc_auc(s, y);
        CHECK(std::abs(r.auc - ref) <= 1e-12);
        for (std::size_t i = 0; i < n; ++i) {
            neg[i] = -s[i];
            mono[i] = std::exp(3 * s[i]) - 2;
        }
        CHECK(std::abs(roc_auc(mono, y).auc - r.auc) <= 1e-12);
        if (trial % 2 == 0) CHECK(std::abs(roc_auc(neg, y).auc - (1 - r.auc)) <= 1e-12);
        // Curve: starts at (sens 0, spec 1) and ends at (1, 0).
        CHECK(r.curve.front().sensitivity == 0);
        CHECK(r.curve.front().specificity == 1);
        CHECK(r.curve.back().sensitivity == 1);
        CHECK(r.curve.back().specificity == 0);
    }
}

TEST_CASE("confusion counts") {
    const auto c = confusion_from_counts(209, 15, 655, 11);
    CHECK(c.sensitivity == doctest::Approx(0.95).epsilon(1e-12));
    CHECK(c.specificity == doctest::Approx(655.0 / 670.0).epsilon(1e-12));
    const std::vector<double> s{0.1, 0.9, 0.4};
    const std::vector<int> y{0, 1, 1};
    const auto all = confusion_at(s, y, 0.0);
    CHECK(all.sensitivity == 1);
    CHECK(all.specificity == 0);
    const auto at = confusion_at(s, y, 0.4);  // ties count as positive
    CHECK(at.tp == 2);
    CHECK(at.tn == 1);
}

TEST_CASE("quadratic kappa: hand example") {
    // Marginals pred (1,1,2)/4, actual (1,0,3)/4, weights (i-j)^2/4.
    // Observed weighted disagreement: one (1,2) pair -> 0.25 / 4 = 1/16.
    // Expected: 1/4*3/4*1 + 1/4*1/4*1/4 + 1/4*3/4*1/4 + 1/2*1/4*1 = 3/8.
    // kappa = 1 - (1/16)/(3/8) = 5/6.
    const std::vector<int> pred{0, 1, 2, 2}, actual{0, 2, 2, 2};
    CHECK(quadratic_kappa_point(pred, actual, 3) == doctest::Approx(5.0 / 6.0).epsilon(1e-15));
}

TEST_CASE("quadratic kappa: perfect, reversed, degenerate, symmetric") {
    const std::vector<int> a{0, 1, 2, 3, 0, 1, 2, 3};
    const auto perfect = quadratic_kappa(a, a, 4);
    CHECK(perfect.kappa == 1.0);
    CHECK(perfect.ci_low == 1.0);
    CHECK(perfect.ci_high == 1.0);

    std::vector<int> rev(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) rev[i] = 3 - a[i];
    CHECK(quadratic_kappa_point(rev, a, 4) < 0);

    const std::vector<int> flat{1, 1, 1, 1};
    CHECK_THROWS_AS(quadratic_kappa_point(flat, std::vector<int>{1, 1, 1, 1}, 3), Error);

    Rng rng(2);
    std::vector<int> p(60), q(60), pr(60), qr(60);
    for (int i = 0; i < 60; ++i) {
        q[i] = static_cast<int>(rng.uniform_int(0, 4));
        p[i] = std::clamp(q[i] + static_cast<int>(rng.uniform_int(-1, 1)), 0, 4);
        pr[i] = 4 - p[i];
        qr[i] = 4 - q[i];
    }
    CHECK(quadratic_kappa_point(p, q, 5) == doctest::Approx(quadratic_kappa_point(pr, qr, 5)).epsilon(1e-14));

    const auto k = quadratic_kappa(p, q, 5, 500, 11);
    CHECK(k.ci_low <= k.kappa);
    CHECK(k.kappa <= k.ci_high);
    const auto k2 = quadratic_kappa(p, q, 5, 500, 11);
    CHECK(k.ci_low == k2.ci_low);
    CHECK(k.ci_high == k2.ci_high);
}

TEST_CASE("DeLong paired: identical scores, AUCs, and a permutation oracle") {
    Rng rng(3);
    const int n = 100;
    std::vector<double> a(n), b(n);
    std::vector<int> y(n);
    for (int i = 0; i < n; ++i) {
        y[i] = i % 2;
        const double shared = rng.normal();
        a[i] = 0.9 * y[i] + shared + 0.6 * rng.normal();
        b[i] = 0.5 * y[i] + shared + 0.6 * rng.normal();
    }
    const auto same = delong_paired(a, a, y);
    CHECK(same.p == 1.0);

    const auto d = delong_paired(a, b, y);
    CHECK(d.auc_a == roc_auc(a, y).auc);
    CHECK(d.auc_b == roc_auc(b, y).auc);
    CHECK(d.var_a >= 0);
    CHECK(d.var_b >= 0);
    const double perm = paired_permutation_p(a, b, y, 10000, 4);
    MESSAGE("DeLong p = " << d.p << ", permutation p = " << perm);
    CHECK(std::abs(d.p - perm) <= 0.02);
}

TEST_CASE("DeLong unpaired") {
    Rng rng(5);
    std::vector<double> a(100), b(100);
    std::vector<int> y(100);
    for (int i = 0; i < 100; ++i) {
        y[i] = i % 2;
        a[i] = y[i] + 0.1 * rng.uniform();
        b[i] = rng.uniform();
    }
    const auto same = delong_unpaired(a, y, a, y);
    CHECK(same.p == 1.0);
    const auto d = delong_unpaired(a, y, b, y);
    CHECK(d.auc_a == 1.0);
    CHECK(d.var_a >= 0);
    CHECK(d.var_b >= 0);
    CHECK(d.p < 0.01);
    CHECK(d.p >= 0);
}

TEST_CASE("McNemar exact") {
    CHECK(mcnemar_exact(10, 0) == doctest::Approx(0.001953125).epsilon(1e-12));
    CHECK(mcnemar_exact(0, 10) == doctest::Approx(0.001953125).epsilon(1e-12));
    CHECK(mcnemar_exact(7, 7) == 1.0);
    CHECK(mcnemar_exact(0, 0) == 1.0);
    // Binomial(12, 1/2): P(X <= 2) = (1 + 12 + 66) / 4096.
    CHECK(mcnemar_exact(2, 10) == doctest::Approx(2.0 * 79.0 / 4096.0).epsilon(1e-12));
    const std::vector<std::uint8_t> ra{1, 1, 0, 1}, rb{0, 1, 1, 0};
    CHECK(mcnemar_exact(ra, rb) == mcnemar_exact(2, 1));
}

TEST_CASE("ISUP grade groups: every valid pair") {
    using P = Pattern;
    CHECK(isup_group(P::None, P::None) == GradeGroup::Benign);
    const P pats[] = {P::P3, P::P4, P::P5};
    const GradeGroup table[3][3] = {
        {GradeGroup::GG1, GradeGroup::GG2, GradeGroup::GG4},
        {GradeGroup::GG3, GradeGroup::GG4, GradeGroup::GG5},
        {GradeGroup::GG4, GradeGroup::GG5, GradeGroup::GG5},
    };
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) CHECK(isup_group(pats[i], pats[j]) == table[i][j]);
    CHECK_THROWS_AS(isup_group(P::None, P::P3), Error);
    CHECK_THROWS_AS(isup_group(P::P4, P::None), Error);
}

TEST_CASE("GG>=3 score") {
    const std::array<double, 4> four{0, 0, 1, 0}, three{0, 1, 0, 0}, uniform{0, 1.0 / 3, 1.0 / 3, 1.0 / 3};
    CHECK(gg3plus_score(four, three) == 1.0);
    CHECK(gg3plus_score(three, three) == 0.0);
    CHECK(gg3plus_score(uniform, uniform) == doctest::Approx(7.0 / 9.0).epsilon(1e-15));
    // Mass on None is renormalised away.
    const std::array<double, 4> with_none{0.5, 1.0 / 6, 1.0 / 6, 1.0 / 6};
    CHECK(gg3plus_score(with_none, with_none) == doctest::Approx(7.0 / 9.0).epsilon(1e-15));
}

TEST_CASE("p-values stay in [0, 1]") {
    for (double z : {-50.0, -2.0, 0.0, 1.96, 40.0}) {
        const double p = normal_two_sided_p(z);
        CHECK(p >= 0);
        CHECK(p <= 1);
    }
    CHECK(normal_two_sided_p(1.959963984540054) == doctest::Approx(0.05).epsilon(1e-9));
}
