#pragma once

// Straight-line reference implementations used as test oracles. They share no code with the
// library kernels: plain loops over std::vector, no Eigen products.

#include "sct/attention.hpp"
#include "sct/geometry.hpp"
#include "sct/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

namespace oracle {

using Dense = std::vector<std::vector<double>>;

inline Dense from_mat(const sct::Mat<double>& m) {
    Dense d(static_cast<std::size_t>(m.rows()), std::vector<double>(static_cast<std::size_t>(m.cols())));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) d[i][j] = m(i, j);
    return d;
}

inline Dense zeros(std::size_t r, std::size_t c) { return Dense(r, std::vector<double>(c, 0.0)); }

inline Dense matmul(const Dense& a, const Dense& b) {
    Dense out = zeros(a.size(), b.empty() ? 0 : b[0].size());
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t k = 0; k < b.size(); ++k)
            for (std::size_t j = 0; j < b[0].size(); ++j) out[i][j] += a[i][k] * b[k][j];
    return out;
}

inline Dense transpose(const Dense& a) {
    Dense t = zeros(a.empty() ? 0 : a[0].size(), a.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a[i].size(); ++j) t[j][i] = a[i][j];
    return t;
}

inline void softmax_rows(Dense& m) {
    for (auto& row : m) {
        double mx = row[0];
        for (double v : row) mx = std::max(mx, v);
        double s = 0;
        for (double& v : row) s += (v = std::exp(v - mx));
        for (double& v : row) v /= s;
    }
}

// Max over all entries of |a - b| / max(|a|, |b|, floor).
inline double max_rel_diff(const Dense& a, const Dense& b, double floor = 1e-12) {
    if (a.size() != b.size()) return INFINITY;
    double worst = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].size() != b[i].size()) return INFINITY;
        for (std::size_t j = 0; j < a[i].size(); ++j) {
            const double d = std::abs(a[i][j] - b[i][j]);
            worst = std::max(worst, d / std::max({std::abs(a[i][j]), std::abs(b[i][j]), floor}));
        }
    }
    return worst;
}

inline double max_rel_diff(const sct::Mat<double>& a, const Dense& b, double floor = 1e-12) {
    return max_rel_diff(from_mat(a), b, floor);
}

// --- geometry -------------------------------------------------------------------------------

// slots[i][s]: index of the token at centre + offset(s), or -1.
inline std::vector<std::vector<int>> receptive_fields(const std::vector<sct::GridPoint>& c, int k) {
    const int h = k / 2;
    std::vector<std::vector<int>> out(c.size(), std::vector<int>(static_cast<std::size_t>(k * k), -1));
    for (std::size_t i = 0; i < c.size(); ++i) {
        for (int dy = -h; dy <= h; ++dy)
            for (int dx = -h; dx <= h; ++dx)
                for (std::size_t j = 0; j < c.size(); ++j)
                    if (c[j].x == c[i].x + dx && c[j].y == c[i].y + dy)
                        out[i][static_cast<std::size_t>((dy + h) * k + (dx + h))] = static_cast<int>(j);
    }
    return out;
}

struct OracleCell {
    int a, b;
    std::vector<int> members;
};

inline std::vector<OracleCell> partition(const std::vector<sct::GridPoint>& c, int s) {
    int mx = c[0].x, my = c[0].y;
    for (auto p : c) {
        mx = std::min(mx, p.x);
        my = std::min(my, p.y);
    }
    std::map<std::pair<int, int>, std::vector<int>> cells;  // keyed by (b, a)
    for (std::size_t i = 0; i < c.size(); ++i) {
        // Offsets are non-negative, so integer division is floor division.
        cells[{(c[i].y - my) / s, (c[i].x - mx) / s}].push_back(static_cast<int>(i));
    }
    std::vector<OracleCell> out;
    for (auto& [key, m] : cells) {
        std::sort(m.begin(), m.end(), [&](int l, int r) { return std::pair(c[l].y, c[l].x) < std::pair(c[r].y, c[r].x); });
        out.push_back({key.second, key.first, m});
    }
    return out;
}

// --- kernels --------------------------------------------------------------------------------

// ESA on the live rows only, written directly from the attention equations.
inline Dense esa(const Dense& r, const Dense& w_r, const Dense& w_o) {
    const std::size_t n = r.size(), z = w_r.size(), c = w_r[0].size();
    Dense e = zeros(n, c);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j)
            for (std::size_t q = 0; q < z; ++q) e[i][j] += r[i][q] * w_r[q][j];

    Dense a = zeros(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            for (std::size_t q = 0; q < c; ++q) a[i][j] += e[i][q] * e[j][q];
            a[i][j] /= std::sqrt(static_cast<double>(c));
        }
    softmax_rows(a);
    Dense y = zeros(n, c);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t q = 0; q < c; ++q) y[i][q] += a[i][j] * e[j][q];

    Dense a2 = zeros(c, c);
    for (std::size_t i = 0; i < c; ++i)
        for (std::size_t j = 0; j < c; ++j) {
            for (std::size_t q = 0; q < n; ++q) a2[i][j] += e[q][i] * e[q][j];
            a2[i][j] /= std::sqrt(static_cast<double>(n));
        }
    softmax_rows(a2);
    Dense y2 = zeros(c, n);  // A' V' with V' = E^T
    for (std::size_t i = 0; i < c; ++i)
        for (std::size_t j = 0; j < c; ++j)
            for (std::size_t q = 0; q < n; ++q) y2[i][q] += a2[i][j] * e[q][j];

    Dense out = r;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t zz = 0; zz < z; ++zz)
            for (std::size_t q = 0; q < c; ++q) out[i][zz] += (y[i][q] + y2[q][i]) * w_o[q][zz];
    return out;
}

// ESA on a full k^2 field with a mask: masked rows come out zero.
inline Dense esa_masked(const Dense& field, const std::vector<std::uint8_t>& mask, const Dense& w_r, const Dense& w_o) {
    Dense live;
    for (std::size_t s = 0; s < field.size(); ++s)
        if (mask[s]) live.push_back(field[s]);
    const Dense att = esa(live, w_r, w_o);
    Dense out = zeros(field.size(), field[0].size());
    std::size_t q = 0;
    for (std::size_t s = 0; s < field.size(); ++s)
        if (mask[s]) out[s] = att[q++];
    return out;
}

inline Dense ssc_sa(const Dense& x, const std::vector<sct::GridPoint>& coords, const sct::SscSaParams<double>& p) {
    const int k = p.k;
    const auto fields = receptive_fields(coords, k);
    const Dense w_r = from_mat(p.esa.w_r), w_o = from_mat(p.esa.w_o), w_c = from_mat(p.w_c);
    const std::size_t z = x[0].size(), d_out = w_c[0].size();
    Dense out = zeros(x.size(), d_out);
    for (std::size_t i = 0; i < x.size(); ++i) {
        Dense field = zeros(static_cast<std::size_t>(k * k), z);
        std::vector<std::uint8_t> mask(static_cast<std::size_t>(k * k), 0);
        for (std::size_t s = 0; s < field.size(); ++s)
            if (fields[i][s] >= 0) {
                field[s] = x[static_cast<std::size_t>(fields[i][s])];
                mask[s] = 1;
            }
        const Dense att = esa_masked(field, mask, w_r, w_o);
        for (std::size_t d = 0; d < d_out; ++d) {
            double acc = d < z ? x[i][d] : 0.0;
            for (std::size_t s = 0; s < field.size(); ++s)
                for (std::size_t zz = 0; zz < z; ++zz) acc += att[s][zz] * w_c[s * z + zz][d];
            out[i][d] = acc;
        }
    }
    return out;
}

inline Dense linear(const Dense& x, const sct::Linear<double>& l) {
    Dense y = matmul(x, from_mat(l.weight));
    if (l.bias.size() > 0)
        for (auto& row : y)
            for (std::size_t j = 0; j < row.size(); ++j) row[j] += l.bias(0, static_cast<Eigen::Index>(j));
    return y;
}

inline Dense mha(const Dense& x, const sct::MhaParams<double>& p) {
    const std::size_t n = x.size(), z = x[0].size(), h = static_cast<std::size_t>(p.heads), d = z / h;
    const Dense q = linear(x, p.query), k = linear(x, p.key), v = linear(x, p.value);
    Dense concat = zeros(n, z);
    for (std::size_t hh = 0; hh < h; ++hh) {
        Dense a = zeros(n, n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                for (std::size_t c = 0; c < d; ++c) a[i][j] += q[i][hh * d + c] * k[j][hh * d + c];
                a[i][j] /= std::sqrt(static_cast<double>(d));
            }
        softmax_rows(a);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                for (std::size_t c = 0; c < d; ++c) concat[i][hh * d + c] += a[i][j] * v[j][hh * d + c];
    }
    Dense y = linear(concat, p.out);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < z; ++j) y[i][j] += x[i][j];
    return y;
}

inline double abmil(const Dense& x, const sct::AbmilParams<double>& p) {
    const Dense hv = linear(x, p.attn_v);
    const Dense hu = p.config.gated ? linear(x, p.attn_u) : Dense{};
    std::vector<double> score(x.size(), 0.0);
    for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t j = 0; j < hv[i].size(); ++j) {
            double g = std::tanh(hv[i][j]);
            if (p.config.gated) g *= 1.0 / (1.0 + std::exp(-hu[i][j]));
            score[i] += g * p.attn_w.weight(static_cast<Eigen::Index>(j), 0);
        }
    double mx = score[0], total = 0;
    for (double s : score) mx = std::max(mx, s);
    for (double& s : score) total += (s = std::exp(s - mx));
    double logit = p.classifier.bias(0, 0);
    for (std::size_t j = 0; j < x[0].size(); ++j) {
        double pooled = 0;
        for (std::size_t i = 0; i < x.size(); ++i) pooled += score[i] / total * x[i][j];
        logit += pooled * p.classifier.weight(static_cast<Eigen::Index>(j), 0);
    }
    return 1.0 / (1.0 + std::exp(-logit));
}

// --- statistics -----------------------------------------------------------------------------

inline double auc_pairs(const std::vector<double>& s, const std::vector<int>& y) {
    double num = 0;
    long pairs = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = 0; j < s.size(); ++j)
            if (y[i] == 1 && y[j] == 0) {
                ++pairs;
                num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
            }
    return num / static_cast<double>(pairs);
}

}  // namespace oracle
