#include "sct/attention.hpp"

#include <cmath>

namespace sct {

template <class T>
EsaParams<T> make_esa(int width, int embed, Rng& rng) {
    EsaParams<T> p;
    p.w_r.resize(width, embed);
    p.w_o.resize(embed, width);
    glorot_fill(p.w_r, width, embed, rng);
    glorot_fill(p.w_o, embed, width, rng);
    return p;
}

template <class T>
Mat<T> esa_core_forward(const EsaParams<T>& p, const Mat<T>& r, const Mat<T>& e, EsaCache<T>* cache) {
    const auto n = e.rows();
    const auto c = e.cols();
    if (r.rows() != n || r.cols() != p.width() || c != p.embed())
        fail(ErrorKind::Config, "ESA: field shape does not match parameters");

    Mat<T> spatial = e * e.transpose();
    spatial *= T(1) / std::sqrt(static_cast<T>(c));
    softmax_rows(spatial);

    Mat<T> channel = e.transpose() * e;
    channel *= T(1) / std::sqrt(static_cast<T>(n));
    softmax_rows(channel);

    Mat<T> mixed = spatial * e;
    mixed.noalias() += e * channel.transpose();
    Mat<T> out = mixed * p.w_o + r;
    if (cache) {
        cache->e = e;
        cache->spatial = std::move(spatial);
        cache->channel = std::move(channel);
        cache->mixed = std::move(mixed);
    }
    return out;
}

template <class T>
Mat<T> esa_core_backward(const EsaParams<T>& p, const EsaCache<T>& c, const Mat<T>& dout, EsaParams<T>& grad) {
    const auto n = c.e.rows();
    const auto ch = c.e.cols();
    grad.w_o.noalias() += c.mixed.transpose() * dout;
    const Mat<T> dmixed = dout * p.w_o.transpose();

    // spatial branch: Y = A E
    Mat<T> de = c.spatial.transpose() * dmixed;
    Mat<T> ds = softmax_rows_backward(c.spatial, Mat<T>(dmixed * c.e.transpose()));
    ds *= T(1) / std::sqrt(static_cast<T>(ch));
    de.noalias() += (ds + ds.transpose()) * c.e;

    // channel branch: Y'^T = E A'^T
    de.noalias() += dmixed * c.channel;
    Mat<T> dsc = softmax_rows_backward(c.channel, Mat<T>(dmixed.transpose() * c.e));
    dsc *= T(1) / std::sqrt(static_cast<T>(n));
    de.noalias() += c.e * (dsc + dsc.transpose());
    return de;
}

template <class T>
Mat<T> esa_forward(const Mat<T>& field, std::span<const std::uint8_t> mask, const EsaParams<T>& p, EsaTrace<T>* trace) {
    if (static_cast<std::size_t>(field.rows()) != mask.size())
        fail(ErrorKind::Config, "ESA: mask length does not match field rows");
    if (field.cols() != p.width()) fail(ErrorKind::Config, "ESA: field width does not match W_r");
    std::vector<int> live;
    for (std::size_t s = 0; s < mask.size(); ++s)
        if (mask[s]) live.push_back(static_cast<int>(s));
    if (live.empty()) fail(ErrorKind::Input, "ESA: field has no live slot");

    Mat<T> r(static_cast<Eigen::Index>(live.size()), field.cols());
    for (std::size_t q = 0; q < live.size(); ++q) r.row(static_cast<Eigen::Index>(q)) = field.row(live[q]);
    const Mat<T> e = r * p.w_r;
    EsaCache<T> cache;
    const Mat<T> compact = esa_core_forward(p, r, e, trace ? &cache : nullptr);

    Mat<T> out = Mat<T>::Zero(field.rows(), field.cols());
    for (std::size_t q = 0; q < live.size(); ++q) out.row(live[q]) = compact.row(static_cast<Eigen::Index>(q));
    if (trace) {
        trace->live = std::move(live);
        trace->r = std::move(r);
        trace->core = std::move(cache);
    }
    return out;
}

template <class T>
Mat<T> esa_backward(const EsaParams<T>& p, const EsaTrace<T>& t, const Mat<T>& dout, EsaParams<T>& grad) {
    const auto n = static_cast<Eigen::Index>(t.live.size());
    Mat<T> dcompact(n, dout.cols());
    for (Eigen::Index q = 0; q < n; ++q) dcompact.row(q) = dout.row(t.live[q]);
    const Mat<T> de = esa_core_backward(p, t.core, dcompact, grad);
    grad.w_r.noalias() += t.r.transpose() * de;
    const Mat<T> dr = dcompact + de * p.w_r.transpose();

    Mat<T> dfield = Mat<T>::Zero(dout.rows(), dout.cols());
    for (Eigen::Index q = 0; q < n; ++q) dfield.row(t.live[q]) = dr.row(q);
    return dfield;
}

template <class T>
Mat<T> esa_spatial_attention(const EsaTrace<T>& t, int area) {
    Mat<T> full = Mat<T>::Zero(area, area);
    for (std::size_t a = 0; a < t.live.size(); ++a)
        for (std::size_t b = 0; b < t.live.size(); ++b)
            full(t.live[a], t.live[b]) = t.core.spatial(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
    return full;
}

template <class T>
SscSaParams<T> make_ssc_sa(int width, int embed, int out_dim, int k, Rng& rng) {
    if (k < 1 || k % 2 == 0) fail(ErrorKind::Config, "SSC-SA kernel size must be odd");
    SscSaParams<T> p;
    p.k = k;
    p.esa = make_esa<T>(width, embed, rng);
    p.w_c.resize(static_cast<Eigen::Index>(k) * k * width, out_dim);
    glorot_fill(p.w_c, k * k * width, out_dim, rng);
    return p;
}

template <class T>
Mat<T> ssc_sa_forward(const Mat<T>& x, const ReceptiveFieldIndex& rf, const SscSaParams<T>& p, SscSaCache<T>* cache) {
    if (rf.k != p.k)
        fail(ErrorKind::Config, "SSC-SA: receptive fields built with k=" + std::to_string(rf.k) + " but parameters use k=" +
                                    std::to_string(p.k));
    if (static_cast<std::size_t>(x.rows()) != rf.size()) fail(ErrorKind::Config, "SSC-SA: token count differs from field index");
    if (x.cols() != p.width()) fail(ErrorKind::Config, "SSC-SA: token width does not match parameters");

    const auto n = x.rows();
    const auto z = x.cols();
    const int area = rf.area();
    const Mat<T> e_all = x * p.esa.w_r;
    Mat<T> cols = Mat<T>::Zero(n, static_cast<Eigen::Index>(area) * z);
    std::vector<std::vector<int>> live_slots(static_cast<std::size_t>(n));
    std::vector<EsaCache<T>> fields(cache ? static_cast<std::size_t>(n) : 0);

    Mat<T> r, e;
    for (Eigen::Index i = 0; i < n; ++i) {
        auto& live = live_slots[static_cast<std::size_t>(i)];
        for (int s = 0; s < area; ++s)
            if (rf.mask(static_cast<std::size_t>(i), s)) live.push_back(s);
        const auto m = static_cast<Eigen::Index>(live.size());
        r.resize(m, z);
        e.resize(m, e_all.cols());
        for (Eigen::Index q = 0; q < m; ++q) {
            const auto j = rf.at(static_cast<std::size_t>(i), live[q]);
            r.row(q) = x.row(j);
            e.row(q) = e_all.row(j);
        }
        const Mat<T> attended = esa_core_forward(p.esa, r, e, cache ? &fields[static_cast<std::size_t>(i)] : nullptr);
        for (Eigen::Index q = 0; q < m; ++q) cols.row(i).segment(live[q] * z, z) = attended.row(q);
    }

    Mat<T> out = cols * p.w_c;
    const auto shared = std::min<Eigen::Index>(z, out.cols());
    out.leftCols(shared) += x.leftCols(shared);
    if (cache) {
        cache->input = x;
        cache->e_all = e_all;
        cache->cols = std::move(cols);
        cache->live_slots = std::move(live_slots);
        cache->fields = std::move(fields);
    }
    return out;
}

template <class T>
Mat<T> ssc_sa_backward(const ReceptiveFieldIndex& rf, const SscSaParams<T>& p, const SscSaCache<T>& c,
                       const Mat<T>& dout, SscSaParams<T>& grad) {
    const auto n = c.input.rows();
    const auto z = c.input.cols();
    grad.w_c.noalias() += c.cols.transpose() * dout;
    const Mat<T> dcols = dout * p.w_c.transpose();

    Mat<T> dx = Mat<T>::Zero(n, z);
    const auto shared = std::min<Eigen::Index>(z, dout.cols());
    dx.leftCols(shared) += dout.leftCols(shared);

    Mat<T> de_all = Mat<T>::Zero(n, c.e_all.cols());
    Mat<T> dfield;
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& live = c.live_slots[static_cast<std::size_t>(i)];
        const auto m = static_cast<Eigen::Index>(live.size());
        dfield.resize(m, z);
        for (Eigen::Index q = 0; q < m; ++q) dfield.row(q) = dcols.row(i).segment(live[q] * z, z);
        const Mat<T> de = esa_core_backward(p.esa, c.fields[static_cast<std::size_t>(i)], dfield, grad.esa);
        for (Eigen::Index q = 0; q < m; ++q) {
            const auto j = rf.at(static_cast<std::size_t>(i), live[q]);
            dx.row(j) += dfield.row(q);
            de_all.row(j) += de.row(q);
        }
    }
    grad.esa.w_r.noalias() += c.input.transpose() * de_all;
    dx.noalias() += de_all * p.esa.w_r.transpose();
    return dx;
}

template <class T>
MhaParams<T> make_mha(int width, int heads, Rng& rng) {
    if (heads < 1 || width % heads != 0)
        fail(ErrorKind::Config, "attention heads (" + std::to_string(heads) + ") must divide width " + std::to_string(width));
    MhaParams<T> p;
    p.heads = heads;
    p.query = make_linear<T>(width, width, true, rng);
    // A key bias shifts every score of a query by the same amount, which softmax cancels.
    p.key = make_linear<T>(width, width, false, rng);
    p.value = make_linear<T>(width, width, true, rng);
    p.out = make_linear<T>(width, width, true, rng);
    return p;
}

template <class T>
Mat<T> mha_forward(const Mat<T>& x, const MhaParams<T>& p, MhaCache<T>* cache) {
    const auto n = x.rows();
    const auto z = x.cols();
    if (z % p.heads != 0) fail(ErrorKind::Config, "MHA: heads must divide width");
    const auto d = z / p.heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(d));

    Mat<T> q = linear_forward(p.query, x);
    Mat<T> k = linear_forward(p.key, x);
    Mat<T> v = linear_forward(p.value, x);
    Mat<T> concat(n, z);
    std::vector<Mat<T>> attn;
    for (int h = 0; h < p.heads; ++h) {
        Mat<T> a = q.middleCols(h * d, d) * k.middleCols(h * d, d).transpose();
        a *= scale;
        softmax_rows(a);
        concat.middleCols(h * d, d) = a * v.middleCols(h * d, d);
        if (cache) attn.push_back(std::move(a));
    }
    Mat<T> y = linear_forward(p.out, concat) + x;
    if (cache) {
        cache->input = x;
        cache->q = std::move(q);
        cache->k = std::move(k);
        cache->v = std::move(v);
        cache->concat = std::move(concat);
        cache->attn = std::move(attn);
    }
    return y;
}

template <class T>
Mat<T> mha_backward(const MhaParams<T>& p, const MhaCache<T>& c, const Mat<T>& dy, MhaParams<T>& grad) {
    const auto n = c.input.rows();
    const auto z = c.input.cols();
    const auto d = z / p.heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(d));

    const Mat<T> dconcat = linear_backward(p.out, c.concat, dy, grad.out);
    Mat<T> dq(n, z), dk(n, z), dv(n, z);
    for (int h = 0; h < p.heads; ++h) {
        const auto& a = c.attn[static_cast<std::size_t>(h)];
        const auto dO = dconcat.middleCols(h * d, d);
        dv.middleCols(h * d, d) = a.transpose() * dO;
        Mat<T> ds = softmax_rows_backward(a, Mat<T>(dO * c.v.middleCols(h * d, d).transpose()));
        ds *= scale;
        dq.middleCols(h * d, d) = ds * c.k.middleCols(h * d, d);
        dk.middleCols(h * d, d) = ds.transpose() * c.q.middleCols(h * d, d);
    }
    Mat<T> dx = dy;
    dx += linear_backward(p.query, c.input, dq, grad.query);
    dx += linear_backward(p.key, c.input, dk, grad.key);
    dx += linear_backward(p.value, c.input, dv, grad.value);
    return dx;
}

#define SCT_INSTANTIATE_ATTENTION(T)                                                                             \
    template EsaParams<T> make_esa<T>(int, int, Rng&);                                                          \
    template Mat<T> esa_core_forward<T>(const EsaParams<T>&, const Mat<T>&, const Mat<T>&, EsaCache<T>*);       \
    template Mat<T> esa_core_backward<T>(const EsaParams<T>&, const EsaCache<T>&, const Mat<T>&, EsaParams<T>&); \
    template Mat<T> esa_forward<T>(const Mat<T>&, std::span<const std::uint8_t>, const EsaParams<T>&,           \
                                   EsaTrace<T>*);                                                               \
    template Mat<T> esa_backward<T>(const EsaParams<T>&, const EsaTrace<T>&, const Mat<T>&, EsaParams<T>&);     \
    template Mat<T> esa_spatial_attention<T>(const EsaTrace<T>&, int);                                          \
    template SscSaParams<T> make_ssc_sa<T>(int, int, int, int, Rng&);                                           \
    template Mat<T> ssc_sa_forward<T>(const Mat<T>&, const ReceptiveFieldIndex&, const SscSaParams<T>&,         \
                                      SscSaCache<T>*);                                                          \
    template Mat<T> ssc_sa_backward<T>(const ReceptiveFieldIndex&, const SscSaParams<T>&, const SscSaCache<T>&, \
                                       const Mat<T>&, SscSaParams<T>&);                                         \
    template MhaParams<T> make_mha<T>(int, int, Rng&);                                                          \
    template Mat<T> mha_forward<T>(const Mat<T>&, const MhaParams<T>&, MhaCache<T>*);                           \
    template Mat<T> mha_backward<T>(const MhaParams<T>&, const MhaCache<T>&, const Mat<T>&, MhaParams<T>&);

SCT_INSTANTIATE_ATTENTION(float)
SCT_INSTANTIATE_ATTENTION(double)

}  // namespace sct
