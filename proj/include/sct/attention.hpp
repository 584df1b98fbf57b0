#pragma once

// Local (receptive-field) and global attention kernels.

#include "sct/geometry.hpp"
#include "sct/layers.hpp"

#include <span>
#include <vector>

namespace sct {

// --- element-wise self-attention ------------------------------------------------------------
//
// For a field R (n live tokens x Z):
//   E  = R W_r                         (n x C), used as query, key and value
//   Y  = softmax(E E^T / sqrt(C)) E    spatial attention over the n live slots
//   Y' = softmax(E^T E / sqrt(n)) E^T  channel attention; n counts live slots only
//   R' = (Y + Y'^T) W_o + R
// Padded slots never enter the computation and come out as zero rows.

template <class T>
struct EsaParams {
    Mat<T> w_r;  // Z x C
    Mat<T> w_o;  // C x Z

    int width() const { return static_cast<int>(w_r.rows()); }
    int embed() const { return static_cast<int>(w_r.cols()); }

    template <class Self, class F>
    static void visit(Self& self, const std::string& prefix, F&& f) {
        f(prefix + ".w_r", self.w_r);
        f(prefix + ".w_o", self.w_o);
    }
};

template <class T>
struct EsaCache {
    Mat<T> e;        // n x C
    Mat<T> spatial;  // n x n
    Mat<T> channel;  // C x C
    Mat<T> mixed;    // n x C, Y + Y'^T
};

template <class T>
EsaParams<T> make_esa(int width, int embed, Rng& rng);

// Core on a compacted field whose embedding E = R W_r is supplied by the caller.
template <class T>
Mat<T> esa_core_forward(const EsaParams<T>& p, const Mat<T>& r, const Mat<T>& e, EsaCache<T>* cache);

// Returns dE (n x C); the skip gradient dR = dOut is left to the caller. Accumulates into grad.w_o.
template <class T>
Mat<T> esa_core_backward(const EsaParams<T>& p, const EsaCache<T>& cache, const Mat<T>& dout, EsaParams<T>& grad);

// Full k^2 x Z field with a live-slot mask.
template <class T>
struct EsaTrace {
    std::vector<int> live;  // live slot indices
    Mat<T> r;               // compacted input
    EsaCache<T> core;
};

template <class T>
Mat<T> esa_forward(const Mat<T>& field, std::span<const std::uint8_t> mask, const EsaParams<T>& p,
                   EsaTrace<T>* trace = nullptr);

template <class T>
Mat<T> esa_backward(const EsaParams<T>& p, const EsaTrace<T>& trace, const Mat<T>& dout, EsaParams<T>& grad);

// Full k^2 x k^2 spatial attention matrix (zeros on masked rows/columns) for inspection.
template <class T>
Mat<T> esa_spatial_attention(const EsaTrace<T>& trace, int area);

// --- spatially sparse convolutional self-attention ------------------------------------------
//
// f'_i = sum over live slots s of R'_i[s] W_c[s] + skip(f_i), with W_c stored slot-major as a
// (k^2 Z) x D_out matrix. The skip is the identity on the first min(Z, D_out) channels.

template <class T>
struct SscSaParams {
    int k = 3;
    EsaParams<T> esa;
    Mat<T> w_c;  // (k^2 * Z) x D_out

    int width() const { return esa.width(); }
    int out_dim() const { return static_cast<int>(w_c.cols()); }

    template <class Self, class F>
    static void visit(Self& self, const std::string& prefix, F&& f) {
        EsaParams<T>::visit(self.esa, prefix + ".esa", f);
        f(prefix + ".w_c", self.w_c);
    }
};

template <class T>
struct SscSaCache {
    Mat<T> input;
    Mat<T> e_all;  // N x C
    Mat<T> cols;   // N x (k^2 Z), attended fields laid out slot-major
    std::vector<std::vector<int>> live_slots;
    std::vector<EsaCache<T>> fields;
};

template <class T>
SscSaParams<T> make_ssc_sa(int width, int embed, int out_dim, int k, Rng& rng);

template <class T>
Mat<T> ssc_sa_forward(const Mat<T>& tokens, const ReceptiveFieldIndex& rf, const SscSaParams<T>& p,
                      SscSaCache<T>* cache);

template <class T>
Mat<T> ssc_sa_backward(const ReceptiveFieldIndex& rf, const SscSaParams<T>& p, const SscSaCache<T>& cache,
                       const Mat<T>& dout, SscSaParams<T>& grad);

// --- global multi-head self-attention (with skip) -------------------------------------------

template <class T>
struct MhaParams {
    int heads = 4;
    Linear<T> query, key, value, out;  // Z x Z each; key has no bias

    template <class Self, class F>
    static void visit(Self& self, const std::string& prefix, F&& f) {
        Linear<T>::visit(self.query, prefix + ".query", f);
        Linear<T>::visit(self.key, prefix + ".key", f);
        Linear<T>::visit(self.value, prefix + ".value", f);
        Linear<T>::visit(self.out, prefix + ".out", f);
    }
};

template <class T>
struct MhaCache {
    Mat<T> input, q, k, v, concat;
    std::vector<Mat<T>> attn;  // per head, N x N
};

template <class T>
MhaParams<T> make_mha(int width, int heads, Rng& rng);

template <class T>
Mat<T> mha_forward(const Mat<T>& tokens, const MhaParams<T>& p, MhaCache<T>* cache);

template <class T>
Mat<T> mha_backward(const MhaParams<T>& p, const MhaCache<T>& cache, const Mat<T>& dout, MhaParams<T>& grad);

}  // namespace sct
