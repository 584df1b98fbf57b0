#pragma once

// Dense building blocks with explicit backward passes. Every backward accumulates (+=) into a
// gradient struct of the same type as the parameters and returns the gradient w.r.t. its input.

#include "sct/common.hpp"

#include <string>

namespace sct {

template <class T>
struct Linear {
    Mat<T> weight;  // in x out
    Mat<T> bias;    // 1 x out; empty for bias-free layers

    int in() const { return static_cast<int>(weight.rows()); }
    int out() const { return static_cast<int>(weight.cols()); }

    template <class Self, class F>
    static void visit(Self& self, const std::string& prefix, F&& f) {
        f(prefix + ".weight", self.weight);
        if (self.bias.size() > 0) f(prefix + ".bias", self.bias);
    }
};

template <class T>
Linear<T> make_linear(int in, int out, bool bias, Rng& rng);

template <class T>
Mat<T> linear_forward(const Linear<T>& p, const Mat<T>& x);

template <class T>
Mat<T> linear_backward(const Linear<T>& p, const Mat<T>& x, const Mat<T>& dy, Linear<T>& grad);

// Normalisation over the channel axis of each row, eps = 1e-5.
template <class T>
struct LayerNorm {
    Mat<T> gain;  // 1 x Z
    Mat<T> bias;  // 1 x Z

    template <class Self, class F>
    static void visit(Self& self, const std::string& prefix, F&& f) {
        f(prefix + ".gain", self.gain);
        f(prefix + ".bias", self.bias);
    }
};

template <class T>
struct LayerNormCache {
    Mat<T> xhat;
    Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std;
};

inline constexpr double kLayerNormEps = 1e-5;

template <class T>
LayerNorm<T> make_layer_norm(int width);

template <class T>
Mat<T> layer_norm_forward(const LayerNorm<T>& p, const Mat<T>& x, LayerNormCache<T>* cache);

template <class T>
Mat<T> layer_norm_backward(const LayerNorm<T>& p, const LayerNormCache<T>& cache, const Mat<T>& dy, LayerNorm<T>& grad);

// Exact (erf) GELU.
template <class T>
T gelu(T x);
template <class T>
T gelu_derivative(T x);

// Two dense layers with GELU in between and a skip from input to output.
template <class T>
struct Mlp {
    Linear<T> fc1;  // Z x H
    Linear<T> fc2;  // H x Z

    template <class Self, class F>
    static void visit(Self& self, const std::string& prefix, F&& f) {
        Linear<T>::visit(self.fc1, prefix + ".fc1", f);
        Linear<T>::visit(self.fc2, prefix + ".fc2", f);
    }
};

template <class T>
struct MlpCache {
    Mat<T> input;
    Mat<T> pre;   // fc1 output
    Mat<T> act;   // gelu(pre)
};

template <class T>
Mlp<T> make_mlp(int width, int hidden, Rng& rng);

template <class T>
Mat<T> mlp_forward(const Mlp<T>& p, const Mat<T>& x, MlpCache<T>* cache);

template <class T>
Mat<T> mlp_backward(const Mlp<T>& p, const MlpCache<T>& cache, const Mat<T>& dy, Mlp<T>& grad);

// Row-wise softmax and its vector-Jacobian product.
template <class T>
void softmax_rows(Mat<T>& m);

template <class T>
Mat<T> softmax_rows_backward(const Mat<T>& probs, const Mat<T>& dprobs);

// Glorot-uniform fill.
template <class T>
void glorot_fill(Mat<T>& m, int fan_in, int fan_out, Rng& rng);

// Parameter-struct helpers ------------------------------------------------------------------

template <class P>
P zeros_like(const P& params) {
    P out = params;
    P::visit(out, "", [](const std::string&, auto& m) { m.setZero(); });
    return out;
}

template <class P>
std::size_t count_scalars(const P& params) {
    std::size_t n = 0;
    P::visit(params, "", [&](const std::string&, const auto& m) { n += static_cast<std::size_t>(m.size()); });
    return n;
}

}  // namespace sct
