#include "sct/layers.hpp"

#include <cmath>

namespace sct {

template <class T>
void glorot_fill(Mat<T>& m, int fan_in, int fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(rng.uniform(-limit, limit));
}

template <class T>
Linear<T> make_linear(int in, int out, bool bias, Rng& rng) {
    Linear<T> l;
    l.weight.resize(in, out);
    glorot_fill(l.weight, in, out, rng);
    if (bias) l.bias = Mat<T>::Zero(1, out);
    return l;
}

template <class T>
Mat<T> linear_forward(const Linear<T>& p, const Mat<T>& x) {
    Mat<T> y = x * p.weight;
    if (p.bias.size() > 0) y.rowwise() += p.bias.row(0);
    return y;
}

template <class T>
Mat<T> linear_backward(const Linear<T>& p, const Mat<T>& x, const Mat<T>& dy, Linear<T>& grad) {
    grad.weight.noalias() += x.transpose() * dy;
    if (p.bias.size() > 0) grad.bias += dy.colwise().sum();
    return dy * p.weight.transpose();
}

template <class T>
LayerNorm<T> make_layer_norm(int width) {
    return LayerNorm<T>{Mat<T>::Ones(1, width), Mat<T>::Zero(1, width)};
}

template <class T>
Mat<T> layer_norm_forward(const LayerNorm<T>& p, const Mat<T>& x, LayerNormCache<T>* cache) {
    const auto n = x.rows();
    const auto z = x.cols();
    Mat<T> xhat(n, z);
    Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const T mu = x.row(i).mean();
        const T var = (x.row(i).array() - mu).square().mean();
        inv_std[i] = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
        xhat.row(i) = (x.row(i).array() - mu) * inv_std[i];
    }
    Mat<T> y = (xhat.array().rowwise() * p.gain.row(0).array()).matrix();
    y.rowwise() += p.bias.row(0);
    if (cache) {
        cache->xhat = std::move(xhat);
        cache->inv_std = std::move(inv_std);
    }
    return y;
}

template <class T>
Mat<T> layer_norm_backward(const LayerNorm<T>& p, const LayerNormCache<T>& c, const Mat<T>& dy, LayerNorm<T>& grad) {
    grad.gain += (dy.array() * c.xhat.array()).colwise().sum().matrix();
    grad.bias += dy.colwise().sum();
    const Mat<T> dxhat = (dy.array().rowwise() * p.gain.row(0).array()).matrix();
    Mat<T> dx(dy.rows(), dy.cols());
    for (Eigen::Index i = 0; i < dy.rows(); ++i) {
        const T m1 = dxhat.row(i).mean();
        const T m2 = (dxhat.row(i).array() * c.xhat.row(i).array()).mean();
        dx.row(i) = ((dxhat.row(i).array() - m1 - c.xhat.row(i).array() * m2) * c.inv_std[i]).matrix();
    }
    return dx;
}

template <class T>
T gelu(T x) {
    return T(0.5) * x * (T(1) + std::erf(x * static_cast<T>(M_SQRT1_2)));
}

template <class T>
T gelu_derivative(T x) {
    const T cdf = T(0.5) * (T(1) + std::erf(x * static_cast<T>(M_SQRT1_2)));
    const T pdf = std::exp(T(-0.5) * x * x) * static_cast<T>(0.5 * M_2_SQRTPI * M_SQRT1_2);
    return cdf + x * pdf;
}

template <class T>
Mlp<T> make_mlp(int width, int hidden, Rng& rng) {
    Mlp<T> m;
    m.fc1 = make_linear<T>(width, hidden, true, rng);
    m.fc2 = make_linear<T>(hidden, width, true, rng);
    return m;
}

template <class T>
Mat<T> mlp_forward(const Mlp<T>& p, const Mat<T>& x, MlpCache<T>* cache) {
    Mat<T> pre = linear_forward(p.fc1, x);
    Mat<T> act = pre.unaryExpr([](T v) { return gelu(v); });
    Mat<T> y = linear_forward(p.fc2, act) + x;
    if (cache) {
        cache->input = x;
        cache->pre = std::move(pre);
        cache->act = std::move(act);
    }
    return y;
}

template <class T>
Mat<T> mlp_backward(const Mlp<T>& p, const MlpCache<T>& c, const Mat<T>& dy, Mlp<T>& grad) {
    Mat<T> dact = linear_backward(p.fc2, c.act, dy, grad.fc2);
    Mat<T> dpre = (dact.array() * c.pre.unaryExpr([](T v) { return gelu_derivative(v); }).array()).matrix();
    Mat<T> dx = linear_backward(p.fc1, c.input, dpre, grad.fc1);
    dx += dy;
    return dx;
}

template <class T>
void softmax_rows(Mat<T>& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const T mx = m.row(i).maxCoeff();
        m.row(i) = (m.row(i).array() - mx).exp().matrix();
        m.row(i) /= m.row(i).sum();
    }
}

template <class T>
Mat<T> softmax_rows_backward(const Mat<T>& probs, const Mat<T>& dprobs) {
    Mat<T> out = (probs.array() * dprobs.array()).matrix();
    const Eigen::Matrix<T, Eigen::Dynamic, 1> dots = out.rowwise().sum();
    out -= (probs.array().colwise() * dots.array()).matrix();
    return out;
}

#define SCT_INSTANTIATE_LAYERS(T)                                                                        \
    template void glorot_fill<T>(Mat<T>&, int, int, Rng&);                                              \
    template Linear<T> make_linear<T>(int, int, bool, Rng&);                                            \
    template Mat<T> linear_forward<T>(const Linear<T>&, const Mat<T>&);                                 \
    template Mat<T> linear_backward<T>(const Linear<T>&, const Mat<T>&, const Mat<T>&, Linear<T>&);      \
    template LayerNorm<T> make_layer_norm<T>(int);                                                      \
    template Mat<T> layer_norm_forward<T>(const LayerNorm<T>&, const Mat<T>&, LayerNormCache<T>*);      \
    template Mat<T> layer_norm_backward<T>(const LayerNorm<T>&, const LayerNormCache<T>&, const Mat<T>&, \
                                           LayerNorm<T>&);                                              \
    template T gelu<T>(T);                                                                              \
    template T gelu_derivative<T>(T);                                                                   \
    template Mlp<T> make_mlp<T>(int, int, Rng&);                                                        \
    template Mat<T> mlp_forward<T>(const Mlp<T>&, const Mat<T>&, MlpCache<T>*);                         \
    template Mat<T> mlp_backward<T>(const Mlp<T>&, const MlpCache<T>&, const Mat<T>&, Mlp<T>&);         \
    template void softmax_rows<T>(Mat<T>&);                                                             \
    template Mat<T> softmax_rows_backward<T>(const Mat<T>&, const Mat<T>&);

SCT_INSTANTIATE_LAYERS(float)
SCT_INSTANTIATE_LAYERS(double)

}  // namespace sct
