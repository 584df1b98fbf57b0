#include "sct/pooling.hpp"

namespace sct {

template <class T>
Mat<T> ssp_forward(const Mat<T>& x, const CellPartition& part, PoolMode mode, SspCache<T>* cache) {
    if (part.cell_of_token.size() != static_cast<std::size_t>(x.rows()))
        fail(ErrorKind::Config, "SSP: partition was built for a different token set");
    const auto m = static_cast<Eigen::Index>(part.cells.size());
    const auto z = x.cols();
    Mat<T> out(m, z);
    if (cache) {
        cache->input_rows = x.rows();
        if (mode == PoolMode::Max) cache->argmax.resize(m, z);
    }
    for (Eigen::Index c = 0; c < m; ++c) {
        const auto& members = part.cells[static_cast<std::size_t>(c)].members;
        if (mode == PoolMode::Avg) {
            out.row(c).setZero();
            for (auto j : members) out.row(c) += x.row(j);
            out.row(c) /= static_cast<T>(members.size());
            continue;
        }
        out.row(c) = x.row(members.front());
        if (cache) cache->argmax.row(c).setConstant(members.front());
        for (std::size_t q = 1; q < members.size(); ++q) {
            const auto j = members[q];
            for (Eigen::Index d = 0; d < z; ++d) {
                if (x(j, d) > out(c, d)) {
                    out(c, d) = x(j, d);
                    if (cache) cache->argmax(c, d) = j;
                }
            }
        }
    }
    return out;
}

template <class T>
Mat<T> ssp_backward(const CellPartition& part, PoolMode mode, const SspCache<T>& cache, const Mat<T>& dout) {
    Mat<T> dx = Mat<T>::Zero(cache.input_rows, dout.cols());
    for (Eigen::Index c = 0; c < dout.rows(); ++c) {
        const auto& members = part.cells[static_cast<std::size_t>(c)].members;
        if (mode == PoolMode::Avg) {
            const T w = T(1) / static_cast<T>(members.size());
            for (auto j : members) dx.row(j) += w * dout.row(c);
        } else {
            for (Eigen::Index d = 0; d < dout.cols(); ++d) dx(cache.argmax(c, d), d) += dout(c, d);
        }
    }
    return dx;
}

template Mat<float> ssp_forward<float>(const Mat<float>&, const CellPartition&, PoolMode, SspCache<float>*);
template Mat<double> ssp_forward<double>(const Mat<double>&, const CellPartition&, PoolMode, SspCache<double>*);
template Mat<float> ssp_backward<float>(const CellPartition&, PoolMode, const SspCache<float>&, const Mat<float>&);
template Mat<double> ssp_backward<double>(const CellPartition&, PoolMode, const SspCache<double>&, const Mat<double>&);

}  // namespace sct
