#pragma once

#include "sct/geometry.hpp"

namespace sct {

enum class PoolMode : std::uint8_t { Max = 0, Avg = 1 };

template <class T>
struct SspCache {
    // Max mode: the member token chosen for each (cell, channel); first maximum in member order.
    Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> argmax;
    Eigen::Index input_rows = 0;
};

// One output token per non-empty cell. Output coordinates are partition.cell_coords().
template <class T>
Mat<T> ssp_forward(const Mat<T>& tokens, const CellPartition& partition, PoolMode mode, SspCache<T>* cache);

template <class T>
Mat<T> ssp_backward(const CellPartition& partition, PoolMode mode, const SspCache<T>& cache, const Mat<T>& dout);

}  // namespace sct
