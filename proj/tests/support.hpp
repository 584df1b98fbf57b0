#pragma once

#include "sct/blockdata.hpp"
#include "sct/model.hpp"

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace testing {

// n distinct lattice points in [0, extent)^2.
inline std::vector<sct::GridPoint> random_coords(sct::Rng& rng, std::size_t n, int extent) {
    if (n > static_cast<std::size_t>(extent) * static_cast<std::size_t>(extent))
        throw std::invalid_argument("random_coords: more points than lattice cells");
    std::set<std::pair<int, int>> seen;
    std::vector<sct::GridPoint> out;
    while (out.size() < n) {
        const int x = static_cast<int>(rng.uniform_int(0, extent - 1));
        const int y = static_cast<int>(rng.uniform_int(0, extent - 1));
        if (seen.insert({x, y}).second) out.push_back({x, y});
    }
    return out;
}

inline sct::Mat<double> random_mat(sct::Rng& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
    sct::Mat<double> m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
    return m;
}

// A multi-slide block with unique coordinates per slide and no label.
inline sct::Block random_block(sct::Rng& rng, int slides, int tiles_per_slide, int extent, int dim) {
    sct::Block b;
    b.id = "b";
    for (int s = 1; s <= slides; ++s) {
        for (auto p : random_coords(rng, static_cast<std::size_t>(tiles_per_slide), extent)) {
            b.coords.push_back(p);
            b.slide.push_back(static_cast<std::uint16_t>(s));
        }
    }
    b.features = random_mat(rng, static_cast<Eigen::Index>(b.coords.size()), dim).cast<float>();
    return b;
}

inline sct::Block permuted(const sct::Block& b, const std::vector<std::size_t>& perm) {
    sct::Block out = b;
    for (std::size_t i = 0; i < perm.size(); ++i) {
        out.coords[i] = b.coords[perm[i]];
        out.slide[i] = b.slide[perm[i]];
        out.features.row(static_cast<Eigen::Index>(i)) = b.features.row(static_cast<Eigen::Index>(perm[i]));
    }
    return out;
}

inline std::vector<std::size_t> random_permutation(sct::Rng& rng, std::size_t n) {
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = i;
    for (std::size_t i = n; i > 1; --i)
        std::swap(p[i - 1], p[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
    return p;
}

inline sct::SctConfig small_sct(int input_dim, int stages, sct::HeadKind head = sct::HeadKind::Detection) {
    sct::SctConfig c;
    c.input_dim = input_dim;
    c.head = head;
    for (int s = 0; s < stages; ++s) {
        sct::StageConfig st;
        st.width = 8;
        st.embed = 4;
        st.heads = 2;
        st.hidden = 8;
        c.stages.push_back(st);
    }
    return c;
}

// Fresh scratch directory under the build tree's temp location.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("sct_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

template <class T>
std::string le_bytes(T v) {
    std::string s(sizeof(T), '\0');
    std::memcpy(s.data(), &v, sizeof(T));
    return s;
}

}  // namespace testing
