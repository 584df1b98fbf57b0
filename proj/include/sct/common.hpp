#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace sct {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Error classes map onto CLI exit codes (see exit_code()).
enum class ErrorKind {
    Usage,        // bad command line or config value
    Config,       // invalid configuration of a component
    Unsupported,  // a configuration the library deliberately does not implement
    Input,        // invalid call arguments (empty block, misaligned arrays, ...)
    Format,       // unrecognised file framing: magic, version
    Schema,       // structurally valid file whose contents disagree with its header/config
    Data,         // bad values inside otherwise well-formed data
    Corruption,   // checksum mismatch or truncation
    Io,           // cannot open/write a path
    Divergence,   // non-finite loss or gradient during training
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

const char* to_string(ErrorKind kind);

// 0 success, 1 usage/config, 2 data/file, 3 numeric.
int exit_code(ErrorKind kind);

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

// Deterministic RNG with platform-independent uniform/normal draws (std::*_distribution output is
// implementation defined, which would break byte-identical synthetic data across toolchains).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        // splitmix64
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Inclusive integer range.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<std::int64_t>(next_u64() % span);
    }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * M_PI * u2);
        has_spare_ = true;
        return r * std::cos(2.0 * M_PI * u2);
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Independent stream for a sub-task (e.g. bootstrap resample r of a master seed).
    static std::uint64_t derive(std::uint64_t master, std::uint64_t index) {
        Rng r(master ^ (0xD1B54A32D192ED03ull * (index + 1)));
        return r.next_u64();
    }

private:
    std::uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace sct
