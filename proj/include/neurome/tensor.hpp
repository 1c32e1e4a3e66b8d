#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <string>

#include <Eigen/Dense>

#include "neurome/error.hpp"

namespace neurome {

// Row-major so that one sample is one contiguous row and weight matrices
// serialize fan-in major without a transpose.
using Matrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXf;

inline std::span<float> as_span(Matrix& m) { return {m.data(), static_cast<std::size_t>(m.size())}; }
inline std::span<const float> as_span(const Matrix& m) { return {m.data(), static_cast<std::size_t>(m.size())}; }
inline std::span<float> as_span(Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }
inline std::span<const float> as_span(const Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& x) {
    return x.allFinite();
}

inline void require_shape(bool ok, const std::string& what) {
    if (!ok) throw ShapeMismatch(what);
}

/// FNV-1a over the raw bytes of a float buffer; used to prove buffers were not mutated.
class Checksum {
public:
    void add(std::span<const float> values) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(values.data());
        for (std::size_t i = 0; i < values.size_bytes(); ++i) {
            state_ ^= bytes[i];
            state_ *= 0x100000001b3ULL;
        }
    }
    void add(std::span<const unsigned char> bytes) {
        for (unsigned char b : bytes) {
            state_ ^= b;
            state_ *= 0x100000001b3ULL;
        }
    }
    std::uint64_t value() const noexcept { return state_; }

private:
    std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

}  // namespace neurome
