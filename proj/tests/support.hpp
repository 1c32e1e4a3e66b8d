#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "neurome/neurome.hpp"

namespace neurome::testing {

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed, float stddev = 1.0f) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> n(0.0f, stddev);
    Matrix m(rows, cols);
    for (float& x : as_span(m)) x = n(rng);
    return m;
}

inline MlpParams random_net(std::vector<int> widths, Activation act, std::uint64_t seed) {
    return init_glorot(MlpSpec(std::move(widths), act), seed);
}

/// max |a - b| / max(max |b|, floor)
inline double relative_difference(const Matrix& a, const Matrix& b, double floor = 1e-6) {
    const double scale = std::max(static_cast<double>(b.cwiseAbs().maxCoeff()), floor);
    return static_cast<double>((a - b).cwiseAbs().maxCoeff()) / scale;
}

inline double max_param_difference(const MlpParams& a, const MlpParams& b) {
    double m = 0.0;
    for (std::size_t l = 0; l < a.layer_count(); ++l) {
        m = std::max(m, static_cast<double>((a.weights[l] - b.weights[l]).cwiseAbs().maxCoeff()));
        m = std::max(m, static_cast<double>((a.biases[l] - b.biases[l]).cwiseAbs().maxCoeff()));
    }
    return m;
}

/// Central difference of a scalar function of one float, evaluated in double.
/// The divisor is the step actually taken after rounding to float.
inline double central_difference(float& x, double h, const std::function<double()>& f) {
    const float saved = x;
    const float hi = static_cast<float>(saved + h);
    const float lo = static_cast<float>(saved - h);
    x = hi;
    const double up = f();
    x = lo;
    const double down = f();
    x = saved;
    return (up - down) / (static_cast<double>(hi) - static_cast<double>(lo));
}

/// sum(upstream ⊙ forward(params, inputs)) in double precision.
inline double weighted_output(const MlpParams& params, const Matrix& inputs, const Matrix& upstream) {
    const Matrix out = forward(params, inputs);
    return (out.cast<double>().array() * upstream.cast<double>().array()).sum();
}

/// A random valid isomorphism sequence for the spec's activation.
inline std::vector<IsoTransform> random_transforms(const MlpSpec& spec, std::uint64_t seed, int count) {
    std::mt19937_64 rng(seed);
    std::vector<IsoTransform> out;
    const std::size_t hidden = spec.hidden_layer_count();
    if (hidden == 0) return out;
    std::uniform_int_distribution<std::size_t> pick_layer(0, hidden - 1);
    std::uniform_real_distribution<double> pick_alpha(0.25, 4.0);
    for (int i = 0; i < count; ++i) {
        const std::size_t layer = pick_layer(rng);
        const int width = spec.widths()[layer + 1];
        std::uniform_int_distribution<int> pick_neuron(0, width - 1);
        std::vector<int> kinds = {0};
        if (spec.piecewise_linear()) kinds.push_back(1);
        if (spec.odd_symmetric()) kinds.push_back(2);
        std::uniform_int_distribution<std::size_t> pick_kind(0, kinds.size() - 1);
        switch (kinds[pick_kind(rng)]) {
            case 0: {
                std::vector<int> perm(static_cast<std::size_t>(width));
                for (int k = 0; k < width; ++k) perm[static_cast<std::size_t>(k)] = k;
                std::shuffle(perm.begin(), perm.end(), rng);
                out.push_back(Permute{layer, perm});
                break;
            }
            case 1: out.push_back(Scale{layer, pick_neuron(rng), pick_alpha(rng)}); break;
            default: out.push_back(Polarity{layer, pick_neuron(rng)}); break;
        }
    }
    return out;
}

inline MlpParams apply_all(MlpParams p, const std::vector<IsoTransform>& ts) {
    for (const auto& t : ts) p = apply_transform(std::move(p), t);
    return p;
}

}  // namespace neurome::testing
