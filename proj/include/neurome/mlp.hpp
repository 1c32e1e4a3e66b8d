#pragma once

// Fixed-topology multilayer perceptron: hidden layers share one activation,
// the output layer is affine. Weight matrix i has shape (fan_in x fan_out),
// so column j holds the incoming weights of neuron j of layer i+1.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "neurome/error.hpp"
#include "neurome/tensor.hpp"

namespace neurome {

enum class Activation : std::uint8_t { LeakyReLU = 0, ReLU = 1, TanH = 2 };

inline constexpr float kDefaultLeakSlope = 0.01f;

inline std::string to_string(Activation a) {
    switch (a) {
        case Activation::LeakyReLU: return "leaky_relu";
        case Activation::ReLU: return "relu";
        case Activation::TanH: return "tanh";
    }
    return "unknown";
}

inline Activation activation_from_string(const std::string& name) {
    if (name == "leaky_relu" || name == "LeakyReLU") return Activation::LeakyReLU;
    if (name == "relu" || name == "ReLU") return Activation::ReLU;
    if (name == "tanh" || name == "TanH") return Activation::TanH;
    throw InvalidArgument("unknown activation '" + name + "'");
}

/// Architecture of a network. Validated on construction.
class MlpSpec {
public:
    MlpSpec(std::vector<int> widths, Activation activation, float leak_slope = kDefaultLeakSlope)
        : widths_(std::move(widths)), activation_(activation), leak_slope_(leak_slope) {
        if (widths_.size() < 2) throw InvalidSpec("need at least an input and an output layer");
        for (int w : widths_) {
            if (w <= 0) throw InvalidSpec("layer widths must be positive");
        }
        if (!std::isfinite(leak_slope_)) throw InvalidSpec("leak slope must be finite");
    }

    const std::vector<int>& widths() const noexcept { return widths_; }
    Activation activation() const noexcept { return activation_; }
    float leak_slope() const noexcept { return leak_slope_; }

    int input_dim() const noexcept { return widths_.front(); }
    int output_dim() const noexcept { return widths_.back(); }
    /// Number of weight matrices.
    std::size_t layer_count() const noexcept { return widths_.size() - 1; }
    std::size_t hidden_layer_count() const noexcept { return widths_.size() - 2; }

    std::size_t parameter_count() const noexcept {
        std::size_t n = 0;
        for (std::size_t i = 0; i + 1 < widths_.size(); ++i) {
            n += static_cast<std::size_t>(widths_[i] + 1) * widths_[i + 1];
        }
        return n;
    }

    bool piecewise_linear() const noexcept {
        return activation_ == Activation::LeakyReLU || activation_ == Activation::ReLU;
    }
    bool odd_symmetric() const noexcept { return activation_ == Activation::TanH; }

    friend bool operator==(const MlpSpec&, const MlpSpec&) = default;

private:
    std::vector<int> widths_;
    Activation activation_;
    float leak_slope_;
};

/// Weights and biases of one network, together with the spec they realise.
struct MlpParams {
    MlpSpec spec;
    std::vector<Matrix> weights;
    std::vector<Vector> biases;

    explicit MlpParams(MlpSpec s) : spec(std::move(s)) {
        const auto& w = spec.widths();
        for (std::size_t i = 0; i + 1 < w.size(); ++i) {
            weights.emplace_back(Matrix::Zero(w[i], w[i + 1]));
            biases.emplace_back(Vector::Zero(w[i + 1]));
        }
    }

    std::size_t layer_count() const noexcept { return weights.size(); }

    bool shapes_match_spec() const {
        const auto& w = spec.widths();
        if (weights.size() != w.size() - 1 || biases.size() != weights.size()) return false;
        for (std::size_t i = 0; i < weights.size(); ++i) {
            if (weights[i].rows() != w[i] || weights[i].cols() != w[i + 1]) return false;
            if (biases[i].size() != w[i + 1]) return false;
        }
        return true;
    }

    bool all_finite() const {
        for (std::size_t i = 0; i < weights.size(); ++i) {
            if (!weights[i].allFinite() || !biases[i].allFinite()) return false;
        }
        return true;
    }

    /// Visits weight matrix then bias for every layer in order.
    template <typename Fn>
    void for_each_tensor(Fn&& fn) {
        for (std::size_t i = 0; i < weights.size(); ++i) {
            fn(as_span(weights[i]));
            fn(as_span(biases[i]));
        }
    }
    template <typename Fn>
    void for_each_tensor(Fn&& fn) const {
        for (std::size_t i = 0; i < weights.size(); ++i) {
            fn(as_span(weights[i]));
            fn(as_span(biases[i]));
        }
    }

    std::uint64_t checksum() const {
        Checksum c;
        for_each_tensor([&](std::span<const float> s) { c.add(s); });
        return c.value();
    }

    friend bool operator==(const MlpParams& a, const MlpParams& b) {
        if (!(a.spec == b.spec)) return false;
        for (std::size_t i = 0; i < a.weights.size(); ++i) {
            if (a.weights[i] != b.weights[i] || a.biases[i] != b.biases[i]) return false;
        }
        return true;
    }
};

/// Reverse-mode results, shape-congruent with the params and the input batch.
struct GradBundle {
    std::vector<Matrix> d_weights;
    std::vector<Vector> d_biases;
    Matrix d_inputs;

    template <typename Fn>
    void for_each_tensor(Fn&& fn) const {
        for (std::size_t i = 0; i < d_weights.size(); ++i) {
            fn(as_span(d_weights[i]));
            fn(as_span(d_biases[i]));
        }
    }
};

/// Per-layer standard deviation used by Glorot initialisation.
inline double glorot_sigma(int fan_in, int fan_out) { return std::sqrt(2.0 / static_cast<double>(fan_in + fan_out)); }

/// Gaussian Glorot initialisation of weights and biases, bit-reproducible per seed.
inline MlpParams init_glorot(const MlpSpec& spec, std::uint64_t seed) {
    MlpParams p(spec);
    std::mt19937_64 rng(seed);
    const auto& w = spec.widths();
    for (std::size_t i = 0; i < p.layer_count(); ++i) {
        std::normal_distribution<float> dist(0.0f, static_cast<float>(glorot_sigma(w[i], w[i + 1])));
        for (float& x : as_span(p.weights[i])) x = dist(rng);
        for (float& x : as_span(p.biases[i])) x = dist(rng);
    }
    return p;
}

namespace detail {

inline float activate(Activation a, float slope, float z) {
    switch (a) {
        case Activation::LeakyReLU: return z >= 0.0f ? z : slope * z;
        case Activation::ReLU: return z >= 0.0f ? z : 0.0f;
        case Activation::TanH: return std::tanh(z);
    }
    return z;
}

// Derivative expressed through the pre-activation; at exactly 0 the
// piecewise-linear kinds take the positive-side value 1.
inline float activate_grad(Activation a, float slope, float z, float out) {
    switch (a) {
        case Activation::LeakyReLU: return z >= 0.0f ? 1.0f : slope;
        case Activation::ReLU: return z >= 0.0f ? 1.0f : 0.0f;
        case Activation::TanH: return 1.0f - out * out;
    }
    return 1.0f;
}

}  // namespace detail

/// Intermediate values of a forward pass, kept for the reverse pass.
struct ForwardTrace {
    // layer_inputs[0] is the batch; layer_inputs[i] is the activated output of hidden layer i.
    std::vector<Matrix> layer_inputs;
    // Pre-activations of every hidden layer.
    std::vector<Matrix> pre_activations;
    Matrix output;
};

inline void check_input_width(const MlpParams& params, const Matrix& inputs) {
    if (inputs.cols() != params.spec.input_dim()) {
        throw ShapeMismatch("input width " + std::to_string(inputs.cols()) + " != network input dim " +
                            std::to_string(params.spec.input_dim()));
    }
}

inline ForwardTrace forward_trace(const MlpParams& params, const Matrix& inputs) {
    check_input_width(params, inputs);
    const Activation act = params.spec.activation();
    const float slope = params.spec.leak_slope();
    ForwardTrace t;
    t.layer_inputs.reserve(params.layer_count());
    t.layer_inputs.push_back(inputs);
    for (std::size_t l = 0; l < params.layer_count(); ++l) {
        Matrix z = t.layer_inputs.back() * params.weights[l];
        z.rowwise() += params.biases[l].transpose();
        if (l + 1 == params.layer_count()) {
            t.output = std::move(z);
        } else {
            Matrix a = z.unaryExpr([&](float v) { return detail::activate(act, slope, v); });
            t.pre_activations.push_back(std::move(z));
            t.layer_inputs.push_back(std::move(a));
        }
    }
    return t;
}

inline Matrix forward(const MlpParams& params, const Matrix& inputs) {
    check_input_width(params, inputs);
    const Activation act = params.spec.activation();
    const float slope = params.spec.leak_slope();
    Matrix x = inputs;
    for (std::size_t l = 0; l < params.layer_count(); ++l) {
        Matrix z = x * params.weights[l];
        z.rowwise() += params.biases[l].transpose();
        if (l + 1 < params.layer_count()) {
            x = z.unaryExpr([&](float v) { return detail::activate(act, slope, v); });
        } else {
            x = std::move(z);
        }
    }
    return x;
}

/// Gradients of sum(upstream (.) output) with respect to every parameter and every input.
inline GradBundle backward(const MlpParams& params, const ForwardTrace& trace, const Matrix& upstream) {
    if (upstream.rows() != trace.output.rows() || upstream.cols() != trace.output.cols()) {
        throw ShapeMismatch("upstream gradient shape does not match the network output");
    }
    const Activation act = params.spec.activation();
    const float slope = params.spec.leak_slope();
    const std::size_t layers = params.layer_count();

    GradBundle g;
    g.d_weights.resize(layers);
    g.d_biases.resize(layers);

    Matrix delta = upstream;
    for (std::size_t l = layers; l-- > 0;) {
        g.d_weights[l].noalias() = trace.layer_inputs[l].transpose() * delta;
        g.d_biases[l] = delta.colwise().sum().transpose();
        Matrix d_in = delta * params.weights[l].transpose();
        if (l == 0) {
            g.d_inputs = std::move(d_in);
        } else {
            const Matrix& z = trace.pre_activations[l - 1];
            const Matrix& a = trace.layer_inputs[l];
            for (Eigen::Index i = 0; i < d_in.size(); ++i) {
                d_in.data()[i] *= detail::activate_grad(act, slope, z.data()[i], a.data()[i]);
            }
            delta = std::move(d_in);
        }
    }
    return g;
}

inline GradBundle backward(const MlpParams& params, const Matrix& inputs, const Matrix& upstream) {
    return backward(params, forward_trace(params, inputs), upstream);
}

/// Mean absolute error and its gradient with respect to the prediction.
struct LossAndGrad {
    double loss = 0.0;
    Matrix grad;
};

inline LossAndGrad l1_output_loss(const Matrix& pred, const Matrix& target) {
    if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
        throw ShapeMismatch("prediction and target shapes differ");
    }
    LossAndGrad out;
    out.grad.resize(pred.rows(), pred.cols());
    const auto count = static_cast<double>(pred.size());
    if (pred.size() == 0) return out;
    const float inv = static_cast<float>(1.0 / count);
    double sum = 0.0;
    for (Eigen::Index i = 0; i < pred.size(); ++i) {
        const float diff = pred.data()[i] - target.data()[i];
        sum += std::abs(static_cast<double>(diff));
        out.grad.data()[i] = diff > 0.0f ? inv : (diff < 0.0f ? -inv : 0.0f);
    }
    out.loss = sum / count;
    return out;
}

/// Mean L1 error without the gradient.
inline double l1_error(const Matrix& pred, const Matrix& target) {
    if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
        throw ShapeMismatch("prediction and target shapes differ");
    }
    if (pred.size() == 0) return 0.0;
    double sum = 0.0;
    for (Eigen::Index i = 0; i < pred.size(); ++i) {
        sum += std::abs(static_cast<double>(pred.data()[i]) - static_cast<double>(target.data()[i]));
    }
    return sum / static_cast<double>(pred.size());
}

}  // namespace neurome
