#pragma once

// First-order optimizers with textbook update rules and the divide-by-ten
// learning-rate schedule.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "neurome/error.hpp"
#include "neurome/mlp.hpp"
#include "neurome/tensor.hpp"

namespace neurome {

enum class OptimizerKind : std::uint8_t { SGD, Adam, RMSProp, AdaDelta, Rprop, AdaGrad };

inline constexpr OptimizerKind kAllOptimizers[] = {OptimizerKind::SGD,     OptimizerKind::Adam,
                                                   OptimizerKind::RMSProp, OptimizerKind::AdaDelta,
                                                   OptimizerKind::Rprop,   OptimizerKind::AdaGrad};

inline std::string to_string(OptimizerKind k) {
    switch (k) {
        case OptimizerKind::SGD: return "sgd";
        case OptimizerKind::Adam: return "adam";
        case OptimizerKind::RMSProp: return "rmsprop";
        case OptimizerKind::AdaDelta: return "adadelta";
        case OptimizerKind::Rprop: return "rprop";
        case OptimizerKind::AdaGrad: return "adagrad";
    }
    return "unknown";
}

inline OptimizerKind optimizer_from_string(std::string name) {
    std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::tolower(c); });
    for (OptimizerKind k : kAllOptimizers) {
        if (to_string(k) == name) return k;
    }
    throw InvalidArgument("unknown optimizer '" + name + "'");
}

/// Hyperparameters; fields not used by a kind are ignored.
struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::Adam;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double decay = 0.99;  // RMSProp smoothing, AdaDelta rho
    double eta_minus = 0.5;
    double eta_plus = 1.2;
    double step_min = 1e-6;
    double step_max = 50.0;

    /// Published defaults for each kind.
    static OptimizerConfig defaults(OptimizerKind kind) {
        OptimizerConfig c;
        c.kind = kind;
        switch (kind) {
            case OptimizerKind::SGD: c.learning_rate = 0.01; break;
            case OptimizerKind::Adam: c.learning_rate = 1e-3; break;
            case OptimizerKind::RMSProp:
                c.learning_rate = 0.01;
                c.decay = 0.99;
                c.eps = 1e-8;
                break;
            case OptimizerKind::AdaDelta:
                c.learning_rate = 1.0;
                c.decay = 0.9;
                c.eps = 1e-6;
                break;
            case OptimizerKind::Rprop: c.learning_rate = 0.01; break;
            case OptimizerKind::AdaGrad:
                c.learning_rate = 0.01;
                c.eps = 1e-10;
                break;
        }
        return c;
    }
};

/// Learning-rate schedule: the rate is divided by ten at each trigger iteration.
class StepSchedule {
public:
    StepSchedule() = default;
    explicit StepSchedule(std::vector<int> triggers) : triggers_(std::move(triggers)) {
        for (std::size_t i = 1; i < triggers_.size(); ++i) {
            if (triggers_[i] <= triggers_[i - 1])
                throw InvalidArgument("schedule triggers must be strictly increasing");
        }
    }

    bool triggers_at(int iteration) const { return std::binary_search(triggers_.begin(), triggers_.end(), iteration); }
    const std::vector<int>& triggers() const noexcept { return triggers_; }

    static constexpr double kDivisor = 10.0;

private:
    std::vector<int> triggers_;
};

/// One optimizer instance with its auxiliary buffers. Buffers are sized on
/// the first step and must stay congruent afterwards.
class Optimizer {
public:
    Optimizer() : Optimizer(OptimizerConfig{}) {}
    explicit Optimizer(const OptimizerConfig& config) : config_(config), lr_(config.learning_rate) {
        if (!(lr_ > 0.0)) throw InvalidArgument("learning rate must be positive");
    }

    const OptimizerConfig& config() const noexcept { return config_; }
    OptimizerKind kind() const noexcept { return config_.kind; }
    double learning_rate() const noexcept { return lr_; }
    void set_learning_rate(double lr) {
        if (!(lr > 0.0)) throw InvalidArgument("learning rate must be positive");
        lr_ = lr;
    }
    std::uint64_t step_count() const noexcept { return steps_; }

    /// Divides the rate by ten when the iteration is a trigger. Returns whether it fired.
    bool apply_schedule(int iteration, const StepSchedule& schedule) {
        if (!schedule.triggers_at(iteration)) return false;
        lr_ /= StepSchedule::kDivisor;
        return true;
    }

    /// Applies one update to a list of parameter buffers given matching gradients.
    void step(std::span<const std::span<float>> params, std::span<const std::span<const float>> grads) {
        if (params.size() != grads.size()) throw ShapeMismatch("parameter and gradient tensor counts differ");
        if (slots_.empty()) {
            slots_.resize(params.size());
            for (std::size_t i = 0; i < params.size(); ++i) init_slot(slots_[i], params[i].size());
        } else if (slots_.size() != params.size()) {
            throw ShapeMismatch("optimizer state was built for a different tensor count");
        }
        ++steps_;
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (params[i].size() != grads[i].size() || slots_[i].size != params[i].size()) {
                throw ShapeMismatch("tensor " + std::to_string(i) + " is not congruent with its gradient/state");
            }
            update(slots_[i], params[i], grads[i]);
        }
    }

    void step(MlpParams& params, const GradBundle& grads) {
        std::vector<std::span<float>> p;
        std::vector<std::span<const float>> g;
        params.for_each_tensor([&](std::span<float> s) { p.push_back(s); });
        grads.for_each_tensor([&](std::span<const float> s) { g.push_back(s); });
        step(p, g);
    }

    void step(Matrix& x, const Matrix& grad) {
        require_shape(x.rows() == grad.rows() && x.cols() == grad.cols(), "tensor and gradient shapes differ");
        const std::span<float> p[] = {as_span(x)};
        const std::span<const float> g[] = {as_span(grad)};
        step(p, g);
    }

private:
    struct Slot {
        std::size_t size = 0;
        std::vector<float> a;  // first moment / accumulator / previous gradient
        std::vector<float> b;  // second moment / delta accumulator / per-weight step
    };

    void init_slot(Slot& s, std::size_t n) const {
        s.size = n;
        switch (config_.kind) {
            case OptimizerKind::SGD: break;
            case OptimizerKind::RMSProp:
            case OptimizerKind::AdaGrad: s.a.assign(n, 0.0f); break;
            case OptimizerKind::Adam:
            case OptimizerKind::AdaDelta:
                s.a.assign(n, 0.0f);
                s.b.assign(n, 0.0f);
                break;
            case OptimizerKind::Rprop:
                s.a.assign(n, 0.0f);
                s.b.assign(n, static_cast<float>(lr_));
                break;
        }
    }

    void update(Slot& s, std::span<float> p, std::span<const float> g) const {
        const std::size_t n = p.size();
        const double lr = lr_;
        switch (config_.kind) {
            case OptimizerKind::SGD:
                for (std::size_t i = 0; i < n; ++i) p[i] -= static_cast<float>(lr * g[i]);
                break;
            case OptimizerKind::Adam: {
                const double b1 = config_.beta1, b2 = config_.beta2;
                const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
                const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
                for (std::size_t i = 0; i < n; ++i) {
                    const double m = b1 * s.a[i] + (1.0 - b1) * g[i];
                    const double v = b2 * s.b[i] + (1.0 - b2) * static_cast<double>(g[i]) * g[i];
                    s.a[i] = static_cast<float>(m);
                    s.b[i] = static_cast<float>(v);
                    p[i] -= static_cast<float>(lr * (m / c1) / (std::sqrt(v / c2) + config_.eps));
                }
                break;
            }
            case OptimizerKind::RMSProp: {
                const double rho = config_.decay;
                for (std::size_t i = 0; i < n; ++i) {
                    const double v = rho * s.a[i] + (1.0 - rho) * static_cast<double>(g[i]) * g[i];
                    s.a[i] = static_cast<float>(v);
                    p[i] -= static_cast<float>(lr * g[i] / (std::sqrt(v) + config_.eps));
                }
                break;
            }
            case OptimizerKind::AdaDelta: {
                const double rho = config_.decay, eps = config_.eps;
                for (std::size_t i = 0; i < n; ++i) {
                    const double v = rho * s.a[i] + (1.0 - rho) * static_cast<double>(g[i]) * g[i];
                    const double delta = std::sqrt(s.b[i] + eps) / std::sqrt(v + eps) * g[i];
                    s.a[i] = static_cast<float>(v);
                    s.b[i] = static_cast<float>(rho * s.b[i] + (1.0 - rho) * delta * delta);
                    p[i] -= static_cast<float>(lr * delta);
                }
                break;
            }
            case OptimizerKind::Rprop: {
                const auto lo = static_cast<float>(config_.step_min), hi = static_cast<float>(config_.step_max);
                for (std::size_t i = 0; i < n; ++i) {
                    float gi = g[i];
                    const float prod = gi * s.a[i];
                    if (prod > 0.0f) {
                        s.b[i] = std::min(s.b[i] * static_cast<float>(config_.eta_plus), hi);
                    } else if (prod < 0.0f) {
                        s.b[i] = std::max(s.b[i] * static_cast<float>(config_.eta_minus), lo);
                        gi = 0.0f;
                    }
                    const float sign = gi > 0.0f ? 1.0f : (gi < 0.0f ? -1.0f : 0.0f);
                    p[i] -= sign * s.b[i];
                    s.a[i] = gi;
                }
                break;
            }
            case OptimizerKind::AdaGrad:
                for (std::size_t i = 0; i < n; ++i) {
                    s.a[i] += g[i] * g[i];
                    p[i] -= static_cast<float>(lr * g[i] / (std::sqrt(static_cast<double>(s.a[i])) + config_.eps));
                }
                break;
        }
    }

    OptimizerConfig config_;
    double lr_;
    std::uint64_t steps_ = 0;
    std::vector<Slot> slots_;
};

}  // namespace neurome
