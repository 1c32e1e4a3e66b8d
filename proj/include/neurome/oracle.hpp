#pragma once

// The black box: a hidden network reachable only through counted queries.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "neurome/data.hpp"
#include "neurome/error.hpp"
#include "neurome/mlp.hpp"
#include "neurome/optim.hpp"

namespace neurome {

class OracleEvaluator;
class OracleArchive;

/// Passkey for reading hidden parameters. Only the end-of-experiment
/// evaluator and the black-box archive can mint one.
class SealedAccess {
    friend class OracleEvaluator;
    friend class OracleArchive;
    SealedAccess() = default;
};

/// How a black box was produced; public knowledge, unlike its weights.
struct BlackboxProvenance {
    std::uint64_t seed = 0;
    OptimizerKind optimizer = OptimizerKind::Adam;
    int epochs = 0;
    std::uint64_t dataset_checksum = 0;
    int batch_size = 0;
};

class QueryOracle {
public:
    explicit QueryOracle(MlpParams hidden, BlackboxProvenance provenance = {})
        : hidden_(std::move(hidden)), provenance_(provenance) {
        if (!hidden_.shapes_match_spec()) throw ShapeMismatch("oracle parameters do not match their spec");
    }

    QueryOracle(QueryOracle&& other) noexcept
        : hidden_(std::move(other.hidden_)), provenance_(other.provenance_), query_count_(other.query_count_.load()) {}
    QueryOracle(const QueryOracle&) = delete;
    QueryOracle& operator=(const QueryOracle&) = delete;
    QueryOracle& operator=(QueryOracle&&) = delete;

    /// Evaluates the hidden network; every submitted row is counted.
    Matrix query(const Matrix& inputs) const {
        check_input_width(hidden_, inputs);
        query_count_.fetch_add(static_cast<std::uint64_t>(inputs.rows()), std::memory_order_relaxed);
        if (inputs.rows() == 0) return Matrix(0, hidden_.spec.output_dim());
        return forward(hidden_, inputs);
    }

    std::uint64_t query_count() const noexcept { return query_count_.load(std::memory_order_relaxed); }

    const MlpSpec& spec() const noexcept { return hidden_.spec; }
    const BlackboxProvenance& provenance() const noexcept { return provenance_; }

    const MlpParams& unseal(SealedAccess) const noexcept { return hidden_; }

private:
    MlpParams hidden_;
    BlackboxProvenance provenance_;
    mutable std::atomic<std::uint64_t> query_count_{0};
};

inline constexpr int kBlackboxBatchSize = 128;

/// Softmax cross-entropy on integer labels; returns mean loss and writes the
/// gradient with respect to the logits.
inline double softmax_cross_entropy(const Matrix& logits, std::span<const int> labels, Matrix& grad) {
    const Eigen::Index n = logits.rows(), k = logits.cols();
    grad.resize(n, k);
    double loss = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const float mx = logits.row(i).maxCoeff();
        double denom = 0.0;
        for (Eigen::Index j = 0; j < k; ++j) denom += std::exp(static_cast<double>(logits(i, j) - mx));
        for (Eigen::Index j = 0; j < k; ++j) {
            const double prob = std::exp(static_cast<double>(logits(i, j) - mx)) / denom;
            grad(i, j) = static_cast<float>((prob - (j == labels[i] ? 1.0 : 0.0)) / static_cast<double>(n));
        }
        loss -= static_cast<double>(logits(i, labels[i]) - mx) - std::log(denom);
    }
    return n > 0 ? loss / static_cast<double>(n) : 0.0;
}

/// Trains a Glorot-initialised classifier and seals it behind a query interface.
/// epochs == 0 leaves the initialisation untouched.
inline QueryOracle train_blackbox(const MlpSpec& spec, const Dataset& data, const OptimizerConfig& optimizer,
                                  int epochs, std::uint64_t seed, int batch_size = kBlackboxBatchSize) {
    if (epochs < 0) throw InvalidArgument("epochs must be nonnegative");
    if (batch_size <= 0) throw InvalidArgument("batch size must be positive");
    if (data.input_dim() != spec.input_dim()) throw ShapeMismatch("dataset width does not match the input layer");
    if (epochs > 0) {
        if (!data.labeled() || static_cast<Eigen::Index>(data.labels.size()) != data.size()) {
            throw InvalidArgument("training requires one label per sample");
        }
        if (data.class_count() > spec.output_dim()) throw ShapeMismatch("more classes than output neurons");
    }

    MlpParams params = init_glorot(spec, seed);
    Optimizer opt(optimizer);
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<Eigen::Index> order(static_cast<std::size_t>(data.size()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});

    Matrix batch, grad;
    std::vector<int> batch_labels;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
            batch.resize(static_cast<Eigen::Index>(end - start), data.input_dim());
            batch_labels.resize(end - start);
            for (std::size_t r = start; r < end; ++r) {
                batch.row(static_cast<Eigen::Index>(r - start)) = data.inputs.row(order[r]);
                batch_labels[r - start] = data.labels[static_cast<std::size_t>(order[r])];
            }
            ForwardTrace trace = forward_trace(params, batch);
            softmax_cross_entropy(trace.output, batch_labels, grad);
            opt.step(params, backward(params, trace, grad));
        }
        if (!params.all_finite()) throw NonFinite("black-box training diverged at epoch " + std::to_string(epoch));
    }
    BlackboxProvenance prov{seed, optimizer.kind, epochs, data.checksum(), batch_size};
    return QueryOracle(std::move(params), prov);
}

}  // namespace neurome
