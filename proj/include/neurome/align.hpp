#pragma once

// Function-preserving re-parameterisations of an MLP (neuron permutation,
// positive scaling, polarity flip), a canonical form per isomorphism class,
// greedy column matching against a reference, and parameter-error metrics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <variant>
#include <vector>

#include "neurome/error.hpp"
#include "neurome/mlp.hpp"
#include "neurome/oracle.hpp"
#include "neurome/tensor.hpp"

namespace neurome {

/// Reorders hidden layer `layer`: new neuron k is old neuron permutation[k].
struct Permute {
    std::size_t layer = 0;
    std::vector<int> permutation;
};

/// Multiplies the incoming weights and bias of a hidden neuron by alpha and
/// divides its outgoing weights by alpha. Piecewise-linear activations only.
struct Scale {
    std::size_t layer = 0;
    int neuron = 0;
    double alpha = 1.0;
};

/// Negates the incoming weights, bias and outgoing weights of a hidden neuron.
/// Odd-symmetric activations only.
struct Polarity {
    std::size_t layer = 0;
    int neuron = 0;
};

using IsoTransform = std::variant<Permute, Scale, Polarity>;

namespace detail {

inline void check_hidden_layer(const MlpParams& p, std::size_t layer) {
    if (layer + 1 >= p.layer_count()) {
        throw InvalidTransform("layer " + std::to_string(layer) + " is not a hidden layer");
    }
}

inline void check_neuron(const MlpParams& p, std::size_t layer, int neuron) {
    if (neuron < 0 || neuron >= p.weights[layer].cols()) {
        throw InvalidTransform("neuron " + std::to_string(neuron) + " out of range for layer " + std::to_string(layer));
    }
}

// Scales incoming column + bias by `factor` and the outgoing row by 1/factor.
inline void rescale_neuron(MlpParams& p, std::size_t layer, Eigen::Index j, double factor) {
    const auto f = static_cast<float>(factor);
    const auto inv = static_cast<float>(1.0 / factor);
    p.weights[layer].col(j) *= f;
    p.biases[layer][j] *= f;
    p.weights[layer + 1].row(j) *= inv;
}

// new neuron k takes old neuron order[k].
inline void reorder_neurons(MlpParams& p, std::size_t layer, const std::vector<int>& order) {
    Matrix w = p.weights[layer];
    Vector b = p.biases[layer];
    Matrix next = p.weights[layer + 1];
    for (std::size_t k = 0; k < order.size(); ++k) {
        const auto kk = static_cast<Eigen::Index>(k);
        p.weights[layer].col(kk) = w.col(order[k]);
        p.biases[layer][kk] = b[order[k]];
        p.weights[layer + 1].row(kk) = next.row(order[k]);
    }
}

// Column j of hidden layer `layer` with its bias appended.
inline Eigen::VectorXd augmented_column(const MlpParams& p, std::size_t layer, Eigen::Index j) {
    const Eigen::Index fan_in = p.weights[layer].rows();
    Eigen::VectorXd c(fan_in + 1);
    for (Eigen::Index r = 0; r < fan_in; ++r) c[r] = p.weights[layer](r, j);
    c[fan_in] = p.biases[layer][j];
    return c;
}

}  // namespace detail

inline MlpParams apply_transform(MlpParams params, const IsoTransform& t) {
    std::visit(
        [&](const auto& tr) {
            using T = std::decay_t<decltype(tr)>;
            detail::check_hidden_layer(params, tr.layer);
            if constexpr (std::is_same_v<T, Permute>) {
                const auto width = static_cast<std::size_t>(params.weights[tr.layer].cols());
                std::vector<int> sorted = tr.permutation;
                std::sort(sorted.begin(), sorted.end());
                std::vector<int> iota(width);
                std::iota(iota.begin(), iota.end(), 0);
                if (sorted != iota) throw InvalidTransform("not a permutation of the layer's neurons");
                detail::reorder_neurons(params, tr.layer, tr.permutation);
            } else if constexpr (std::is_same_v<T, Scale>) {
                if (!params.spec.piecewise_linear()) {
                    throw InvalidTransform("scaling requires a piecewise-linear activation");
                }
                if (!(tr.alpha > 0.0) || !std::isfinite(tr.alpha)) throw InvalidTransform("alpha must be positive");
                detail::check_neuron(params, tr.layer, tr.neuron);
                detail::rescale_neuron(params, tr.layer, tr.neuron, tr.alpha);
            } else {
                if (!params.spec.odd_symmetric()) {
                    throw InvalidTransform("polarity flip requires an odd-symmetric activation");
                }
                detail::check_neuron(params, tr.layer, tr.neuron);
                detail::rescale_neuron(params, tr.layer, tr.neuron, -1.0);
            }
        },
        t);
    return params;
}

inline constexpr double kZeroColumnNorm = 1e-12;
// Columns already this close to unit norm are left alone, so canonicalizing a
// canonical network is exact instead of drifting by a float ulp.
inline constexpr double kUnitNormSlack = 1e-6;

namespace detail {

// Step (1): unit L2 norm for each augmented hidden column.
inline void normalize_columns(MlpParams& p, std::size_t layer) {
    for (Eigen::Index j = 0; j < p.weights[layer].cols(); ++j) {
        const double norm = augmented_column(p, layer, j).norm();
        if (norm <= kZeroColumnNorm) {
            throw ZeroColumn("layer " + std::to_string(layer) + " neuron " + std::to_string(j) + " has zero norm");
        }
        if (std::abs(norm - 1.0) > kUnitNormSlack) rescale_neuron(p, layer, j, 1.0 / norm);
    }
}

// Step (2): nonnegative column sums; a zero sum counts as positive.
inline void make_sums_positive(MlpParams& p, std::size_t layer) {
    for (Eigen::Index j = 0; j < p.weights[layer].cols(); ++j) {
        if (augmented_column(p, layer, j).sum() < 0.0) rescale_neuron(p, layer, j, -1.0);
    }
}

}  // namespace detail

/// Canonical representative: per hidden layer, unit-norm columns
/// (piecewise-linear only), positive column sums (odd-symmetric only), then
/// columns ordered by ascending L1 norm. Biases ride along as an extra row.
inline MlpParams canonicalize(MlpParams params) {
    const std::size_t hidden = params.layer_count() - 1;
    if (params.spec.piecewise_linear()) {
        for (std::size_t l = 0; l < hidden; ++l) detail::normalize_columns(params, l);
    }
    if (params.spec.odd_symmetric()) {
        for (std::size_t l = 0; l < hidden; ++l) detail::make_sums_positive(params, l);
    }
    for (std::size_t l = 0; l < hidden; ++l) {
        const Eigen::Index width = params.weights[l].cols();
        std::vector<double> l1(static_cast<std::size_t>(width));
        for (Eigen::Index j = 0; j < width; ++j) l1[j] = detail::augmented_column(params, l, j).lpNorm<1>();
        std::vector<int> order(static_cast<std::size_t>(width));
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return l1[a] < l1[b]; });
        detail::reorder_neurons(params, l, order);
    }
    return params;
}

/// Greedy assignment on a cost matrix (rows = candidate, cols = reference):
/// repeatedly takes the cheapest remaining pair, ties broken by lowest
/// (candidate, reference) index. Returns match[reference] = candidate.
inline std::vector<int> greedy_match(const Eigen::MatrixXd& cost) {
    const Eigen::Index n = cost.rows();
    if (cost.cols() != n) throw ShapeMismatch("matching needs a square cost matrix");
    std::vector<std::pair<double, Eigen::Index>> pairs;
    pairs.reserve(static_cast<std::size_t>(n * n));
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index k = 0; k < n; ++k) pairs.emplace_back(cost(i, k), i * n + k);
    }
    std::sort(pairs.begin(), pairs.end());
    std::vector<int> match(static_cast<std::size_t>(n), -1);
    std::vector<char> used(static_cast<std::size_t>(n), 0);
    Eigen::Index remaining = n;
    for (const auto& [c, idx] : pairs) {
        const Eigen::Index i = idx / n, k = idx % n;
        if (used[i] || match[k] >= 0) continue;
        used[i] = 1;
        match[k] = static_cast<int>(i);
        if (--remaining == 0) break;
    }
    return match;
}

/// Gauge-fixed augmented columns of one hidden layer, as used for matching.
inline Eigen::MatrixXd matching_columns(const MlpParams& p, std::size_t layer) {
    const Eigen::Index width = p.weights[layer].cols();
    Eigen::MatrixXd cols(p.weights[layer].rows() + 1, width);
    for (Eigen::Index j = 0; j < width; ++j) {
        Eigen::VectorXd c = detail::augmented_column(p, layer, j);
        if (p.spec.piecewise_linear()) {
            const double norm = c.norm();
            if (norm <= kZeroColumnNorm) {
                throw ZeroColumn("layer " + std::to_string(layer) + " neuron " + std::to_string(j) + " has zero norm");
            }
            c /= norm;
        }
        if (p.spec.odd_symmetric() && c.sum() < 0.0) c = -c;
        cols.col(j) = c;
    }
    return cols;
}

/// Pairwise L1 distances between candidate columns (rows) and reference columns.
inline Eigen::MatrixXd column_distances(const Eigen::MatrixXd& cand, const Eigen::MatrixXd& ref) {
    Eigen::MatrixXd d(cand.cols(), ref.cols());
    for (Eigen::Index i = 0; i < cand.cols(); ++i) {
        for (Eigen::Index k = 0; k < ref.cols(); ++k) d(i, k) = (cand.col(i) - ref.col(k)).lpNorm<1>();
    }
    return d;
}

struct Alignment {
    MlpParams aligned;
    // Per hidden layer: permutations[l][k] = candidate neuron placed at reference slot k.
    std::vector<std::vector<int>> permutations;
    // Per hidden layer: summed L1 distance of the chosen pairs.
    std::vector<double> matching_costs;
};

inline void check_same_spec(const MlpParams& a, const MlpParams& b) {
    if (!(a.spec == b.spec)) throw SpecMismatch("networks have different architectures");
}

/// Matches candidate neurons to reference neurons layer by layer and rewrites
/// the candidate in the reference's gauge (permutation, plus scale or sign per
/// neuron as the activation allows). The reference is only read.
inline Alignment greedy_align_with_matching(MlpParams candidate, const MlpParams& reference) {
    check_same_spec(candidate, reference);
    Alignment out{std::move(candidate), {}, {}};
    MlpParams& cand = out.aligned;
    const std::size_t hidden = cand.layer_count() - 1;
    for (std::size_t l = 0; l < hidden; ++l) {
        const Eigen::MatrixXd cc = matching_columns(cand, l);
        const Eigen::MatrixXd rc = matching_columns(reference, l);
        const Eigen::MatrixXd cost = column_distances(cc, rc);
        std::vector<int> match = greedy_match(cost);
        double total = 0.0;
        for (std::size_t k = 0; k < match.size(); ++k) total += cost(match[k], static_cast<Eigen::Index>(k));

        detail::reorder_neurons(cand, l, match);
        for (Eigen::Index k = 0; k < cand.weights[l].cols(); ++k) {
            const Eigen::VectorXd c = detail::augmented_column(cand, l, k);
            const Eigen::VectorXd r = detail::augmented_column(reference, l, k);
            double factor = 1.0;
            if (cand.spec.piecewise_linear()) factor = r.norm() / c.norm();
            if (cand.spec.odd_symmetric()) factor = (c.sum() < 0.0) == (r.sum() < 0.0) ? 1.0 : -1.0;
            if (factor != 1.0) detail::rescale_neuron(cand, l, k, factor);
        }
        out.permutations.push_back(std::move(match));
        out.matching_costs.push_back(total);
    }
    return out;
}

inline MlpParams greedy_align(MlpParams candidate, const MlpParams& reference) {
    return greedy_align_with_matching(std::move(candidate), reference).aligned;
}

struct AlignmentReport {
    double max_eps = 0.0;
    double max_eps_pct = 0.0;
    double reference_mean_abs = 0.0;
    std::vector<double> mean_eps_per_matrix;
    std::vector<double> mean_eps_per_bias;
    double l2_total = 0.0;
    double agreement_rate = 1.0;
    std::size_t probe_count = 0;
    std::vector<std::vector<int>> permutations;
    std::string magnitude_basis = "mean |reference parameter| over all weights and biases, reference gauge";
};

/// Parameter-error metrics of an already aligned candidate against the reference.
inline AlignmentReport compare(const MlpParams& candidate, const MlpParams& reference, const Matrix& probe_inputs) {
    check_same_spec(candidate, reference);
    AlignmentReport rep;
    double abs_sum = 0.0;
    std::size_t count = 0;
    for (std::size_t l = 0; l < reference.layer_count(); ++l) {
        const Eigen::MatrixXd dw = (candidate.weights[l] - reference.weights[l]).cast<double>();
        const Eigen::VectorXd db = (candidate.biases[l] - reference.biases[l]).cast<double>();
        rep.max_eps = std::max({rep.max_eps, dw.cwiseAbs().maxCoeff(), db.cwiseAbs().maxCoeff()});
        rep.mean_eps_per_matrix.push_back(dw.cwiseAbs().mean());
        rep.mean_eps_per_bias.push_back(db.cwiseAbs().mean());
        rep.l2_total += dw.norm();
        abs_sum +=
            reference.weights[l].cast<double>().cwiseAbs().sum() + reference.biases[l].cast<double>().cwiseAbs().sum();
        count += static_cast<std::size_t>(reference.weights[l].size() + reference.biases[l].size());
    }
    rep.reference_mean_abs = abs_sum / static_cast<double>(count);
    rep.max_eps_pct = rep.reference_mean_abs > 0.0 ? 100.0 * rep.max_eps / rep.reference_mean_abs : 0.0;

    rep.probe_count = static_cast<std::size_t>(probe_inputs.rows());
    if (probe_inputs.rows() > 0) {
        const Matrix a = forward(candidate, probe_inputs);
        const Matrix b = forward(reference, probe_inputs);
        std::size_t agree = 0;
        for (Eigen::Index i = 0; i < a.rows(); ++i) {
            Eigen::Index ia = 0, ib = 0;
            a.row(i).maxCoeff(&ia);
            b.row(i).maxCoeff(&ib);
            agree += ia == ib ? 1 : 0;
        }
        rep.agreement_rate = static_cast<double>(agree) / static_cast<double>(a.rows());
    }
    return rep;
}

/// Largest absolute parameter difference after aligning `candidate` to `reference`.
inline double aligned_max_difference(const MlpParams& candidate, const MlpParams& reference) {
    const MlpParams a = greedy_align(candidate, reference);
    double m = 0.0;
    for (std::size_t l = 0; l < a.layer_count(); ++l) {
        m = std::max(m, static_cast<double>((a.weights[l] - reference.weights[l]).cwiseAbs().maxCoeff()));
        m = std::max(m, static_cast<double>((a.biases[l] - reference.biases[l]).cwiseAbs().maxCoeff()));
    }
    return m;
}

/// End-of-experiment evaluation against the hidden network. This is the only
/// place reconstruction code can see the black box's parameters, and it does
/// not count towards the query budget.
class OracleEvaluator {
public:
    static AlignmentReport evaluate(const MlpParams& candidate, const QueryOracle& oracle, const Matrix& probes) {
        const MlpParams& hidden = oracle.unseal(SealedAccess{});
        Alignment al = greedy_align_with_matching(candidate, hidden);
        AlignmentReport rep = compare(al.aligned, hidden, probes);
        rep.permutations = std::move(al.permutations);
        return rep;
    }

    /// Aligned copy of the candidate, in the black box's gauge.
    static MlpParams align_to(const MlpParams& candidate, const QueryOracle& oracle) {
        return greedy_align(candidate, oracle.unseal(SealedAccess{}));
    }
};

}  // namespace neurome
