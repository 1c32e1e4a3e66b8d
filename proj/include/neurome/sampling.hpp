#pragma once

// Query synthesis. The committee sampler optimises a batch of inputs by
// gradient descent so that the population's L1-normalised outputs disagree as
// much as possible; the remaining samplers are non-committee baselines.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "neurome/error.hpp"
#include "neurome/mlp.hpp"
#include "neurome/optim.hpp"
#include "neurome/tensor.hpp"

namespace neurome {

enum class SamplerKind : std::uint8_t {
    Committee,
    Gaussian,
    Uniform,
    Dataset,
    ExpandedDataset,
    EasyResample,
    HardResample,
};

inline constexpr SamplerKind kAllSamplers[] = {
    SamplerKind::Dataset,      SamplerKind::ExpandedDataset, SamplerKind::Gaussian, SamplerKind::Uniform,
    SamplerKind::EasyResample, SamplerKind::HardResample,    SamplerKind::Committee};

inline std::string to_string(SamplerKind k) {
    switch (k) {
        case SamplerKind::Committee: return "committee";
        case SamplerKind::Gaussian: return "gaussian";
        case SamplerKind::Uniform: return "uniform";
        case SamplerKind::Dataset: return "dataset";
        case SamplerKind::ExpandedDataset: return "expanded_dataset";
        case SamplerKind::EasyResample: return "easy_resample";
        case SamplerKind::HardResample: return "hard_resample";
    }
    return "unknown";
}

inline SamplerKind sampler_from_string(const std::string& name) {
    for (SamplerKind k : kAllSamplers) {
        if (to_string(k) == name) return k;
    }
    throw InvalidArgument("unknown sampler '" + name + "'");
}

inline bool is_adaptive(SamplerKind k) {
    return k == SamplerKind::Committee || k == SamplerKind::EasyResample || k == SamplerKind::HardResample;
}

/// A batch of synthesised inputs (q x input_dim) and where it came from.
struct QueryBatch {
    Matrix inputs;
    SamplerKind provenance = SamplerKind::Gaussian;
    std::uint64_t seed = 0;
    // Committee only: disagreement loss before each input update, then after the last one.
    std::vector<double> loss_trace;
};

struct CommitteeConfig {
    int epochs = 100;
    double learning_rate = 1e-2;
    StepSchedule schedule;
    double init_std = 0.5;
};

inline constexpr double kNormEpsilon = 1e-12;

/// v / ||v||_1, or the zero vector when the norm is at most kNormEpsilon.
inline Vector normalize_l1(const Vector& v) {
    double norm = 0.0;
    for (float x : v) norm += std::abs(static_cast<double>(x));
    if (norm <= kNormEpsilon) return Vector::Zero(v.size());
    return (v.cast<double>() / norm).cast<float>();
}

/// L1 distance between the L1-normalised vectors.
inline double disagreement(const Vector& u, const Vector& v) {
    if (u.size() != v.size()) throw ShapeMismatch("disagreement needs equal-length vectors");
    const Vector fu = normalize_l1(u), fv = normalize_l1(v);
    double d = 0.0;
    for (Eigen::Index i = 0; i < u.size(); ++i) d += std::abs(static_cast<double>(fu[i]) - fv[i]);
    return d;
}

struct DisagreementLoss {
    double loss = 0.0;
    // d loss / d output, one matrix per population member.
    std::vector<Matrix> output_grads;
};

/// Negated mean of the p x p pairwise disagreement matrix, averaged over the
/// batch rows, plus its gradient with respect to every member's outputs.
inline DisagreementLoss disagreement_loss(std::span<const Matrix> outputs) {
    const std::size_t p = outputs.size();
    if (p < 2) throw PopulationTooSmall("disagreement needs at least two networks, got " + std::to_string(p));
    const Eigen::Index rows = outputs[0].rows(), cols = outputs[0].cols();
    for (const Matrix& o : outputs) {
        require_shape(o.rows() == rows && o.cols() == cols, "population outputs are not congruent");
    }

    DisagreementLoss out;
    out.output_grads.assign(p, Matrix::Zero(rows, cols));
    if (rows == 0) return out;

    const double pair_scale = 1.0 / (static_cast<double>(p) * static_cast<double>(p));
    const double row_scale = 1.0 / static_cast<double>(rows);

    std::vector<double> norm(p);
    std::vector<double> f(p * static_cast<std::size_t>(cols));
    std::vector<double> gf(p * static_cast<std::size_t>(cols));
    double total = 0.0;

    for (Eigen::Index r = 0; r < rows; ++r) {
        for (std::size_t m = 0; m < p; ++m) {
            double s = 0.0;
            for (Eigen::Index k = 0; k < cols; ++k) s += std::abs(static_cast<double>(outputs[m](r, k)));
            norm[m] = s;
            for (Eigen::Index k = 0; k < cols; ++k) {
                f[m * cols + k] = s > kNormEpsilon ? outputs[m](r, k) / s : 0.0;
            }
        }
        std::fill(gf.begin(), gf.end(), 0.0);
        double row_sum = 0.0;
        for (std::size_t i = 0; i < p; ++i) {
            for (std::size_t j = i + 1; j < p; ++j) {
                for (Eigen::Index k = 0; k < cols; ++k) {
                    const double diff = f[i * cols + k] - f[j * cols + k];
                    row_sum += std::abs(diff);
                    const double sg = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
                    // D_ij and D_ji both appear in the mean.
                    gf[i * cols + k] += 2.0 * sg;
                    gf[j * cols + k] -= 2.0 * sg;
                }
            }
        }
        total += 2.0 * row_sum;

        const double scale = pair_scale * row_scale;
        for (std::size_t m = 0; m < p; ++m) {
            const double s = norm[m];
            if (s <= kNormEpsilon) continue;
            double dot = 0.0;
            for (Eigen::Index k = 0; k < cols; ++k) dot += gf[m * cols + k] * outputs[m](r, k);
            for (Eigen::Index k = 0; k < cols; ++k) {
                const double y = outputs[m](r, k);
                const double sy = y > 0.0 ? 1.0 : (y < 0.0 ? -1.0 : 0.0);
                // The loss is the negated mean, hence the leading minus.
                const double g = gf[m * cols + k] / s - sy * dot / (s * s);
                out.output_grads[m](r, k) = static_cast<float>(-scale * g);
            }
        }
    }
    out.loss = -pair_scale * total * row_scale;
    return out;
}

/// Disagreement loss of a population on a batch, with the gradient with
/// respect to the batch accumulated through every frozen member.
struct InputLoss {
    double loss = 0.0;
    Matrix d_inputs;
};

inline InputLoss disagreement_input_gradient(std::span<const MlpParams> population, const Matrix& inputs) {
    std::vector<ForwardTrace> traces;
    std::vector<Matrix> outputs;
    traces.reserve(population.size());
    outputs.reserve(population.size());
    for (const MlpParams& m : population) {
        traces.push_back(forward_trace(m, inputs));
        outputs.push_back(traces.back().output);
    }
    DisagreementLoss dl = disagreement_loss(outputs);
    InputLoss out;
    out.loss = dl.loss;
    out.d_inputs = Matrix::Zero(inputs.rows(), inputs.cols());
    for (std::size_t m = 0; m < population.size(); ++m) {
        out.d_inputs += backward(population[m], traces[m], dl.output_grads[m]).d_inputs;
    }
    return out;
}

inline void check_population(std::span<const MlpParams> population) {
    if (population.size() < 2) {
        throw PopulationTooSmall("committee needs at least two members, got " + std::to_string(population.size()));
    }
    for (const MlpParams& m : population) {
        if (!(m.spec == population[0].spec)) throw SpecMismatch("population members have different specs");
    }
}

/// Starts from Gaussian inputs and runs Adam on the inputs to minimise the
/// disagreement loss. Population parameters are only read.
inline QueryBatch generate_committee_queries(std::span<const MlpParams> population, int q,
                                             const CommitteeConfig& config, std::uint64_t seed) {
    check_population(population);
    if (q < 0) throw InvalidArgument("query count must be nonnegative");
    if (config.epochs < 1) throw InvalidArgument("committee epochs must be at least 1");
    if (!(config.learning_rate > 0.0)) throw InvalidArgument("committee learning rate must be positive");

    QueryBatch batch;
    batch.provenance = SamplerKind::Committee;
    batch.seed = seed;
    batch.inputs.resize(q, population[0].spec.input_dim());
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> init(0.0f, static_cast<float>(config.init_std));
    for (float& x : as_span(batch.inputs)) x = init(rng);
    if (q == 0) return batch;

    OptimizerConfig oc = OptimizerConfig::defaults(OptimizerKind::Adam);
    oc.learning_rate = config.learning_rate;
    Optimizer adam(oc);
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        InputLoss il = disagreement_input_gradient(population, batch.inputs);
        batch.loss_trace.push_back(il.loss);
        adam.step(batch.inputs, il.d_inputs);
        if (!batch.inputs.allFinite()) {
            throw NonFinite("committee input optimisation diverged at epoch " + std::to_string(epoch));
        }
        adam.apply_schedule(epoch + 1, config.schedule);
    }
    batch.loss_trace.push_back(disagreement_input_gradient(population, batch.inputs).loss);
    return batch;
}

/// i.i.d. N(0, 1) entries.
inline QueryBatch sample_gaussian(int q, int dim, std::uint64_t seed, double stddev = 1.0) {
    QueryBatch b;
    b.provenance = SamplerKind::Gaussian;
    b.seed = seed;
    b.inputs.resize(q, dim);
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> dist(0.0f, static_cast<float>(stddev));
    for (float& x : as_span(b.inputs)) x = dist(rng);
    return b;
}

/// i.i.d. U[-1, 1] entries.
inline QueryBatch sample_uniform(int q, int dim, std::uint64_t seed) {
    QueryBatch b;
    b.provenance = SamplerKind::Uniform;
    b.seed = seed;
    b.inputs.resize(q, dim);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
    for (float& x : as_span(b.inputs)) x = std::clamp(dist(rng), -1.0f, 1.0f);
    return b;
}

enum class RegionMode : std::uint8_t { Easy, Hard };

/// Indices of the k donors: highest losses for Hard, lowest for Easy. Ties keep
/// the lower index first.
inline std::vector<Eigen::Index> select_donors(std::span<const double> losses, int k, RegionMode mode) {
    std::vector<Eigen::Index> order(losses.size());
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return losses[a] > losses[b]; });
    std::vector<Eigen::Index> donors;
    if (mode == RegionMode::Hard) {
        donors.assign(order.begin(), order.begin() + k);
    } else {
        donors.assign(order.end() - k, order.end());
    }
    return donors;
}

/// Recombines features of the k easiest/hardest inputs into n new inputs and
/// adds N(0, noise_std) noise to every feature.
inline QueryBatch resample_regions(const Matrix& inputs, std::span<const double> per_sample_losses, int k, int n,
                                   RegionMode mode, double noise_std, std::uint64_t seed) {
    if (inputs.rows() == 0) throw EmptyDataset("no samples to resample from");
    if (static_cast<Eigen::Index>(per_sample_losses.size()) != inputs.rows()) {
        throw ShapeMismatch("one loss per dataset row is required");
    }
    if (k < 1 || k > inputs.rows()) throw InvalidArgument("k must be in [1, dataset size]");
    if (n < 1) throw InvalidArgument("n must be at least 1");
    if (noise_std < 0.0) throw InvalidArgument("noise_std must be nonnegative");

    const std::vector<Eigen::Index> donors = select_donors(per_sample_losses, k, mode);
    QueryBatch b;
    b.provenance = mode == RegionMode::Hard ? SamplerKind::HardResample : SamplerKind::EasyResample;
    b.seed = seed;
    b.inputs.resize(n, inputs.cols());
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> pick(0, k - 1);
    std::normal_distribution<double> noise(0.0, noise_std > 0.0 ? noise_std : 1.0);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < inputs.cols(); ++j) {
            const float base = inputs(donors[static_cast<std::size_t>(pick(rng))], j);
            b.inputs(i, j) = noise_std > 0.0 ? static_cast<float>(base + noise(rng)) : base;
        }
    }
    return b;
}

}  // namespace neurome
