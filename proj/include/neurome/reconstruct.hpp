#pragma once

// Reconstruction driver: a population of surrogates of the black box's
// architecture is trained on an append-only set of labelled queries, new
// queries are synthesised every outer iteration, and convergence is judged by
// population agreement together with vanishing loss.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "neurome/align.hpp"
#include "neurome/error.hpp"
#include "neurome/mlp.hpp"
#include "neurome/optim.hpp"
#include "neurome/oracle.hpp"
#include "neurome/sampling.hpp"

namespace neurome {

/// splitmix64 step; derives independent seeds from one run seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Append-only store of queried inputs and the black box's outputs.
class QueryDataset {
public:
    QueryDataset(int input_dim, int output_dim) : inputs_(0, input_dim), outputs_(0, output_dim) {}

    void append(const Matrix& inputs, const Matrix& outputs) {
        require_shape(inputs.rows() == outputs.rows(), "inputs and outputs differ in row count");
        require_shape(inputs.cols() == inputs_.cols() && outputs.cols() == outputs_.cols(),
                      "appended rows have the wrong width");
        const Eigen::Index old = inputs_.rows();
        inputs_.conservativeResize(old + inputs.rows(), Eigen::NoChange);
        outputs_.conservativeResize(old + outputs.rows(), Eigen::NoChange);
        inputs_.bottomRows(inputs.rows()) = inputs;
        outputs_.bottomRows(outputs.rows()) = outputs;
    }

    const Matrix& inputs() const noexcept { return inputs_; }
    const Matrix& outputs() const noexcept { return outputs_; }
    Eigen::Index size() const noexcept { return inputs_.rows(); }
    bool empty() const noexcept { return inputs_.rows() == 0; }

private:
    Matrix inputs_;
    Matrix outputs_;
};

struct Member {
    MlpParams params;
    Optimizer optimizer;
    std::mt19937_64 rng;
    double loss = std::numeric_limits<double>::infinity();
    int reinitialisations = 0;
};

struct Population {
    std::vector<Member> members;

    std::size_t size() const noexcept { return members.size(); }
    std::vector<MlpParams> params() const {
        std::vector<MlpParams> out;
        out.reserve(members.size());
        for (const Member& m : members) out.push_back(m.params);
        return out;
    }
};

enum class InitMode : std::uint8_t {
    Random,
    SeedOneKnown,  // member 0 starts from the known initial black-box weights
    SeedAllNoisy,  // every member starts from those weights plus Gaussian noise
};

inline std::string to_string(InitMode m) {
    switch (m) {
        case InitMode::Random: return "random";
        case InitMode::SeedOneKnown: return "seed_one_known";
        case InitMode::SeedAllNoisy: return "seed_all_noisy";
    }
    return "unknown";
}

inline InitMode init_mode_from_string(const std::string& s) {
    if (s == "random") return InitMode::Random;
    if (s == "seed_one_known") return InitMode::SeedOneKnown;
    if (s == "seed_all_noisy") return InitMode::SeedAllNoisy;
    throw InvalidArgument("unknown init mode '" + s + "'");
}

struct ConvergenceThresholds {
    double eps_agree = 1e-4;
    double eps_loss = 1e-5;
    double rel_improve = 0.01;
    int window = 5;
    // Loss drop (relative to the first iteration) separating "tapered off"
    // from "never decreased" when classifying a plateau.
    double taper_ratio = 0.1;
};

enum class ConvergenceKind : std::uint8_t { Running, Converged, DivergedMaxStuck, DivergedMeanStuck };

inline std::string to_string(ConvergenceKind k) {
    switch (k) {
        case ConvergenceKind::Running: return "running";
        case ConvergenceKind::Converged: return "converged";
        case ConvergenceKind::DivergedMaxStuck: return "diverged_max_stuck";
        case ConvergenceKind::DivergedMeanStuck: return "diverged_mean_stuck";
    }
    return "unknown";
}

inline bool is_diverged(ConvergenceKind k) {
    return k == ConvergenceKind::DivergedMaxStuck || k == ConvergenceKind::DivergedMeanStuck;
}

struct ConvergenceStatus {
    ConvergenceKind kind = ConvergenceKind::Running;
    int agreement_pairs = 0;
    double min_pair_difference = std::numeric_limits<double>::infinity();
    double min_loss = std::numeric_limits<double>::infinity();
    std::string evidence;
};

/// Per-iteration minima used to judge plateaus.
struct ConvergenceHistory {
    std::vector<double> min_loss;
    std::vector<double> min_pair_difference;
};

/// Mean L1 loss of one network over the whole dataset.
inline double dataset_loss(const MlpParams& params, const QueryDataset& data) {
    if (data.empty()) return 0.0;
    return l1_error(forward(params, data.inputs()), data.outputs());
}

/// Mean L1 loss of every row of the dataset, averaged over the population.
inline std::vector<double> per_sample_losses(const Population& pop, const QueryDataset& data) {
    std::vector<double> losses(static_cast<std::size_t>(data.size()), 0.0);
    for (const Member& m : pop.members) {
        const Matrix out = forward(m.params, data.inputs());
        for (Eigen::Index i = 0; i < out.rows(); ++i) {
            losses[i] +=
                (out.row(i) - data.outputs().row(i)).cwiseAbs().cast<double>().mean() / static_cast<double>(pop.size());
        }
    }
    return losses;
}

/// Runs fn(i) for i in [0, n), spread over up to `threads` workers.
template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
    threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(n)));
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::jthread> workers;
    for (unsigned t = 0; t < threads; ++t) {
        workers.emplace_back([&, t] {
            for (std::size_t i = t; i < n; i += threads) fn(i);
        });
    }
}

struct TrainingOptions {
    int batch_size = 256;
    unsigned threads = 1;
    // Used when a member produces non-finite weights and must be restarted.
    std::uint64_t reinit_seed = 0;
};

/// e epochs of minibatch L1 training for every member, each with its own
/// optimizer and shuffle stream. Members never exchange information.
inline int train_population(Population& pop, const QueryDataset& data, int epochs, const TrainingOptions& opts = {}) {
    if (data.empty()) throw EmptyDataset("cannot train on an empty query dataset");
    if (epochs < 0) throw InvalidArgument("epochs must be nonnegative");
    if (opts.batch_size <= 0) throw InvalidArgument("batch size must be positive");
    std::vector<int> reinit(pop.size(), 0);

    parallel_for(pop.size(), opts.threads, [&](std::size_t mi) {
        Member& m = pop.members[mi];
        const Eigen::Index n = data.size();
        const auto bs = static_cast<Eigen::Index>(opts.batch_size);
        std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
        std::iota(order.begin(), order.end(), Eigen::Index{0});
        Matrix xb, yb;
        for (int e = 0; e < epochs; ++e) {
            std::shuffle(order.begin(), order.end(), m.rng);
            for (Eigen::Index start = 0; start < n; start += bs) {
                const Eigen::Index rows = std::min(bs, n - start);
                xb.resize(rows, data.inputs().cols());
                yb.resize(rows, data.outputs().cols());
                for (Eigen::Index r = 0; r < rows; ++r) {
                    xb.row(r) = data.inputs().row(order[start + r]);
                    yb.row(r) = data.outputs().row(order[start + r]);
                }
                const ForwardTrace trace = forward_trace(m.params, xb);
                const LossAndGrad lg = l1_output_loss(trace.output, yb);
                m.optimizer.step(m.params, backward(m.params, trace, lg.grad));
            }
            if (!m.params.all_finite()) {
                const double lr = m.optimizer.learning_rate();
                m.params =
                    init_glorot(m.params.spec, derive_seed(opts.reinit_seed, mi * 1000003ULL + m.reinitialisations));
                m.optimizer = Optimizer(m.optimizer.config());
                m.optimizer.set_learning_rate(lr);
                ++m.reinitialisations;
                ++reinit[mi];
            }
        }
        m.loss = dataset_loss(m.params, data);
    });
    return std::accumulate(reinit.begin(), reinit.end(), 0);
}

/// Converged iff at least two members agree (aligned max parameter difference
/// <= eps_agree) and the best member's loss is <= eps_loss. Otherwise a
/// plateau of the best loss over the window is classified as divergence.
inline ConvergenceStatus check_convergence(const Population& pop, const QueryDataset& data,
                                           const ConvergenceThresholds& th, ConvergenceHistory* history = nullptr) {
    ConvergenceStatus st;
    for (const Member& m : pop.members) {
        const double l = data.empty() ? m.loss : dataset_loss(m.params, data);
        st.min_loss = std::min(st.min_loss, std::isfinite(l) ? l : std::numeric_limits<double>::infinity());
    }
    for (std::size_t i = 0; i < pop.size(); ++i) {
        for (std::size_t j = i + 1; j < pop.size(); ++j) {
            double d = std::numeric_limits<double>::infinity();
            try {
                d = aligned_max_difference(pop.members[j].params, pop.members[i].params);
            } catch (const ZeroColumn&) {
            }
            st.min_pair_difference = std::min(st.min_pair_difference, d);
            if (d <= th.eps_agree) ++st.agreement_pairs;
        }
    }
    if (history) {
        history->min_loss.push_back(st.min_loss);
        history->min_pair_difference.push_back(st.min_pair_difference);
    }

    const bool agree = st.agreement_pairs >= 1;
    const bool vanishing = st.min_loss <= th.eps_loss;
    if (agree && vanishing) {
        st.kind = ConvergenceKind::Converged;
        st.evidence = "population agreement and vanishing loss";
        return st;
    }
    if (!history || static_cast<int>(history->min_loss.size()) <= th.window) {
        st.evidence = agree ? "agreement without vanishing loss" : "window not yet filled";
        return st;
    }
    const std::size_t now = history->min_loss.size() - 1;
    const std::size_t then = now - static_cast<std::size_t>(th.window);
    const double loss_then = history->min_loss[then];
    const bool loss_improving = st.min_loss <= (1.0 - th.rel_improve) * loss_then;
    if (loss_improving) {
        st.evidence = "loss still improving";
        return st;
    }
    const double pair_then = history->min_pair_difference[then];
    const bool pairs_shrinking =
        std::isfinite(st.min_pair_difference) && st.min_pair_difference <= (1.0 - th.rel_improve) * pair_then;
    const bool tapered = st.min_loss <= th.taper_ratio * history->min_loss.front();
    if (!tapered) {
        st.kind = ConvergenceKind::DivergedMeanStuck;
        st.evidence = "best loss failed to improve over the window and never dropped substantially";
    } else if (!pairs_shrinking) {
        st.kind = ConvergenceKind::DivergedMaxStuck;
        st.evidence = "loss tapered off while member parameter differences stopped shrinking";
    } else {
        st.evidence = "loss plateau but members still converging";
    }
    return st;
}

struct SamplerConfig {
    SamplerKind kind = SamplerKind::Committee;
    CommitteeConfig committee;
    double gaussian_std = 1.0;
    int resample_k = 32;
    double resample_noise_std = 0.05;
    // Committee batches that diverge are retried with the rate divided by ten.
    int committee_retries = 3;
};

struct ReconstructConfig {
    int population = 8;
    int queries_per_iteration = 256;
    int outer_iterations = 40;
    int epochs = 10;
    OptimizerConfig optimizer = OptimizerConfig::defaults(OptimizerKind::Adam);
    StepSchedule schedule;
    int batch_size = 256;
    SamplerConfig sampler;
    ConvergenceThresholds thresholds;
    InitMode init_mode = InitMode::Random;
    std::optional<MlpParams> known_initial;
    double init_noise_std = 1e-3;
    bool stop_when_converged = false;
    unsigned threads = 1;
    // Pools for the dataset-based baselines.
    Matrix dataset_pool;
    Matrix expanded_pool;
};

struct IterationRecord {
    int iteration = 0;
    double min_loss = 0.0;
    double mean_loss = 0.0;
    double learning_rate = 0.0;
    std::uint64_t query_count = 0;
    Eigen::Index dataset_size = 0;
    int agreement_pairs = 0;
    double min_pair_difference = 0.0;
    ConvergenceKind status = ConvergenceKind::Running;
    double committee_loss_start = 0.0;
    double committee_loss_end = 0.0;
};

struct RunReport {
    std::vector<IterationRecord> iterations;
    ConvergenceStatus final_status;
    std::optional<int> converged_at;
    std::size_t best_member = 0;
    double best_loss = 0.0;
    std::vector<double> member_losses;
    std::uint64_t samples = 0;
    int reinitialisations = 0;
    int committee_retries = 0;
    std::uint64_t seed = 0;
};

struct ReconstructResult {
    MlpParams best;
    RunReport report;
    Population population;
};

inline Population make_population(const MlpSpec& spec, const ReconstructConfig& cfg, std::uint64_t seed) {
    if (cfg.population < 2) throw PopulationTooSmall("population must have at least two members");
    if ((cfg.init_mode != InitMode::Random) && !cfg.known_initial) {
        throw InvalidArgument("init mode " + to_string(cfg.init_mode) + " needs known initial weights");
    }
    if (cfg.known_initial && !(cfg.known_initial->spec == spec)) {
        throw SpecMismatch("known initial weights do not match the architecture");
    }
    Population pop;
    for (int i = 0; i < cfg.population; ++i) {
        const std::uint64_t ms = derive_seed(seed, static_cast<std::uint64_t>(i));
        MlpParams params = init_glorot(spec, ms);
        if (cfg.init_mode == InitMode::SeedOneKnown && i == 0) {
            params = *cfg.known_initial;
        } else if (cfg.init_mode == InitMode::SeedAllNoisy) {
            params = *cfg.known_initial;
            std::mt19937_64 nrng(derive_seed(ms, 17));
            std::normal_distribution<float> noise(0.0f, static_cast<float>(cfg.init_noise_std));
            params.for_each_tensor([&](std::span<float> s) {
                for (float& x : s) x += noise(nrng);
            });
        }
        pop.members.push_back(Member{std::move(params), Optimizer(cfg.optimizer), std::mt19937_64(derive_seed(ms, 1))});
    }
    return pop;
}

namespace detail {

// Produces the next batch of inputs for outer iteration `it` (1-based).
inline QueryBatch next_queries(const ReconstructConfig& cfg, const MlpSpec& spec, const Population& pop,
                               const QueryDataset& data, int it, std::uint64_t seed, int& retries) {
    const int q = cfg.queries_per_iteration;
    const int dim = spec.input_dim();
    const std::uint64_t s = derive_seed(seed, 1000 + static_cast<std::uint64_t>(it));
    switch (cfg.sampler.kind) {
        case SamplerKind::Committee: {
            CommitteeConfig cc = cfg.sampler.committee;
            const std::vector<MlpParams> members = pop.params();
            for (int attempt = 0;; ++attempt) {
                try {
                    return generate_committee_queries(members, q, cc, s);
                } catch (const NonFinite&) {
                    if (attempt >= cfg.sampler.committee_retries) throw;
                    cc.learning_rate /= 10.0;
                    ++retries;
                }
            }
        }
        case SamplerKind::Gaussian: {
            // The whole budget is one seeded stream consumed q rows at a time.
            QueryBatch all =
                sample_gaussian(q * cfg.outer_iterations, dim, derive_seed(seed, 999), cfg.sampler.gaussian_std);
            QueryBatch b{
                all.inputs.middleRows(static_cast<Eigen::Index>(it - 1) * q, q), SamplerKind::Gaussian, all.seed, {}};
            return b;
        }
        case SamplerKind::Uniform: {
            QueryBatch all = sample_uniform(q * cfg.outer_iterations, dim, derive_seed(seed, 999));
            QueryBatch b{
                all.inputs.middleRows(static_cast<Eigen::Index>(it - 1) * q, q), SamplerKind::Uniform, all.seed, {}};
            return b;
        }
        case SamplerKind::Dataset:
        case SamplerKind::ExpandedDataset: {
            const Matrix& pool = cfg.sampler.kind == SamplerKind::Dataset ? cfg.dataset_pool : cfg.expanded_pool;
            if (pool.rows() == 0) throw EmptyDataset("dataset sampler has no pool");
            require_shape(pool.cols() == dim, "sampler pool width does not match the input layer");
            const Eigen::Index start = std::min<Eigen::Index>(pool.rows(), static_cast<Eigen::Index>(it - 1) * q);
            const Eigen::Index rows = std::min<Eigen::Index>(q, pool.rows() - start);
            QueryBatch b{pool.middleRows(start, rows), cfg.sampler.kind, s, {}};
            return b;
        }
        case SamplerKind::EasyResample:
        case SamplerKind::HardResample: {
            if (data.empty()) {
                QueryBatch b = sample_gaussian(q, dim, s, cfg.sampler.gaussian_std);
                b.provenance = cfg.sampler.kind;
                return b;
            }
            const std::vector<double> losses = per_sample_losses(pop, data);
            const int k = static_cast<int>(std::min<Eigen::Index>(cfg.sampler.resample_k, data.size()));
            const RegionMode mode = cfg.sampler.kind == SamplerKind::HardResample ? RegionMode::Hard : RegionMode::Easy;
            return resample_regions(data.inputs(), losses, k, q, mode, cfg.sampler.resample_noise_std, s);
        }
    }
    throw InvalidArgument("unhandled sampler kind");
}

}  // namespace detail

/// Outer loop: sample, label through the oracle, append, train every member,
/// apply the schedule, check convergence. Returns the lowest-loss member.
using IterationObserver = std::function<void(const IterationRecord&, const Population&)>;

inline ReconstructResult reconstruct(const QueryOracle& oracle, const MlpSpec& spec, const ReconstructConfig& cfg,
                                     std::uint64_t seed, const IterationObserver& observer = {}) {
    if (!(spec == oracle.spec())) throw SpecMismatch("surrogate architecture differs from the black box");
    if (cfg.queries_per_iteration < 0 || cfg.outer_iterations < 0 || cfg.epochs < 0) {
        throw InvalidArgument("q, o and e must be nonnegative");
    }
    Population pop = make_population(spec, cfg, seed);
    QueryDataset data(spec.input_dim(), spec.output_dim());
    RunReport rep;
    rep.seed = seed;
    ConvergenceHistory history;
    const std::uint64_t start_count = oracle.query_count();
    TrainingOptions topts{cfg.batch_size, cfg.threads, derive_seed(seed, 7)};

    for (int it = 1; it <= cfg.outer_iterations; ++it) {
        QueryBatch batch = detail::next_queries(cfg, spec, pop, data, it, seed, rep.committee_retries);
        const Matrix labels = oracle.query(batch.inputs);
        data.append(batch.inputs, labels);

        if (!data.empty()) rep.reinitialisations += train_population(pop, data, cfg.epochs, topts);
        for (Member& m : pop.members) m.loss = dataset_loss(m.params, data);

        const ConvergenceStatus st = check_convergence(pop, data, cfg.thresholds, &history);
        IterationRecord rec;
        rec.iteration = it;
        rec.min_loss = st.min_loss;
        double sum = 0.0;
        for (const Member& m : pop.members) sum += m.loss;
        rec.mean_loss = sum / static_cast<double>(pop.size());
        rec.learning_rate = pop.members[0].optimizer.learning_rate();
        rec.query_count = oracle.query_count() - start_count;
        rec.dataset_size = data.size();
        rec.agreement_pairs = st.agreement_pairs;
        rec.min_pair_difference = st.min_pair_difference;
        rec.status = st.kind;
        if (!batch.loss_trace.empty()) {
            rec.committee_loss_start = batch.loss_trace.front();
            rec.committee_loss_end = batch.loss_trace.back();
        }
        rep.iterations.push_back(rec);
        rep.final_status = st;
        if (observer) observer(rec, pop);
        if (st.kind == ConvergenceKind::Converged && !rep.converged_at) rep.converged_at = it;

        for (Member& m : pop.members) m.optimizer.apply_schedule(it, cfg.schedule);
        if (st.kind == ConvergenceKind::Converged && cfg.stop_when_converged) break;
    }

    // A run that ends without convergence is classified with the divergence taxonomy.
    if (rep.final_status.kind == ConvergenceKind::Running && !rep.iterations.empty()) {
        const bool tapered = !history.min_loss.empty() &&
                             rep.final_status.min_loss <= cfg.thresholds.taper_ratio * history.min_loss.front();
        rep.final_status.kind = tapered ? ConvergenceKind::DivergedMaxStuck : ConvergenceKind::DivergedMeanStuck;
        rep.final_status.evidence = "iteration budget exhausted without convergence; " + rep.final_status.evidence;
    }

    rep.member_losses.reserve(pop.size());
    for (const Member& m : pop.members) rep.member_losses.push_back(m.loss);
    rep.best_member = static_cast<std::size_t>(std::min_element(rep.member_losses.begin(), rep.member_losses.end()) -
                                               rep.member_losses.begin());
    rep.best_loss = rep.member_losses.empty() ? 0.0 : rep.member_losses[rep.best_member];
    rep.samples = oracle.query_count() - start_count;
    MlpParams best = pop.members.empty() ? MlpParams(spec) : pop.members[rep.best_member].params;
    return ReconstructResult{std::move(best), std::move(rep), std::move(pop)};
}

}  // namespace neurome
