// Acceptance gate: runs criteria 1-10 and prints one PASS/FAIL line each.

#include <chrono>
#include <deque>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "support.hpp"

using namespace neurome;
namespace fs = std::filesystem;

namespace {

constexpr Activation kAll[] = {Activation::LeakyReLU, Activation::ReLU, Activation::TanH};

struct Verdict {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v) {
    std::ostringstream s;
    s << std::setprecision(3) << v;
    return s.str();
}

// ---------------------------------------------------------------------------
// Reconstruction runs. Every run is kept so the accounting and agreement
// criteria can be checked across all of them.

struct Run {
    std::string label;
    ExperimentOutcome outcome;
    std::uint64_t oracle_delta = 0;
    int outer_iterations = 0;
    // First outer iteration at which some member was within max eps 1e-3 of the
    // black box, measured with evaluation-only access; o + 1 if never.
    int first_within_tolerance = 0;

    bool converged() const { return outcome.converged(); }
    bool within_desk_tolerance() const {
        return outcome.alignment.max_eps <= 1e-3 && outcome.alignment.max_eps_pct <= 0.1;
    }
    // First converged iteration, or o + 1 when the run never converged.
    int first_converged() const {
        const auto& at = outcome.result.report.converged_at;
        return at ? *at : outer_iterations + 1;
    }
};

std::deque<Run> g_runs;

ExperimentConfig load(const std::string& name) { return load_config(fs::path(NEUROME_CONFIG_DIR) / name); }

const Run& run(const std::string& label, ExperimentConfig cfg, std::uint64_t seed, bool stop_when_converged) {
    cfg.reconstruction.seed = seed;
    cfg.reconstruction.retries = 0;  // each seed is one attempt
    cfg.reconstruction.run.stop_when_converged = stop_when_converged;
    const auto t0 = std::chrono::steady_clock::now();
    const ExperimentData data = build_data(cfg);
    const QueryOracle oracle = build_blackbox(cfg, data.train);
    const ReconstructConfig rc = resolve_run(cfg, data);
    const std::uint64_t before = oracle.query_count();
    int first_hit = rc.outer_iterations + 1;
    const AttemptObserver watch = [&](int, const IterationRecord& rec, const Population& pop) {
        if (first_hit <= rc.outer_iterations) return;
        for (const Member& m : pop.members) {
            try {
                if (OracleEvaluator::evaluate(m.params, oracle, Matrix(0, cfg.spec.input_dim())).max_eps <= 1e-3) {
                    first_hit = rec.iteration;
                    return;
                }
            } catch (const ZeroColumn&) {
            }
        }
    };
    ExperimentOutcome out = run_reconstruction(cfg, rc, oracle, data.probes, watch);
    Run r{label, std::move(out), oracle.query_count() - before, rc.outer_iterations, first_hit};
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const auto& rep = r.outcome.result.report;
    const auto& al = r.outcome.alignment;
    std::cout << "  [" << label << "] " << to_string(rep.final_status.kind)
              << " converged_at=" << (rep.converged_at ? std::to_string(*rep.converged_at) : "-")
              << " max_eps=" << fmt(al.max_eps) << " max_eps_pct=" << fmt(al.max_eps_pct)
              << " agreement=" << al.agreement_rate << " within_1e-3_at=" << r.first_within_tolerance
              << " samples=" << rep.samples << " (" << fmt(secs) << " s)" << std::endl;
    g_runs.push_back(std::move(r));
    return g_runs.back();
}

Verdict seeded_desk(const std::string& config, const std::string& tag) {
    const ExperimentConfig cfg = load(config);
    int ok = 0;
    std::string per;
    for (std::uint64_t seed : {1, 2, 3}) {
        const Run& r = run(tag + " seed " + std::to_string(seed), cfg, seed, true);
        ok += r.within_desk_tolerance() ? 1 : 0;
        per += (per.empty() ? "" : ", ") + fmt(r.outcome.alignment.max_eps);
    }
    return {ok >= 2, std::to_string(ok) + "/3 seeds within max eps 1e-3 and 0.1% (max eps " + per + ")"};
}

Verdict criterion1() { return seeded_desk("desk.json", "16x12x4 leaky"); }

Verdict criterion2() {
    // Equal budgets: both samplers run every outer iteration.
    const ExperimentConfig cfg = load("desk.json");
    ExperimentConfig gauss = cfg;
    gauss.reconstruction.run.sampler.kind = SamplerKind::Gaussian;
    const Run& c = run("committee, full budget", cfg, 1, false);
    const Run& g = run("gaussian, full budget", gauss, 1, false);
    const double ec = c.outcome.alignment.max_eps, eg = g.outcome.alignment.max_eps;
    const bool same_budget = c.oracle_delta == g.oracle_delta;
    return {same_budget && ec * 100.0 <= eg, "committee max eps " + fmt(ec) + " vs gaussian " + fmt(eg) + " (ratio " +
                                                 fmt(eg / ec) + ", needs >= 100) at " + std::to_string(c.oracle_delta) +
                                                 " queries each"};
}

Verdict criterion3() {
    const Run& r = run("12x10x8x6x4 leaky, 4x budget", load("deep.json"), 1, true);
    const auto& st = r.outcome.result.report.final_status;
    const double eps = r.outcome.alignment.max_eps;
    if (eps <= 1e-2) return {true, "max eps " + fmt(eps) + " <= 1e-2 (" + to_string(st.kind) + ")"};
    if (is_diverged(st.kind) && !st.evidence.empty()) {
        return {true,
                "reported " + to_string(st.kind) + " with evidence \"" + st.evidence + "\" (max eps " + fmt(eps) + ")"};
    }
    return {false, "max eps " + fmt(eps) + " with status " + to_string(st.kind)};
}

Verdict criterion4() { return seeded_desk("desk_tanh.json", "16x12x4 tanh"); }

// ---------------------------------------------------------------------------
// Property suites.

std::vector<int> random_widths(std::mt19937_64& rng, int max_hidden_layers, int lo, int hi) {
    std::uniform_int_distribution<int> w(lo, hi), depth(1, max_hidden_layers), io(2, 5);
    std::vector<int> widths = {io(rng)};
    const int d = depth(rng);
    for (int i = 0; i < d; ++i) widths.push_back(w(rng));
    widths.push_back(std::uniform_int_distribution<int>(2, 4)(rng));
    return widths;
}

Verdict criterion5() {
    std::mt19937_64 rng(5005);
    double worst_canon = 0.0, worst_forward = 0.0, worst_idem = 0.0;
    int bad = 0;
    for (int t = 0; t < 200; ++t) {
        const Activation act = kAll[t % 3];
        const MlpParams p = testing::random_net(random_widths(rng, 3, 2, 7), act, rng());
        const int steps = std::uniform_int_distribution<int>(1, 20)(rng);
        const MlpParams q = testing::apply_all(p, testing::random_transforms(p.spec, rng(), steps));
        const Matrix x = testing::random_matrix(200, p.spec.input_dim(), rng());
        const MlpParams cq = canonicalize(q);
        const double canon = testing::max_param_difference(cq, canonicalize(p));
        const double fwd = testing::relative_difference(forward(q, x), forward(p, x));
        const double idem = testing::max_param_difference(canonicalize(cq), cq);
        worst_canon = std::max(worst_canon, canon);
        worst_forward = std::max(worst_forward, fwd);
        worst_idem = std::max(worst_idem, idem);
        bad += (canon > 1e-5 || fwd > 1e-5 || idem > 1e-7) ? 1 : 0;
    }
    return {bad == 0, "200 sequences, " + std::to_string(bad) + " violations; worst canonical " + fmt(worst_canon) +
                          ", forward " + fmt(worst_forward) + ", idempotence " + fmt(worst_idem)};
}

// Piecewise-linear finite differences are only meaningful away from kinks.
bool away_from_kinks(const MlpParams& p, const Matrix& x) {
    if (!p.spec.piecewise_linear()) return true;
    for (const Matrix& z : forward_trace(p, x).pre_activations) {
        if (z.cwiseAbs().minCoeff() < 1e-2f) return false;
    }
    return true;
}

// DL has kinks where an output or a difference of normalised outputs is zero.
bool away_from_ties(std::span<const MlpParams> pop, const Matrix& x) {
    std::vector<Matrix> outs;
    for (const auto& m : pop) outs.push_back(forward(m, x));
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        std::vector<Vector> nu;
        for (const auto& o : outs) {
            if (o.row(i).cwiseAbs().minCoeff() < 1e-2f) return false;
            nu.push_back(normalize_l1(o.row(i).transpose()));
        }
        for (std::size_t a = 0; a < nu.size(); ++a) {
            for (std::size_t b = a + 1; b < nu.size(); ++b) {
                if ((nu[a] - nu[b]).cwiseAbs().minCoeff() < 1e-2f) return false;
            }
        }
    }
    return true;
}

Verdict criterion6() {
    std::mt19937_64 rng(6006);
    int bad_param = 0, bad_input = 0, bad_dl = 0;
    double worst_param = 0.0, worst_input = 0.0, worst_dl = 0.0;

    // Parameter and input gradients: relative error 1e-3 with h = 1e-3. Errors
    // are measured against max(|fd|, 1) since float32 forward passes put an
    // absolute noise floor of about 1e-4 on the difference quotient.
    for (int t = 0; t < 800; ++t) {
        const bool input_trial = t >= 600;
        const Activation act = kAll[t % 3];
        MlpParams p = testing::random_net(random_widths(rng, 2, 2, 5), act, rng());
        Matrix x;
        do {
            x = testing::random_matrix(3, p.spec.input_dim(), rng());
        } while (!away_from_kinks(p, x));
        const Matrix up = testing::random_matrix(3, p.spec.output_dim(), rng());
        const GradBundle g = backward(p, x, up);
        double fd = 0.0, an = 0.0;
        if (input_trial) {
            const auto i = std::uniform_int_distribution<Eigen::Index>(0, x.size() - 1)(rng);
            fd = testing::central_difference(x.data()[i], 1e-3, [&] { return testing::weighted_output(p, x, up); });
            an = g.d_inputs.data()[i];
        } else {
            const auto l = std::uniform_int_distribution<std::size_t>(0, p.layer_count() - 1)(rng);
            const bool bias = std::bernoulli_distribution(0.3)(rng);
            float* data = bias ? p.biases[l].data() : p.weights[l].data();
            const Eigen::Index n = bias ? p.biases[l].size() : p.weights[l].size();
            const auto i = std::uniform_int_distribution<Eigen::Index>(0, n - 1)(rng);
            fd = testing::central_difference(data[i], 1e-3, [&] { return testing::weighted_output(p, x, up); });
            an = bias ? g.d_biases[l](i) : g.d_weights[l].data()[i];
        }
        const double err = std::abs(fd - an) / std::max(1.0, std::abs(fd));
        (input_trial ? worst_input : worst_param) = std::max(input_trial ? worst_input : worst_param, err);
        if (err > 1e-3) ++(input_trial ? bad_input : bad_param);
    }

    // dDL/dI on p = 3 populations of 4x3x2 TanH nets: relative error 1e-2, h = 1e-3.
    for (int t = 0; t < 200; ++t) {
        std::vector<MlpParams> pop;
        for (int m = 0; m < 3; ++m) pop.push_back(testing::random_net({4, 3, 2}, Activation::TanH, rng()));
        Matrix x;
        do {
            x = testing::random_matrix(2, 4, rng());
        } while (!away_from_ties(pop, x));
        const InputLoss il = disagreement_input_gradient(pop, x);
        const auto i = std::uniform_int_distribution<Eigen::Index>(0, x.size() - 1)(rng);
        const double fd =
            testing::central_difference(x.data()[i], 1e-3, [&] { return disagreement_input_gradient(pop, x).loss; });
        const double err = std::abs(fd - il.d_inputs.data()[i]) / std::max(1e-2, std::abs(fd));
        worst_dl = std::max(worst_dl, err);
        if (err > 1e-2) ++bad_dl;
    }

    const int bad = bad_param + bad_input + bad_dl;
    return {bad == 0, "1000 trials (600 parameter, 200 input, 200 committee-loss); failures " +
                          std::to_string(bad_param) + "/" + std::to_string(bad_input) + "/" + std::to_string(bad_dl) +
                          "; worst relative error " + fmt(worst_param) + "/" + fmt(worst_input) + "/" + fmt(worst_dl)};
}

// Same per-neuron gauge fix the aligner applies once a permutation is chosen.
MlpParams gauge_to(MlpParams cand, const MlpParams& ref, std::size_t layer, const std::vector<int>& perm) {
    cand = apply_transform(std::move(cand), Permute{layer, perm});
    for (int k = 0; k < static_cast<int>(perm.size()); ++k) {
        Eigen::VectorXd c(cand.weights[layer].rows() + 1), r(c.size());
        c << cand.weights[layer].col(k).cast<double>(), cand.biases[layer](k);
        r << ref.weights[layer].col(k).cast<double>(), ref.biases[layer](k);
        if (cand.spec.piecewise_linear()) cand = apply_transform(std::move(cand), Scale{layer, k, r.norm() / c.norm()});
        if (cand.spec.odd_symmetric() && (c.sum() < 0.0) != (r.sum() < 0.0)) {
            cand = apply_transform(std::move(cand), Polarity{layer, k});
        }
    }
    return cand;
}

struct BruteForce {
    double best = std::numeric_limits<double>::infinity();
    std::vector<std::vector<int>> perms;
};

void exhaustive(const MlpParams& cand, const MlpParams& ref, std::size_t layer, double cost_so_far,
                std::vector<std::vector<int>>& chosen, BruteForce& out) {
    if (layer == ref.spec.hidden_layer_count()) {
        if (cost_so_far < out.best) {
            out.best = cost_so_far;
            out.perms = chosen;
        }
        return;
    }
    const Eigen::MatrixXd cost = column_distances(matching_columns(cand, layer), matching_columns(ref, layer));
    std::vector<int> perm(static_cast<std::size_t>(cost.rows()));
    std::iota(perm.begin(), perm.end(), 0);
    do {
        double c = cost_so_far;
        for (std::size_t k = 0; k < perm.size(); ++k) c += cost(perm[k], static_cast<Eigen::Index>(k));
        chosen.push_back(perm);
        exhaustive(gauge_to(cand, ref, layer, perm), ref, layer + 1, c, chosen, out);
        chosen.pop_back();
    } while (std::next_permutation(perm.begin(), perm.end()));
}

Verdict criterion7() {
    std::mt19937_64 rng(7007);
    std::uniform_real_distribution<float> noise(-1e-3f, 1e-3f);
    int agree = 0;
    for (int t = 0; t < 100; ++t) {
        const MlpParams ref = testing::random_net(random_widths(rng, 2, 2, 5), kAll[t % 3], rng());
        MlpParams near = ref;
        near.for_each_tensor([&](std::span<float> s) {
            for (float& x : s) x += noise(rng);
        });
        const MlpParams cand = testing::apply_all(near, testing::random_transforms(ref.spec, rng(), 8));
        const Alignment greedy = greedy_align_with_matching(cand, ref);
        BruteForce bf;
        std::vector<std::vector<int>> chosen;
        exhaustive(cand, ref, 0, 0.0, chosen, bf);
        agree += greedy.permutations == bf.perms ? 1 : 0;
    }
    return {agree == 100, std::to_string(agree) + "/100 pairs where greedy matching equals exhaustive search"};
}

// ---------------------------------------------------------------------------
// Cross-run checks.

Verdict criterion8() {
    int converged = 0, exact = 0;
    for (const Run& r : g_runs) {
        if (!r.converged()) continue;
        ++converged;
        const auto& al = r.outcome.alignment;
        exact += (al.agreement_rate == 1.0 && al.probe_count == 10000) ? 1 : 0;
    }
    return {converged > 0 && exact == converged,
            std::to_string(exact) + "/" + std::to_string(converged) + " converged runs agree on 10000/10000 probes"};
}

Verdict criterion9() {
    int ok = 0;
    for (const Run& r : g_runs) {
        const auto& out = r.outcome;
        std::uint64_t attempts = 0;
        for (const auto& a : out.attempts) attempts += a.samples;
        bool iterations_ok = true;
        for (const auto& it : out.result.report.iterations) {
            iterations_ok = iterations_ok && it.query_count == static_cast<std::uint64_t>(it.dataset_size);
        }
        ok += (out.result.report.samples == r.oracle_delta && out.total_queries == r.oracle_delta &&
               attempts == r.oracle_delta && iterations_ok)
                  ? 1
                  : 0;
    }
    return {!g_runs.empty() && ok == static_cast<int>(g_runs.size()),
            std::to_string(ok) + "/" + std::to_string(g_runs.size()) + " runs report exactly the oracle's query count"};
}

Verdict criterion10() {
    // Convergence is declared only once the loss clears eps_loss, which the
    // schedule gates, so the trend is measured by the first iteration at which
    // a member is within tolerance of the black box.
    const ExperimentConfig base = load("desk.json");
    double mean_short = 0.0, mean_long = 0.0;
    std::string per_short, per_long;
    for (std::uint64_t seed : {1, 2, 3}) {
        ExperimentConfig a = base, b = base;
        a.oracle.epochs = 1;
        b.oracle.epochs = 500;
        const Run& ra = run("black box 1 epoch, seed " + std::to_string(seed), a, seed, true);
        const Run& rb = run("black box 500 epochs, seed " + std::to_string(seed), b, seed, true);
        mean_short += ra.first_within_tolerance / 3.0;
        mean_long += rb.first_within_tolerance / 3.0;
        per_short += (per_short.empty() ? "" : ",") + std::to_string(ra.first_within_tolerance) + "/" +
                     std::to_string(ra.first_converged());
        per_long += (per_long.empty() ? "" : ",") + std::to_string(rb.first_within_tolerance) + "/" +
                    std::to_string(rb.first_converged());
    }
    const bool a_ok = mean_short < mean_long;

    ExperimentConfig noisy = base;
    noisy.reconstruction.run.init_mode = InitMode::SeedAllNoisy;
    noisy.reconstruction.known_initial_from_oracle_seed = true;
    int converged = 0;
    for (std::uint64_t seed : {1, 2, 3}) {
        converged += run("all members seeded, seed " + std::to_string(seed), noisy, seed, true).converged() ? 1 : 0;
    }
    const bool b_ok = converged == 0;

    return {a_ok && b_ok,
            std::string("(a) ") + (a_ok ? "PASS" : "FAIL") + ": mean first iteration within max eps 1e-3 " +
                fmt(mean_short) + " [" + per_short + "] for 1 epoch vs " + fmt(mean_long) + " [" + per_long +
                "] for 500 (within/converged per seed, never counts as o+1); (b) " + (b_ok ? "PASS" : "FAIL") + ": " +
                std::to_string(converged) + "/3 all-seeded runs converged"};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria 1-10"};
    std::vector<int> only;
    std::vector<int> known_failures;
    app.add_option("--only", only, "Run only these criteria (8 and 9 check whatever runs happened)");
    app.add_option(
        "--known-failure", known_failures,
        "Criteria whose failure is analysed and expected; they still print FAIL but do not fail the exit code");
    CLI11_PARSE(app, argc, argv);

    const std::vector<std::pair<int, Verdict (*)()>> order = {
        {5, criterion5}, {6, criterion6}, {7, criterion7},   {1, criterion1}, {2, criterion2},
        {4, criterion4}, {3, criterion3}, {10, criterion10}, {8, criterion8}, {9, criterion9},
    };
    const std::set<int> selected(only.begin(), only.end());
    const std::set<int> expected(known_failures.begin(), known_failures.end());
    std::map<int, Verdict> verdicts;
    for (const auto& [id, fn] : order) {
        if (!selected.empty() && !selected.count(id)) continue;
        std::cout << "running criterion " << id << std::endl;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            verdicts[id] = fn();
        } catch (const std::exception& e) {
            verdicts[id] = {false, std::string("exception: ") + e.what()};
        }
        std::cout << "  done in " << fmt(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count())
                  << " s" << std::endl;
    }

    std::cout << "\n";
    int unexpected = 0;
    for (const auto& [id, v] : verdicts) {
        std::cout << "criterion " << id << ": " << (v.pass ? "PASS" : "FAIL") << "  " << v.detail;
        if (!v.pass && expected.count(id)) std::cout << "  [known failure]";
        std::cout << std::endl;
        if (!v.pass && !expected.count(id)) ++unexpected;
    }
    return unexpected == 0 ? 0 : 1;
}
