#pragma once

// End-to-end experiment pipeline shared by the command-line tool and the
// acceptance runner: dataset -> black box -> reconstruction (with restarts)
// -> evaluation against the hidden weights.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "neurome/align.hpp"
#include "neurome/config.hpp"
#include "neurome/data.hpp"
#include "neurome/io.hpp"
#include "neurome/oracle.hpp"
#include "neurome/reconstruct.hpp"
#include "neurome/report.hpp"

namespace neurome {

/// Training data plus the extra pools drawn from the same source.
struct ExperimentData {
    Dataset train;
    Matrix expanded_pool;  // training rows followed by fresh rows from the same generator
    Matrix probes;         // held-out inputs for the classification-agreement check
};

inline ExperimentData build_data(const ExperimentConfig& cfg) {
    const auto& ds = cfg.oracle.dataset;
    const int probes = cfg.reconstruction.probes;
    ExperimentData out;
    if (ds.source == "idx") {
        Dataset raw = load_idx(ds.images, ds.labels);
        if (raw.input_dim() != cfg.spec.input_dim()) throw ConfigError("IDX images do not match the input width");
        out.train = normalize(std::move(raw), cfg.oracle.normalization);
        out.expanded_pool = out.train.inputs;
        const Eigen::Index n = std::min<Eigen::Index>(probes, out.train.size());
        out.probes = out.train.inputs.topRows(n);
        return out;
    }
    const int classes = ds.classes > 0 ? ds.classes : cfg.spec.output_dim();
    // One generator stream: training rows first, then expansion rows, then probes.
    const int total = ds.count + ds.expanded_count + probes;
    Dataset all = synth_dataset(cfg.spec.input_dim(), classes, total, cfg.dataset_seed());
    Dataset train;
    train.inputs = all.inputs.topRows(ds.count);
    train.labels.assign(all.labels.begin(), all.labels.begin() + ds.count);
    out.train = normalize(std::move(train), cfg.oracle.normalization);
    out.expanded_pool = apply_normalization(all.inputs.topRows(ds.count + ds.expanded_count), out.train.normalization);
    out.probes = apply_normalization(all.inputs.bottomRows(probes), out.train.normalization);
    return out;
}

inline QueryOracle build_blackbox(const ExperimentConfig& cfg, const Dataset& train) {
    return train_blackbox(cfg.spec, train, cfg.oracle.optimizer, cfg.oracle.epochs, cfg.oracle_seed(),
                          cfg.oracle.batch_size);
}

inline json provenance_to_json(const BlackboxProvenance& p) {
    return {{"seed", p.seed},
            {"optimizer", to_string(p.optimizer)},
            {"epochs", p.epochs},
            {"dataset_checksum", p.dataset_checksum},
            {"batch_size", p.batch_size}};
}

inline json blackbox_metadata(const ExperimentConfig& cfg, const QueryOracle& oracle) {
    return {{"provenance", provenance_to_json(oracle.provenance())}, {"config", config_to_json(cfg)}};
}

/// Run parameters with the data-dependent pieces (pools, known weights) filled in.
inline ReconstructConfig resolve_run(const ExperimentConfig& cfg, const ExperimentData& data) {
    ReconstructConfig rc = cfg.reconstruction.run;
    rc.dataset_pool = data.train.inputs;
    rc.expanded_pool = data.expanded_pool;
    if (rc.init_mode != InitMode::Random) {
        if (cfg.reconstruction.known_initial_from_oracle_seed) {
            // The black box starts from exactly this initialisation.
            rc.known_initial = init_glorot(cfg.spec, cfg.oracle_seed());
        } else {
            rc.known_initial = read_nrm1(cfg.reconstruction.known_initial);
        }
    }
    return rc;
}

struct AttemptSummary {
    int attempt = 0;
    std::uint64_t seed = 0;
    ConvergenceKind status = ConvergenceKind::Running;
    std::optional<int> converged_at;
    std::uint64_t samples = 0;
    double best_loss = 0.0;
};

struct ExperimentOutcome {
    ReconstructResult result;  // the attempt that is reported
    std::vector<AttemptSummary> attempts;
    AlignmentReport alignment;
    std::uint64_t total_queries = 0;

    bool converged() const { return result.report.final_status.kind == ConvergenceKind::Converged; }
};

using AttemptObserver = std::function<void(int attempt, const IterationRecord&, const Population&)>;

/// Reconstructs with up to `retries` restarts on divergence. Each attempt
/// reports its own sample count; restarts use derived seeds.
inline ExperimentOutcome run_reconstruction(const ExperimentConfig& cfg, const ReconstructConfig& rc,
                                            const QueryOracle& oracle, const Matrix& probes,
                                            const AttemptObserver& observer = {}) {
    const std::uint64_t base = cfg.reconstruction_seed();
    const std::uint64_t before = oracle.query_count();
    std::optional<ReconstructResult> chosen;
    ExperimentOutcome out{ReconstructResult{MlpParams(cfg.spec), {}, {}}, {}, {}, 0};
    for (int attempt = 0; attempt <= cfg.reconstruction.retries; ++attempt) {
        const std::uint64_t seed =
            attempt == 0 ? base : derive_seed(base, 0x5245545259ULL + static_cast<std::uint64_t>(attempt));
        IterationObserver obs;
        if (observer) obs = [&](const IterationRecord& r, const Population& p) { observer(attempt, r, p); };
        ReconstructResult res = reconstruct(oracle, cfg.spec, rc, seed, obs);
        const RunReport& rep = res.report;
        out.attempts.push_back({attempt, seed, rep.final_status.kind, rep.converged_at, rep.samples, rep.best_loss});
        const bool better = !chosen || rep.best_loss < chosen->report.best_loss;
        const bool converged = rep.final_status.kind == ConvergenceKind::Converged;
        if (converged || better) chosen = std::move(res);
        if (converged) break;
    }
    out.result = std::move(*chosen);
    out.total_queries = oracle.query_count() - before;
    out.alignment = OracleEvaluator::evaluate(out.result.best, oracle, probes);
    return out;
}

inline json attempts_to_json(const std::vector<AttemptSummary>& attempts) {
    json a = json::array();
    for (const auto& s : attempts) {
        a.push_back({{"attempt", s.attempt},
                     {"seed", s.seed},
                     {"status", to_string(s.status)},
                     {"converged_at", s.converged_at ? json(*s.converged_at) : json(nullptr)},
                     {"samples", s.samples},
                     {"best_loss", detail::finite_or_null(s.best_loss)}});
    }
    return a;
}

/// The full reconstruction report. Contains no timestamps, so identical
/// configurations produce identical documents.
inline json experiment_report(const ExperimentConfig& cfg, const QueryOracle& oracle, const ExperimentOutcome& out) {
    json j = to_json(out.result.report);
    j["config"] = config_to_json(cfg);
    j["blackbox"] = provenance_to_json(oracle.provenance());
    j["attempts"] = attempts_to_json(out.attempts);
    j["restarts"] = out.attempts.empty() ? 0 : static_cast<int>(out.attempts.size()) - 1;
    j["total_queries"] = out.total_queries;
    j["alignment"] = to_json(out.alignment);
    return j;
}

inline SweepRow sweep_row(const std::string& id, const ExperimentOutcome& out) {
    SweepRow r;
    r.config_id = id;
    r.samples = out.result.report.samples;
    r.max_eps = out.alignment.max_eps;
    r.max_eps_pct = out.alignment.max_eps_pct;
    r.mean_eps_per_matrix = out.alignment.mean_eps_per_matrix;
    r.status = to_string(out.result.report.final_status.kind);
    return r;
}

/// Everything one experiment produces in memory.
struct ExperimentRun {
    ExperimentData data;
    QueryOracle oracle;
    ExperimentOutcome outcome;
};

inline ExperimentRun run_experiment(const ExperimentConfig& cfg, const AttemptObserver& observer = {}) {
    ExperimentData data = build_data(cfg);
    QueryOracle oracle = build_blackbox(cfg, data.train);
    const ReconstructConfig rc = resolve_run(cfg, data);
    ExperimentOutcome outcome = run_reconstruction(cfg, rc, oracle, data.probes, observer);
    return ExperimentRun{std::move(data), std::move(oracle), std::move(outcome)};
}

/// A sweep file: a base config and a list of runs, each a set of dotted-key overrides.
struct SweepEntry {
    std::string id;
    ExperimentConfig config;
};

inline std::vector<SweepEntry> parse_sweep(const json& doc) {
    detail::reject_unknown(doc, {"base", "runs"}, "sweep");
    if (!doc.contains("runs") || !doc.at("runs").is_array()) throw ConfigError("sweep needs a 'runs' array");
    const json base = doc.value("base", json::object());
    std::vector<SweepEntry> out;
    for (const json& run : doc.at("runs")) {
        detail::reject_unknown(run, {"id", "set"}, "sweep.runs[]");
        if (!run.contains("id") || !run.at("id").is_string()) throw ConfigError("each sweep run needs a string id");
        json merged = base;
        if (run.contains("set")) {
            const json& set = run.at("set");
            if (!set.is_object()) throw ConfigError("sweep 'set' must be an object of dotted keys");
            for (const auto& [key, value] : set.items()) apply_override(merged, key + "=" + value.dump());
        }
        out.push_back({run.at("id").get<std::string>(), parse_config(merged)});
    }
    std::set<std::string> seen;
    for (const auto& e : out) {
        if (!seen.insert(e.id).second) throw ConfigError("duplicate sweep id '" + e.id + "'");
    }
    return out;
}

inline void write_json_file(const std::filesystem::path& path, const json& j) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

}  // namespace neurome
