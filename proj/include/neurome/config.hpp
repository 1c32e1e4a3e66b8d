#pragma once

// Experiment configuration: one JSON document, strictly validated (unknown
// keys are errors), every field defaulted, and serialisable back to its fully
// resolved form so that outputs can embed it.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "neurome/data.hpp"
#include "neurome/error.hpp"
#include "neurome/mlp.hpp"
#include "neurome/optim.hpp"
#include "neurome/reconstruct.hpp"
#include "neurome/sampling.hpp"

namespace neurome {

using nlohmann::json;

inline constexpr const char* kSeedEnvVar = "NEUROME_SEED";

/// Seed fallback: NEUROME_SEED when set, otherwise `fallback`.
inline std::uint64_t default_seed(std::uint64_t fallback) {
    if (const char* env = std::getenv(kSeedEnvVar); env && *env) {
        try {
            return std::stoull(env);
        } catch (const std::exception&) {
            throw ConfigError(std::string(kSeedEnvVar) + " is not an unsigned integer: " + env);
        }
    }
    return fallback;
}

struct DatasetConfig {
    std::string source = "synth";  // synth | idx
    int count = 2000;
    int classes = 0;  // 0: one class per output neuron
    std::optional<std::uint64_t> seed;
    std::string images;
    std::string labels;
    // Extra samples from the same generator, used by the expanded-dataset baseline.
    int expanded_count = 0;
};

struct OracleConfig {
    DatasetConfig dataset;
    NormalizationMode normalization = NormalizationMode::Global;
    OptimizerConfig optimizer = OptimizerConfig::defaults(OptimizerKind::Adam);
    int epochs = 5;
    std::optional<std::uint64_t> seed;
    int batch_size = kBlackboxBatchSize;
};

struct ReconstructionSection {
    ReconstructConfig run;
    std::optional<std::uint64_t> seed;
    int retries = 3;
    std::string known_initial;  // NRM1 path for the known-initial-weights modes
    bool known_initial_from_oracle_seed = false;
    int probes = 10000;
};

struct OutputConfig {
    std::string dir = "out";
    std::string blackbox = "blackbox.nrm";
    std::string reconstruction = "reconstruction.nrm";
    std::string report = "report.json";
};

struct ExperimentConfig {
    MlpSpec spec{{16, 12, 4}, Activation::LeakyReLU};
    OracleConfig oracle;
    ReconstructionSection reconstruction;
    OutputConfig output;

    std::uint64_t oracle_seed() const { return oracle.seed.value_or(default_seed(42)); }
    std::uint64_t reconstruction_seed() const { return reconstruction.seed.value_or(default_seed(1)); }
    std::uint64_t dataset_seed() const { return oracle.dataset.seed.value_or(oracle_seed()); }
    std::filesystem::path path_of(const std::string& name) const { return std::filesystem::path(output.dir) / name; }
};

namespace detail {

inline void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
    if (!obj.is_object()) throw ConfigError(where + " must be an object");
    for (const auto& [k, v] : obj.items()) {
        if (!allowed.count(k)) throw ConfigError("unknown key '" + where + "." + k + "'");
    }
}

template <typename T>
void read_field(const json& obj, const char* key, T& out, const std::string& where) {
    if (!obj.contains(key)) return;
    try {
        out = obj.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError("bad value for '" + where + "." + key + "': " + e.what());
    }
}

inline void read_seed(const json& obj, const char* key, std::optional<std::uint64_t>& out, const std::string& where) {
    if (!obj.contains(key) || obj.at(key).is_null()) return;
    std::uint64_t v = 0;
    read_field(obj, key, v, where);
    out = v;
}

inline void positive(long long v, const std::string& name) {
    if (v <= 0) throw ConfigError(name + " must be positive");
}

inline void nonnegative(long long v, const std::string& name) {
    if (v < 0) throw ConfigError(name + " must be nonnegative");
}

inline OptimizerConfig parse_optimizer(const json& j, const std::string& where, OptimizerConfig base) {
    // Accept either a bare name or an object with hyperparameters.
    if (j.is_string()) return OptimizerConfig::defaults(optimizer_from_string(j.get<std::string>()));
    reject_unknown(
        j, {"kind", "learning_rate", "beta1", "beta2", "eps", "decay", "eta_minus", "eta_plus", "step_min", "step_max"},
        where);
    if (j.contains("kind")) base = OptimizerConfig::defaults(optimizer_from_string(j.at("kind").get<std::string>()));
    read_field(j, "learning_rate", base.learning_rate, where);
    read_field(j, "beta1", base.beta1, where);
    read_field(j, "beta2", base.beta2, where);
    read_field(j, "eps", base.eps, where);
    read_field(j, "decay", base.decay, where);
    read_field(j, "eta_minus", base.eta_minus, where);
    read_field(j, "eta_plus", base.eta_plus, where);
    read_field(j, "step_min", base.step_min, where);
    read_field(j, "step_max", base.step_max, where);
    if (!(base.learning_rate > 0.0)) throw ConfigError(where + ".learning_rate must be positive");
    return base;
}

inline json optimizer_to_json(const OptimizerConfig& c) {
    return {{"kind", to_string(c.kind)},
            {"learning_rate", c.learning_rate},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"eps", c.eps},
            {"decay", c.decay},
            {"eta_minus", c.eta_minus},
            {"eta_plus", c.eta_plus},
            {"step_min", c.step_min},
            {"step_max", c.step_max}};
}

inline json seed_to_json(const std::optional<std::uint64_t>& s) { return s ? json(*s) : json(nullptr); }

}  // namespace detail

inline ExperimentConfig parse_config(const json& root) {
    using detail::read_field;
    ExperimentConfig cfg;
    detail::reject_unknown(root, {"spec", "oracle", "reconstruction", "output"}, "config");

    if (root.contains("spec")) {
        const json& s = root.at("spec");
        detail::reject_unknown(s, {"widths", "activation", "leak_slope"}, "spec");
        std::vector<int> widths = cfg.spec.widths();
        std::string act = to_string(cfg.spec.activation());
        float slope = cfg.spec.leak_slope();
        read_field(s, "widths", widths, "spec");
        read_field(s, "activation", act, "spec");
        read_field(s, "leak_slope", slope, "spec");
        try {
            cfg.spec = MlpSpec(widths, activation_from_string(act), slope);
        } catch (const Error& e) {
            throw ConfigError(std::string("spec: ") + e.what());
        }
    }

    if (root.contains("oracle")) {
        const json& o = root.at("oracle");
        detail::reject_unknown(o, {"dataset", "normalization", "optimizer", "epochs", "seed", "batch_size"}, "oracle");
        if (o.contains("dataset")) {
            const json& d = o.at("dataset");
            detail::reject_unknown(d, {"source", "count", "classes", "seed", "images", "labels", "expanded_count"},
                                   "oracle.dataset");
            auto& ds = cfg.oracle.dataset;
            read_field(d, "source", ds.source, "oracle.dataset");
            read_field(d, "count", ds.count, "oracle.dataset");
            read_field(d, "classes", ds.classes, "oracle.dataset");
            detail::read_seed(d, "seed", ds.seed, "oracle.dataset");
            read_field(d, "images", ds.images, "oracle.dataset");
            read_field(d, "labels", ds.labels, "oracle.dataset");
            read_field(d, "expanded_count", ds.expanded_count, "oracle.dataset");
            if (ds.source != "synth" && ds.source != "idx")
                throw ConfigError("oracle.dataset.source must be synth or idx");
            if (ds.source == "idx" && (ds.images.empty() || ds.labels.empty())) {
                throw ConfigError("idx dataset needs images and labels paths");
            }
            detail::positive(ds.count, "oracle.dataset.count");
            detail::nonnegative(ds.classes, "oracle.dataset.classes");
            detail::nonnegative(ds.expanded_count, "oracle.dataset.expanded_count");
        }
        if (o.contains("normalization")) {
            cfg.oracle.normalization = normalization_from_string(o.at("normalization").get<std::string>());
        }
        if (o.contains("optimizer"))
            cfg.oracle.optimizer = detail::parse_optimizer(o.at("optimizer"), "oracle.optimizer", cfg.oracle.optimizer);
        read_field(o, "epochs", cfg.oracle.epochs, "oracle");
        detail::read_seed(o, "seed", cfg.oracle.seed, "oracle");
        read_field(o, "batch_size", cfg.oracle.batch_size, "oracle");
        detail::nonnegative(cfg.oracle.epochs, "oracle.epochs");
        detail::positive(cfg.oracle.batch_size, "oracle.batch_size");
    }

    if (root.contains("reconstruction")) {
        const json& r = root.at("reconstruction");
        detail::reject_unknown(r,
                               {"population", "queries_per_iteration", "outer_iterations", "epochs", "learning_rate",
                                "optimizer", "schedule", "batch_size", "sampler", "thresholds", "init", "retries",
                                "stop_when_converged", "seed", "threads", "probes"},
                               "reconstruction");
        auto& sec = cfg.reconstruction;
        auto& rc = sec.run;
        read_field(r, "population", rc.population, "reconstruction");
        read_field(r, "queries_per_iteration", rc.queries_per_iteration, "reconstruction");
        read_field(r, "outer_iterations", rc.outer_iterations, "reconstruction");
        read_field(r, "epochs", rc.epochs, "reconstruction");
        if (r.contains("optimizer"))
            rc.optimizer = detail::parse_optimizer(r.at("optimizer"), "reconstruction.optimizer", rc.optimizer);
        read_field(r, "learning_rate", rc.optimizer.learning_rate, "reconstruction");
        if (r.contains("schedule")) {
            std::vector<int> s;
            read_field(r, "schedule", s, "reconstruction");
            try {
                rc.schedule = StepSchedule(s);
            } catch (const Error& e) {
                throw ConfigError(std::string("reconstruction.schedule: ") + e.what());
            }
        }
        read_field(r, "batch_size", rc.batch_size, "reconstruction");
        read_field(r, "retries", sec.retries, "reconstruction");
        read_field(r, "stop_when_converged", rc.stop_when_converged, "reconstruction");
        detail::read_seed(r, "seed", sec.seed, "reconstruction");
        read_field(r, "threads", rc.threads, "reconstruction");
        read_field(r, "probes", sec.probes, "reconstruction");

        if (r.contains("sampler")) {
            const json& s = r.at("sampler");
            detail::reject_unknown(s,
                                   {"kind", "epochs", "learning_rate", "schedule", "init_std", "gaussian_std",
                                    "resample_k", "noise_std", "retries"},
                                   "reconstruction.sampler");
            auto& sc = rc.sampler;
            if (s.contains("kind")) sc.kind = sampler_from_string(s.at("kind").get<std::string>());
            read_field(s, "epochs", sc.committee.epochs, "reconstruction.sampler");
            read_field(s, "learning_rate", sc.committee.learning_rate, "reconstruction.sampler");
            if (s.contains("schedule")) {
                std::vector<int> v;
                read_field(s, "schedule", v, "reconstruction.sampler");
                try {
                    sc.committee.schedule = StepSchedule(v);
                } catch (const Error& e) {
                    throw ConfigError(std::string("reconstruction.sampler.schedule: ") + e.what());
                }
            }
            read_field(s, "init_std", sc.committee.init_std, "reconstruction.sampler");
            read_field(s, "gaussian_std", sc.gaussian_std, "reconstruction.sampler");
            read_field(s, "resample_k", sc.resample_k, "reconstruction.sampler");
            read_field(s, "noise_std", sc.resample_noise_std, "reconstruction.sampler");
            read_field(s, "retries", sc.committee_retries, "reconstruction.sampler");
            detail::positive(sc.committee.epochs, "reconstruction.sampler.epochs");
            if (!(sc.committee.learning_rate > 0.0))
                throw ConfigError("reconstruction.sampler.learning_rate must be positive");
            detail::positive(sc.resample_k, "reconstruction.sampler.resample_k");
            if (sc.resample_noise_std < 0.0) throw ConfigError("reconstruction.sampler.noise_std must be nonnegative");
        }
        if (r.contains("thresholds")) {
            const json& t = r.at("thresholds");
            detail::reject_unknown(t, {"eps_agree", "eps_loss", "rel_improve", "window", "taper_ratio"},
                                   "reconstruction.thresholds");
            auto& th = rc.thresholds;
            read_field(t, "eps_agree", th.eps_agree, "reconstruction.thresholds");
            read_field(t, "eps_loss", th.eps_loss, "reconstruction.thresholds");
            read_field(t, "rel_improve", th.rel_improve, "reconstruction.thresholds");
            read_field(t, "window", th.window, "reconstruction.thresholds");
            read_field(t, "taper_ratio", th.taper_ratio, "reconstruction.thresholds");
            detail::positive(th.window, "reconstruction.thresholds.window");
        }
        if (r.contains("init")) {
            const json& i = r.at("init");
            detail::reject_unknown(i, {"mode", "noise_std", "known_initial", "known_initial_from_oracle_seed"},
                                   "reconstruction.init");
            if (i.contains("mode")) rc.init_mode = init_mode_from_string(i.at("mode").get<std::string>());
            read_field(i, "noise_std", rc.init_noise_std, "reconstruction.init");
            read_field(i, "known_initial", sec.known_initial, "reconstruction.init");
            read_field(i, "known_initial_from_oracle_seed", sec.known_initial_from_oracle_seed, "reconstruction.init");
            if (rc.init_mode != InitMode::Random && sec.known_initial.empty() && !sec.known_initial_from_oracle_seed) {
                throw ConfigError("init mode " + to_string(rc.init_mode) + " needs known initial weights");
            }
        }
        if (rc.population < 2) throw ConfigError("reconstruction.population must be at least 2");
        detail::nonnegative(rc.queries_per_iteration, "reconstruction.queries_per_iteration");
        detail::nonnegative(rc.outer_iterations, "reconstruction.outer_iterations");
        detail::nonnegative(rc.epochs, "reconstruction.epochs");
        detail::positive(rc.batch_size, "reconstruction.batch_size");
        detail::nonnegative(sec.retries, "reconstruction.retries");
        detail::nonnegative(sec.probes, "reconstruction.probes");
        if (!(rc.optimizer.learning_rate > 0.0)) throw ConfigError("reconstruction.learning_rate must be positive");
    }

    if (root.contains("output")) {
        const json& o = root.at("output");
        detail::reject_unknown(o, {"dir", "blackbox", "reconstruction", "report"}, "output");
        read_field(o, "dir", cfg.output.dir, "output");
        read_field(o, "blackbox", cfg.output.blackbox, "output");
        read_field(o, "reconstruction", cfg.output.reconstruction, "output");
        read_field(o, "report", cfg.output.report, "output");
    }
    return cfg;
}

/// Fully resolved config, seeds included.
inline json config_to_json(const ExperimentConfig& cfg) {
    const auto& rc = cfg.reconstruction.run;
    const auto& ds = cfg.oracle.dataset;
    json j;
    j["spec"] = {{"widths", cfg.spec.widths()},
                 {"activation", to_string(cfg.spec.activation())},
                 {"leak_slope", cfg.spec.leak_slope()}};
    j["oracle"] = {{"dataset",
                    {{"source", ds.source},
                     {"count", ds.count},
                     {"classes", ds.classes},
                     {"seed", cfg.dataset_seed()},
                     {"images", ds.images},
                     {"labels", ds.labels},
                     {"expanded_count", ds.expanded_count}}},
                   {"normalization", to_string(cfg.oracle.normalization)},
                   {"optimizer", detail::optimizer_to_json(cfg.oracle.optimizer)},
                   {"epochs", cfg.oracle.epochs},
                   {"seed", cfg.oracle_seed()},
                   {"batch_size", cfg.oracle.batch_size}};
    j["reconstruction"] = {{"population", rc.population},
                           {"queries_per_iteration", rc.queries_per_iteration},
                           {"outer_iterations", rc.outer_iterations},
                           {"epochs", rc.epochs},
                           {"optimizer", detail::optimizer_to_json(rc.optimizer)},
                           {"schedule", rc.schedule.triggers()},
                           {"batch_size", rc.batch_size},
                           {"sampler",
                            {{"kind", to_string(rc.sampler.kind)},
                             {"epochs", rc.sampler.committee.epochs},
                             {"learning_rate", rc.sampler.committee.learning_rate},
                             {"schedule", rc.sampler.committee.schedule.triggers()},
                             {"init_std", rc.sampler.committee.init_std},
                             {"gaussian_std", rc.sampler.gaussian_std},
                             {"resample_k", rc.sampler.resample_k},
                             {"noise_std", rc.sampler.resample_noise_std},
                             {"retries", rc.sampler.committee_retries}}},
                           {"thresholds",
                            {{"eps_agree", rc.thresholds.eps_agree},
                             {"eps_loss", rc.thresholds.eps_loss},
                             {"rel_improve", rc.thresholds.rel_improve},
                             {"window", rc.thresholds.window},
                             {"taper_ratio", rc.thresholds.taper_ratio}}},
                           {"init",
                            {{"mode", to_string(rc.init_mode)},
                             {"noise_std", rc.init_noise_std},
                             {"known_initial", cfg.reconstruction.known_initial},
                             {"known_initial_from_oracle_seed", cfg.reconstruction.known_initial_from_oracle_seed}}},
                           {"retries", cfg.reconstruction.retries},
                           {"stop_when_converged", rc.stop_when_converged},
                           {"seed", cfg.reconstruction_seed()},
                           {"threads", rc.threads},
                           {"probes", cfg.reconstruction.probes}};
    j["output"] = {{"dir", cfg.output.dir},
                   {"blackbox", cfg.output.blackbox},
                   {"reconstruction", cfg.output.reconstruction},
                   {"report", cfg.output.report}};
    return j;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return parse_config(j);
}

/// Applies "a.b.c=value" overrides to a raw config document. The value is
/// parsed as JSON when possible and taken as a string otherwise.
inline void apply_override(json& root, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key.path=value: " + assignment);
    const std::string path = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    json* node = &root;
    std::size_t start = 0;
    while (true) {
        const auto dot = path.find('.', start);
        const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (key.empty()) throw ConfigError("empty key in override " + path);
        if (dot == std::string::npos) {
            (*node)[key] = value;
            break;
        }
        if (!node->contains(key)) (*node)[key] = json::object();
        node = &(*node)[key];
        start = dot + 1;
    }
}

}  // namespace neurome
