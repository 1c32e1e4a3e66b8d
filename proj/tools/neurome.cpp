#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "neurome/neurome.hpp"

namespace {

using namespace neurome;
using nlohmann::json;

constexpr int kExitError = 1;
constexpr int kExitDiverged = 2;

struct ConfigArgs {
    std::string path;
    std::vector<std::string> overrides;
};

void add_config_options(CLI::App* cmd, ConfigArgs& args) {
    cmd->add_option("-c,--config", args.path, "experiment config (JSON)")->check(CLI::ExistingFile);
    cmd->add_option("--set", args.overrides, "override a config field, e.g. --set reconstruction.population=4");
}

json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

ExperimentConfig resolve_config(const ConfigArgs& args) {
    json doc = args.path.empty() ? json::object() : read_json(args.path);
    for (const auto& o : args.overrides) apply_override(doc, o);
    return parse_config(doc);
}

std::filesystem::path sidecar(const std::filesystem::path& p) {
    std::filesystem::path s = p;
    s += ".json";
    return s;
}

int cmd_train_blackbox(const ConfigArgs& args, const std::string& out_override) {
    const ExperimentConfig cfg = resolve_config(args);
    const std::filesystem::path out =
        out_override.empty() ? cfg.path_of(cfg.output.blackbox) : std::filesystem::path(out_override);
    const ExperimentData data = build_data(cfg);
    const QueryOracle oracle = build_blackbox(cfg, data.train);
    OracleArchive::save(out, oracle);
    write_json_file(sidecar(out), blackbox_metadata(cfg, oracle));
    std::cerr << "wrote " << out.string() << '\n';
    return 0;
}

BlackboxProvenance read_provenance(const std::filesystem::path& weights) {
    BlackboxProvenance p;
    const auto meta = sidecar(weights);
    if (!std::filesystem::exists(meta)) return p;
    const json j = read_json(meta.string()).at("provenance");
    p.seed = j.at("seed").get<std::uint64_t>();
    p.optimizer = optimizer_from_string(j.at("optimizer").get<std::string>());
    p.epochs = j.at("epochs").get<int>();
    p.dataset_checksum = j.at("dataset_checksum").get<std::uint64_t>();
    p.batch_size = j.at("batch_size").get<int>();
    return p;
}

int cmd_reconstruct(const ConfigArgs& args, const std::string& blackbox_override, bool verbose) {
    const ExperimentConfig cfg = resolve_config(args);
    const std::filesystem::path bb =
        blackbox_override.empty() ? cfg.path_of(cfg.output.blackbox) : std::filesystem::path(blackbox_override);
    if (!std::filesystem::exists(bb)) throw IoError("black-box file not found: " + bb.string());
    const QueryOracle oracle = OracleArchive::load(bb, read_provenance(bb));
    if (!(oracle.spec() == cfg.spec)) throw SpecMismatch("black-box file does not match the configured spec");
    const ExperimentData data = build_data(cfg);
    const ReconstructConfig rc = resolve_run(cfg, data);

    AttemptObserver obs;
    if (verbose) {
        obs = [](int attempt, const IterationRecord& r, const Population&) {
            std::fprintf(stderr, "attempt %d iter %3d queries %8llu min_loss %.3e mean_loss %.3e pairs %d %s\n",
                         attempt, r.iteration, static_cast<unsigned long long>(r.query_count), r.min_loss, r.mean_loss,
                         r.agreement_pairs, to_string(r.status).c_str());
        };
    }
    const auto t0 = std::chrono::steady_clock::now();
    const ExperimentOutcome out = run_reconstruction(cfg, rc, oracle, data.probes, obs);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    write_nrm1(cfg.path_of(cfg.output.reconstruction), out.result.best);
    json report = experiment_report(cfg, oracle, out);
    report["blackbox"]["path"] = bb.string();
    write_json_file(cfg.path_of(cfg.output.report), report);
    std::fprintf(stderr, "%s after %zu attempt(s): max_eps %.3e (%.4g%%), samples %llu, %.1fs\n",
                 to_string(out.result.report.final_status.kind).c_str(), out.attempts.size(), out.alignment.max_eps,
                 out.alignment.max_eps_pct, static_cast<unsigned long long>(out.result.report.samples), secs);
    return out.converged() ? 0 : kExitDiverged;
}

int cmd_align(const std::string& candidate_path, const std::string& reference_path, int probes,
              std::uint64_t probe_seed, const std::string& out_path) {
    const MlpParams candidate = read_nrm1(candidate_path);
    const MlpParams reference = read_nrm1(reference_path);
    check_same_spec(candidate, reference);
    Alignment al = greedy_align_with_matching(candidate, reference);
    const Matrix probe_inputs = sample_gaussian(probes, reference.spec.input_dim(), probe_seed).inputs;
    AlignmentReport rep = compare(al.aligned, reference, probe_inputs);
    rep.permutations = std::move(al.permutations);
    json j = to_json(rep);
    j["candidate"] = candidate_path;
    j["reference"] = reference_path;
    j["probe_seed"] = probe_seed;
    if (out_path.empty()) {
        std::cout << j.dump(2) << '\n';
    } else {
        write_json_file(out_path, j);
    }
    return 0;
}

int cmd_sweep(const std::string& matrix_path, const std::vector<std::string>& overrides, const std::string& out_path) {
    json doc = read_json(matrix_path);
    if (!overrides.empty()) {
        json base = doc.value("base", json::object());
        for (const auto& o : overrides) apply_override(base, o);
        doc["base"] = base;
    }
    std::vector<SweepEntry> entries = parse_sweep(doc);
    std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    std::vector<SweepRow> rows;
    for (const auto& e : entries) {
        std::cerr << "sweep: " << e.id << '\n';
        const ExperimentRun run = run_experiment(e.config);
        rows.push_back(sweep_row(e.id, run.outcome));
    }
    if (out_path.empty()) {
        write_sweep_csv(std::cout, rows);
    } else {
        std::ofstream out(out_path);
        if (!out) throw IoError("cannot write " + out_path);
        write_sweep_csv(out, rows);
    }
    return 0;
}

int cmd_gen_queries(const ConfigArgs& args, const std::vector<std::string>& members, const std::string& out_path) {
    const ExperimentConfig cfg = resolve_config(args);
    const ExperimentData data = build_data(cfg);
    ReconstructConfig rc = resolve_run(cfg, data);
    const std::uint64_t seed = cfg.reconstruction_seed();
    Population pop;
    if (members.empty()) {
        pop = make_population(cfg.spec, rc, seed);
    } else {
        for (const auto& m : members) {
            MlpParams p = read_nrm1(m);
            if (!(p.spec == cfg.spec)) throw SpecMismatch(m + " does not match the configured spec");
            pop.members.push_back(Member{std::move(p), Optimizer(rc.optimizer), std::mt19937_64(0)});
        }
    }
    rc.outer_iterations = std::max(rc.outer_iterations, 1);
    const QueryDataset empty(cfg.spec.input_dim(), cfg.spec.output_dim());
    int retries = 0;
    const QueryBatch batch = detail::next_queries(rc, cfg.spec, pop, empty, 1, seed, retries);
    dump_query_batch(out_path, batch);
    std::cerr << "wrote " << batch.inputs.rows() << " queries to " << out_path << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Black-box MLP parameter reconstruction toolkit"};
    app.require_subcommand(1);

    ConfigArgs train_args;
    std::string train_out;
    auto* train = app.add_subcommand("train-blackbox", "train a black-box network and save it as NRM1");
    add_config_options(train, train_args);
    train->add_option("-o,--out", train_out, "weights path (default: output.dir/output.blackbox)");

    ConfigArgs recon_args;
    std::string recon_bb;
    bool verbose = false;
    auto* recon = app.add_subcommand("reconstruct", "reconstruct a black box from queries");
    add_config_options(recon, recon_args);
    recon->add_option("-b,--blackbox", recon_bb, "black-box NRM1 file (default: output.dir/output.blackbox)");
    recon->add_flag("-v,--verbose", verbose, "print per-iteration progress");

    std::string cand, ref, align_out;
    int probes = 10000;
    std::uint64_t probe_seed = 0;
    auto* align = app.add_subcommand("align", "align a candidate to a reference and report parameter errors");
    align->add_option("candidate", cand, "candidate NRM1 file")->required()->check(CLI::ExistingFile);
    align->add_option("reference", ref, "reference NRM1 file")->required()->check(CLI::ExistingFile);
    align->add_option("--probes", probes, "Gaussian probe inputs for the argmax agreement check")
        ->check(CLI::NonNegativeNumber);
    align->add_option("--probe-seed", probe_seed, "seed of the probe inputs");
    align->add_option("-o,--out", align_out, "report path (default: stdout)");

    std::string matrix, sweep_out;
    std::vector<std::string> sweep_overrides;
    auto* sweep = app.add_subcommand("sweep", "run a matrix of experiments and emit a CSV");
    sweep->add_option("matrix", matrix, "sweep file: {\"base\": config, \"runs\": [{\"id\", \"set\"}]}")
        ->required()
        ->check(CLI::ExistingFile);
    sweep->add_option("--set", sweep_overrides, "override a field of the base config");
    sweep->add_option("-o,--out", sweep_out, "CSV path (default: stdout)");

    ConfigArgs gen_args;
    std::vector<std::string> gen_members;
    std::string gen_out;
    auto* gen = app.add_subcommand("gen-queries", "dump one sampler batch with a JSON sidecar");
    add_config_options(gen, gen_args);
    gen->add_option("-m,--member", gen_members, "population member NRM1 files (default: fresh Glorot population)");
    gen->add_option("-o,--out", gen_out, "output path of the f32 batch")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train) return cmd_train_blackbox(train_args, train_out);
        if (*recon) return cmd_reconstruct(recon_args, recon_bb, verbose);
        if (*align) return cmd_align(cand, ref, probes, probe_seed, align_out);
        if (*sweep) return cmd_sweep(matrix, sweep_overrides, sweep_out);
        if (*gen) return cmd_gen_queries(gen_args, gen_members, gen_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitError;
    }
    return kExitError;
}
