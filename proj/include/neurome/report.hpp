#pragma once

// JSON and CSV serialisation of run reports, alignment reports and sweeps.
// Field names and CSV columns are part of the on-disk format; see README.

#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "neurome/align.hpp"
#include "neurome/error.hpp"
#include "neurome/reconstruct.hpp"

namespace neurome {

using nlohmann::json;

namespace detail {

// Non-finite values become null rather than invalid JSON.
inline json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace detail

inline json to_json(const IterationRecord& r) {
    return {{"iteration", r.iteration},
            {"min_loss", detail::finite_or_null(r.min_loss)},
            {"mean_loss", detail::finite_or_null(r.mean_loss)},
            {"learning_rate", r.learning_rate},
            {"query_count", r.query_count},
            {"dataset_size", r.dataset_size},
            {"agreement_pairs", r.agreement_pairs},
            {"min_pair_difference", detail::finite_or_null(r.min_pair_difference)},
            {"status", to_string(r.status)},
            {"committee_loss_start", r.committee_loss_start},
            {"committee_loss_end", r.committee_loss_end}};
}

inline json to_json(const ConvergenceStatus& s) {
    return {{"kind", to_string(s.kind)},
            {"agreement_pairs", s.agreement_pairs},
            {"min_pair_difference", detail::finite_or_null(s.min_pair_difference)},
            {"min_loss", detail::finite_or_null(s.min_loss)},
            {"evidence", s.evidence}};
}

inline json to_json(const RunReport& r) {
    json iters = json::array();
    for (const auto& it : r.iterations) iters.push_back(to_json(it));
    json losses = json::array();
    for (double l : r.member_losses) losses.push_back(detail::finite_or_null(l));
    return {{"status", to_string(r.final_status.kind)},
            {"final_status", to_json(r.final_status)},
            {"converged_at", r.converged_at ? json(*r.converged_at) : json(nullptr)},
            {"best_member", r.best_member},
            {"best_loss", detail::finite_or_null(r.best_loss)},
            {"member_losses", losses},
            {"samples", r.samples},
            {"reinitialisations", r.reinitialisations},
            {"committee_retries", r.committee_retries},
            {"seed", r.seed},
            {"iterations", iters}};
}

inline json to_json(const AlignmentReport& a) {
    return {{"max_eps", a.max_eps},
            {"max_eps_pct", a.max_eps_pct},
            {"reference_mean_abs", a.reference_mean_abs},
            {"mean_eps_per_matrix", a.mean_eps_per_matrix},
            {"mean_eps_per_bias", a.mean_eps_per_bias},
            {"l2_total", a.l2_total},
            {"agreement_rate", a.agreement_rate},
            {"probe_count", a.probe_count},
            {"permutations", a.permutations},
            {"magnitude_basis", a.magnitude_basis}};
}

/// One row of a sweep CSV.
struct SweepRow {
    std::string config_id;
    std::uint64_t samples = 0;
    double max_eps = 0.0;
    double max_eps_pct = 0.0;
    std::vector<double> mean_eps_per_matrix;
    std::string status;

    bool operator==(const SweepRow&) const = default;
};

inline constexpr const char* kSweepHeader = "config_id,samples,max_eps,max_eps_pct,mean_eps_per_matrix,status";

namespace detail {

// Shortest representation that parses back to the same double.
inline std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
        throw InvalidArgument("bad number in CSV: '" + s + "'");
    return v;
}

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace detail

/// Per-matrix means are joined with ';' so a row stays six columns.
inline std::string format_sweep_row(const SweepRow& r) {
    if (r.config_id.find_first_of(",\n\r\"") != std::string::npos) {
        throw InvalidArgument("config id may not contain commas, quotes or newlines: " + r.config_id);
    }
    std::string means;
    for (std::size_t i = 0; i < r.mean_eps_per_matrix.size(); ++i) {
        if (i) means += ';';
        means += detail::format_double(r.mean_eps_per_matrix[i]);
    }
    return r.config_id + ',' + std::to_string(r.samples) + ',' + detail::format_double(r.max_eps) + ',' +
           detail::format_double(r.max_eps_pct) + ',' + means + ',' + r.status;
}

inline SweepRow parse_sweep_row(const std::string& line) {
    const auto f = detail::split(line, ',');
    if (f.size() != 6) throw InvalidArgument("sweep row needs 6 fields: " + line);
    SweepRow r;
    r.config_id = f[0];
    try {
        std::size_t used = 0;
        r.samples = std::stoull(f[1], &used);
        if (used != f[1].size()) throw InvalidArgument("");
    } catch (const std::exception&) {
        throw InvalidArgument("bad sample count in CSV: '" + f[1] + "'");
    }
    r.max_eps = detail::parse_double(f[2]);
    r.max_eps_pct = detail::parse_double(f[3]);
    if (!f[4].empty()) {
        for (const auto& m : detail::split(f[4], ';')) r.mean_eps_per_matrix.push_back(detail::parse_double(m));
    }
    r.status = f[5];
    return r;
}

inline void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
    out << kSweepHeader << '\n';
    for (const auto& r : rows) out << format_sweep_row(r) << '\n';
}

inline std::vector<SweepRow> read_sweep_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != kSweepHeader) throw InvalidArgument("missing sweep CSV header");
    std::vector<SweepRow> rows;
    while (std::getline(in, line)) {
        if (!line.empty()) rows.push_back(parse_sweep_row(line));
    }
    return rows;
}

}  // namespace neurome
