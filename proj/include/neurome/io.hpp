#pragma once

// NRM1 weight files and query-batch dumps.
//
// NRM1 layout, all little-endian:
//   "NRM1"                magic
//   u32 L                 number of layer widths
//   u32 widths[L]
//   u8  activation        0 = LeakyReLU, 1 = ReLU, 2 = TanH
//   f32 leak slope
//   for each of the L-1 weight layers:
//     f32 weights[fan_in * fan_out]   row-major, fan-in major
//     f32 bias[fan_out]

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "neurome/error.hpp"
#include "neurome/mlp.hpp"
#include "neurome/oracle.hpp"
#include "neurome/sampling.hpp"

namespace neurome {

inline constexpr std::array<char, 4> kNrmMagic = {'N', 'R', 'M', '1'};

namespace detail {

class ByteWriter {
public:
    void u8(std::uint8_t v) { bytes_.push_back(v); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<unsigned char>(v >> (8 * i)));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void raw(std::span<const char> s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
    const std::vector<unsigned char>& bytes() const noexcept { return bytes_; }

private:
    std::vector<unsigned char> bytes_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const unsigned char> bytes) : bytes_(bytes) {}

    std::uint8_t u8() {
        need(1, "u8");
        return bytes_[pos_++];
    }
    std::uint32_t u32() {
        need(4, "u32");
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t{bytes_[pos_ + i]} << (8 * i);
        pos_ += 4;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    std::size_t offset() const noexcept { return pos_; }
    std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

private:
    void need(std::size_t n, const char* what) const {
        if (pos_ + n > bytes_.size()) throw MalformedFile(std::string("truncated while reading ") + what, pos_);
    }
    std::span<const unsigned char> bytes_;
    std::size_t pos_ = 0;
};

inline void write_file_bytes(const std::filesystem::path& path, std::span<const unsigned char> bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + path.string());
}

}  // namespace detail

inline std::vector<unsigned char> encode_nrm1(const MlpParams& params) {
    detail::ByteWriter w;
    w.raw(kNrmMagic);
    const auto& widths = params.spec.widths();
    w.u32(static_cast<std::uint32_t>(widths.size()));
    for (int x : widths) w.u32(static_cast<std::uint32_t>(x));
    w.u8(static_cast<std::uint8_t>(params.spec.activation()));
    w.f32(params.spec.leak_slope());
    for (std::size_t l = 0; l < params.layer_count(); ++l) {
        for (float x : as_span(params.weights[l])) w.f32(x);
        for (float x : as_span(params.biases[l])) w.f32(x);
    }
    return w.bytes();
}

inline MlpParams decode_nrm1(std::span<const unsigned char> bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kNrmMagic.data(), 4) != 0) {
        throw MalformedFile("missing NRM1 magic", 0);
    }
    detail::ByteReader r(bytes.subspan(4));
    const std::uint32_t count = r.u32();
    if (count < 2 || count > 4096) throw MalformedFile("implausible layer count " + std::to_string(count), 4);
    std::vector<int> widths;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::size_t at = 4 + r.offset();
        const std::uint32_t w = r.u32();
        if (w == 0 || w > (1u << 24)) throw MalformedFile("invalid layer width", at);
        widths.push_back(static_cast<int>(w));
    }
    const std::size_t act_at = 4 + r.offset();
    const std::uint8_t code = r.u8();
    if (code > 2) throw MalformedFile("unknown activation code " + std::to_string(code), act_at);
    const float slope = r.f32();
    MlpParams p(MlpSpec(std::move(widths), static_cast<Activation>(code), slope));
    for (std::size_t l = 0; l < p.layer_count(); ++l) {
        for (float& x : as_span(p.weights[l])) x = r.f32();
        for (float& x : as_span(p.biases[l])) x = r.f32();
    }
    if (r.remaining() != 0) throw MalformedFile("trailing bytes after parameters", 4 + r.offset());
    return p;
}

inline void write_nrm1(const std::filesystem::path& path, const MlpParams& params) {
    detail::write_file_bytes(path, encode_nrm1(params));
}

inline MlpParams read_nrm1(const std::filesystem::path& path) { return decode_nrm1(detail::read_file_bytes(path)); }

/// Persists and restores black boxes. Writing needs the hidden parameters, so
/// this class holds one of the two sealed-access keys.
class OracleArchive {
public:
    static void save(const std::filesystem::path& path, const QueryOracle& oracle) {
        write_nrm1(path, oracle.unseal(SealedAccess{}));
    }
    static std::vector<unsigned char> encode(const QueryOracle& oracle) {
        return encode_nrm1(oracle.unseal(SealedAccess{}));
    }
    static QueryOracle load(const std::filesystem::path& path, BlackboxProvenance provenance = {}) {
        return QueryOracle(read_nrm1(path), provenance);
    }
};

/// Writes the batch as flat little-endian f32 (row-major) plus a JSON sidecar
/// describing shape, provenance and seed.
inline void dump_query_batch(const std::filesystem::path& bin_path, const QueryBatch& batch) {
    detail::ByteWriter w;
    for (float x : as_span(batch.inputs)) w.f32(x);
    detail::write_file_bytes(bin_path, w.bytes());
    nlohmann::json side = {
        {"shape", {batch.inputs.rows(), batch.inputs.cols()}},
        {"dtype", "f32le"},
        {"provenance", to_string(batch.provenance)},
        {"seed", batch.seed},
    };
    if (!batch.loss_trace.empty()) {
        side["disagreement_loss_start"] = batch.loss_trace.front();
        side["disagreement_loss_end"] = batch.loss_trace.back();
    }
    std::filesystem::path json_path = bin_path;
    json_path += ".json";
    std::ofstream out(json_path);
    if (!out) throw IoError("cannot write " + json_path.string());
    out << side.dump(2) << '\n';
}

inline QueryBatch load_query_batch(const std::filesystem::path& bin_path) {
    std::filesystem::path json_path = bin_path;
    json_path += ".json";
    std::ifstream in(json_path);
    if (!in) throw IoError("cannot open " + json_path.string());
    const nlohmann::json side = nlohmann::json::parse(in);
    QueryBatch b;
    const auto rows = side.at("shape").at(0).get<Eigen::Index>();
    const auto cols = side.at("shape").at(1).get<Eigen::Index>();
    b.provenance = sampler_from_string(side.at("provenance").get<std::string>());
    b.seed = side.at("seed").get<std::uint64_t>();
    const auto bytes = detail::read_file_bytes(bin_path);
    if (bytes.size() != static_cast<std::size_t>(rows * cols) * 4) {
        throw MalformedFile("batch payload size does not match its sidecar shape", bytes.size());
    }
    detail::ByteReader r(bytes);
    b.inputs.resize(rows, cols);
    for (float& x : as_span(b.inputs)) x = r.f32();
    return b;
}

}  // namespace neurome
