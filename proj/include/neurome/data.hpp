#pragma once

// Datasets for black-box training: IDX ingestion, synthetic class clusters,
// and rescaling to mean 0 / standard deviation 0.5.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "neurome/error.hpp"
#include "neurome/tensor.hpp"

namespace neurome {

inline constexpr double kTargetMean = 0.0;
inline constexpr double kTargetStd = 0.5;

enum class NormalizationMode : std::uint8_t { Global, PerFeature };

inline std::string to_string(NormalizationMode m) { return m == NormalizationMode::Global ? "global" : "per_feature"; }

inline NormalizationMode normalization_from_string(const std::string& s) {
    if (s == "global") return NormalizationMode::Global;
    if (s == "per_feature") return NormalizationMode::PerFeature;
    throw InvalidArgument("unknown normalization mode '" + s + "'");
}

/// The affine map last applied: x' = (x - shift) * scale, one entry per feature
/// (all entries equal in global mode).
struct NormalizationInfo {
    bool applied = false;
    NormalizationMode mode = NormalizationMode::Global;
    std::vector<double> shift;
    std::vector<double> scale;
};

struct Dataset {
    Matrix inputs;
    std::vector<int> labels;  // empty when unlabeled
    NormalizationInfo normalization;

    Eigen::Index size() const noexcept { return inputs.rows(); }
    Eigen::Index input_dim() const noexcept { return inputs.cols(); }
    bool labeled() const noexcept { return !labels.empty(); }

    int class_count() const {
        int m = -1;
        for (int l : labels) m = std::max(m, l);
        return m + 1;
    }

    std::uint64_t checksum() const {
        Checksum c;
        c.add(as_span(inputs));
        c.add(std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(labels.data()),
                                             labels.size() * sizeof(int)));
        return c.value();
    }
};

/// Rescales inputs to mean 0 and standard deviation 0.5.
inline Dataset normalize(Dataset data, NormalizationMode mode = NormalizationMode::Global) {
    const Eigen::Index n = data.inputs.rows(), dim = data.inputs.cols();
    if (n < 2) throw DegenerateData("need at least two samples to normalize");
    if (dim == 0) throw DegenerateData("dataset has no features");

    NormalizationInfo info;
    info.applied = true;
    info.mode = mode;
    info.shift.assign(dim, 0.0);
    info.scale.assign(dim, 1.0);

    if (mode == NormalizationMode::Global) {
        double sum = 0.0;
        for (float x : as_span(data.inputs)) sum += x;
        const double mean = sum / static_cast<double>(data.inputs.size());
        double sq = 0.0;
        for (float x : as_span(data.inputs)) sq += (x - mean) * (x - mean);
        const double sd = std::sqrt(sq / static_cast<double>(data.inputs.size()));
        if (!(sd > 0.0)) throw DegenerateData("input variance is zero");
        info.shift.assign(dim, mean);
        info.scale.assign(dim, kTargetStd / sd);
    } else {
        bool any = false;
        for (Eigen::Index j = 0; j < dim; ++j) {
            double sum = 0.0;
            for (Eigen::Index i = 0; i < n; ++i) sum += data.inputs(i, j);
            const double mean = sum / static_cast<double>(n);
            double sq = 0.0;
            for (Eigen::Index i = 0; i < n; ++i) sq += (data.inputs(i, j) - mean) * (data.inputs(i, j) - mean);
            const double sd = std::sqrt(sq / static_cast<double>(n));
            info.shift[j] = mean;
            // Constant features are centred but left unscaled.
            info.scale[j] = sd > 0.0 ? kTargetStd / sd : 1.0;
            any = any || sd > 0.0;
        }
        if (!any) throw DegenerateData("input variance is zero");
    }

    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < dim; ++j) {
            data.inputs(i, j) = static_cast<float>((data.inputs(i, j) - info.shift[j]) * info.scale[j]);
        }
    }
    data.normalization = std::move(info);
    return data;
}

/// Applies a previously fitted normalization to new rows of the same source.
inline Matrix apply_normalization(Matrix inputs, const NormalizationInfo& info) {
    if (!info.applied) return inputs;
    require_shape(static_cast<std::size_t>(inputs.cols()) == info.shift.size(), "normalization width mismatch");
    for (Eigen::Index i = 0; i < inputs.rows(); ++i) {
        for (Eigen::Index j = 0; j < inputs.cols(); ++j) {
            inputs(i, j) = static_cast<float>((inputs(i, j) - info.shift[j]) * info.scale[j]);
        }
    }
    return inputs;
}

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

namespace detail {

inline std::uint32_t read_be32(std::span<const unsigned char> bytes, std::size_t offset) {
    if (offset + 4 > bytes.size()) throw MalformedFile("truncated header", bytes.size());
    return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
           (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

/// Decoded IDX payload: either images (rows = items, one column per pixel,
/// scaled to [0,1]) or labels.
struct IdxContents {
    std::uint32_t magic = 0;
    std::vector<std::uint32_t> dims;
    Matrix images;
    std::vector<int> labels;
};

inline IdxContents parse_idx(std::span<const unsigned char> bytes) {
    IdxContents out;
    out.magic = detail::read_be32(bytes, 0);
    std::size_t ndims = 0;
    if (out.magic == kIdxImagesMagic) {
        ndims = 3;
    } else if (out.magic == kIdxLabelsMagic) {
        ndims = 1;
    } else {
        throw UnsupportedMagic("IDX magic 0x" + [&] {
            char buf[9];
            std::snprintf(buf, sizeof buf, "%08x", out.magic);
            return std::string(buf);
        }());
    }
    std::uint64_t items = 1;
    for (std::size_t d = 0; d < ndims; ++d) {
        out.dims.push_back(detail::read_be32(bytes, 4 + 4 * d));
        items *= out.dims.back();
    }
    const std::size_t header = 4 + 4 * ndims;
    if (bytes.size() < header + items) {
        throw MalformedFile("payload holds " + std::to_string(bytes.size() - header) + " bytes, header promises " +
                                std::to_string(items),
                            bytes.size());
    }
    if (bytes.size() > header + items) throw MalformedFile("trailing bytes after payload", header + items);

    if (out.magic == kIdxImagesMagic) {
        const auto n = static_cast<Eigen::Index>(out.dims[0]);
        const auto dim = static_cast<Eigen::Index>(out.dims[1]) * out.dims[2];
        out.images.resize(n, dim);
        for (Eigen::Index i = 0; i < out.images.size(); ++i) {
            out.images.data()[i] = static_cast<float>(bytes[header + i]) / 255.0f;
        }
    } else {
        out.labels.assign(bytes.begin() + header, bytes.begin() + header + items);
    }
    return out;
}

/// Loads an IDX image file into an unlabeled dataset.
inline Dataset load_idx(const std::filesystem::path& path) {
    const auto bytes = detail::read_file_bytes(path);
    IdxContents c = parse_idx(bytes);
    if (c.magic != kIdxImagesMagic) throw UnsupportedMagic(path.string() + " is a label file, expected images");
    Dataset d;
    d.inputs = std::move(c.images);
    return d;
}

inline std::vector<int> load_idx_labels(const std::filesystem::path& path) {
    const auto bytes = detail::read_file_bytes(path);
    IdxContents c = parse_idx(bytes);
    if (c.magic != kIdxLabelsMagic) throw UnsupportedMagic(path.string() + " is an image file, expected labels");
    return std::move(c.labels);
}

inline Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
    Dataset d = load_idx(images);
    d.labels = load_idx_labels(labels);
    if (static_cast<Eigen::Index>(d.labels.size()) != d.size()) {
        throw ShapeMismatch("image and label files disagree on item count");
    }
    return d;
}

/// Gaussian class clusters: each class has a centre drawn from N(0,1) and
/// samples scatter around it with standard deviation 0.5.
inline Dataset synth_dataset(int input_dim, int classes, int count, std::uint64_t seed) {
    if (input_dim <= 0 || classes <= 0 || count <= 0)
        throw InvalidArgument("synth dataset parameters must be positive");
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> unit(0.0f, 1.0f);
    Matrix centres(classes, input_dim);
    for (float& x : as_span(centres)) x = unit(rng);
    std::uniform_int_distribution<int> pick(0, classes - 1);
    Dataset d;
    d.inputs.resize(count, input_dim);
    d.labels.resize(count);
    for (int i = 0; i < count; ++i) {
        const int c = pick(rng);
        d.labels[i] = c;
        for (int j = 0; j < input_dim; ++j) d.inputs(i, j) = centres(c, j) + 0.5f * unit(rng);
    }
    return d;
}

}  // namespace neurome
