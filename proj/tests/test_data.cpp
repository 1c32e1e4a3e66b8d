#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "support.hpp"

namespace neurome {
namespace {

std::vector<unsigned char> be32(std::uint32_t v) {
    return {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
            static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
}

std::vector<unsigned char> idx_images(std::uint32_t n, std::uint32_t rows, std::uint32_t cols,
                                      const std::vector<unsigned char>& pixels) {
    std::vector<unsigned char> out;
    for (std::uint32_t v : {kIdxImagesMagic, n, rows, cols}) {
        const auto b = be32(v);
        out.insert(out.end(), b.begin(), b.end());
    }
    out.insert(out.end(), pixels.begin(), pixels.end());
    return out;
}

TEST(Idx, TwoImagesOfTwoByTwo) {
    const auto bytes = idx_images(2, 2, 2, {0, 255, 51, 102, 255, 0, 0, 255});
    const IdxContents c = parse_idx(bytes);
    ASSERT_EQ(c.images.rows(), 2);
    ASSERT_EQ(c.images.cols(), 4);
    EXPECT_FLOAT_EQ(c.images(0, 1), 1.0f);
    EXPECT_FLOAT_EQ(c.images(0, 2), 0.2f);
    EXPECT_FLOAT_EQ(c.images(1, 3), 1.0f);
    EXPECT_GE(c.images.minCoeff(), 0.0f);
    EXPECT_LE(c.images.maxCoeff(), 1.0f);
}

TEST(Idx, Labels) {
    std::vector<unsigned char> bytes = be32(kIdxLabelsMagic);
    const auto n = be32(3);
    bytes.insert(bytes.end(), n.begin(), n.end());
    bytes.insert(bytes.end(), {7, 0, 9});
    EXPECT_EQ(parse_idx(bytes).labels, (std::vector<int>{7, 0, 9}));
}

TEST(Idx, TruncatedFileReportsOffset) {
    auto bytes = idx_images(2, 2, 2, {1, 2, 3, 4, 5, 6, 7});
    try {
        parse_idx(bytes);
        FAIL() << "expected MalformedFile";
    } catch (const MalformedFile& e) {
        EXPECT_EQ(e.offset(), bytes.size());
    }
    bytes.resize(6);
    EXPECT_THROW(parse_idx(bytes), MalformedFile);
}

TEST(Idx, TrailingBytesAndUnknownMagic) {
    EXPECT_THROW(parse_idx(idx_images(1, 1, 1, {1, 2})), MalformedFile);
    auto bytes = idx_images(1, 1, 1, {1});
    bytes[3] = 0x0d;
    EXPECT_THROW(parse_idx(bytes), UnsupportedMagic);
}

TEST(Idx, LoadsImageAndLabelFiles) {
    const auto dir = std::filesystem::temp_directory_path() / "neurome_idx_test";
    std::filesystem::create_directories(dir);
    const auto img = idx_images(3, 1, 2, {0, 255, 255, 0, 128, 128});
    std::ofstream(dir / "img", std::ios::binary).write(reinterpret_cast<const char*>(img.data()), img.size());
    std::vector<unsigned char> lab = be32(kIdxLabelsMagic);
    const auto n = be32(3);
    lab.insert(lab.end(), n.begin(), n.end());
    lab.insert(lab.end(), {1, 0, 1});
    std::ofstream(dir / "lab", std::ios::binary).write(reinterpret_cast<const char*>(lab.data()), lab.size());

    const Dataset d = load_idx(dir / "img", dir / "lab");
    EXPECT_EQ(d.size(), 3);
    EXPECT_EQ(d.input_dim(), 2);
    EXPECT_EQ(d.labels, (std::vector<int>{1, 0, 1}));
    EXPECT_THROW(load_idx(dir / "lab"), UnsupportedMagic);
    EXPECT_THROW(load_idx(dir / "missing"), IoError);
    std::filesystem::remove_all(dir);
}

TEST(Normalize, TwoPointExample) {
    Dataset d;
    d.inputs.resize(2, 1);
    d.inputs << -1.0f, 1.0f;
    const Dataset n = normalize(d);
    EXPECT_FLOAT_EQ(n.inputs(0, 0), -0.5f);
    EXPECT_FLOAT_EQ(n.inputs(1, 0), 0.5f);
    EXPECT_TRUE(n.normalization.applied);
}

TEST(Normalize, DegenerateInputs) {
    Dataset d;
    d.inputs = Matrix::Constant(5, 3, 2.0f);
    EXPECT_THROW(normalize(d), DegenerateData);
    EXPECT_THROW(normalize(d, NormalizationMode::PerFeature), DegenerateData);
    d.inputs = Matrix::Ones(1, 3);
    EXPECT_THROW(normalize(d), DegenerateData);
}

TEST(Normalize, GlobalStatisticsAndIdempotence) {
    Dataset d = synth_dataset(8, 3, 500, 4);
    d.inputs.array() = d.inputs.array() * 3.0f + 2.0f;
    const Dataset n = normalize(d);
    const auto x = n.inputs.cast<double>();
    const double mean = x.mean();
    const double sd = std::sqrt((x.array() - mean).square().mean());
    EXPECT_NEAR(mean, 0.0, 1e-2);
    EXPECT_NEAR(sd, 0.5, 1e-2);
    EXPECT_LE((normalize(n).inputs - n.inputs).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Normalize, PerFeatureKeepsConstantColumnsUnscaled) {
    Dataset d;
    d.inputs.resize(3, 2);
    d.inputs << 1.0f, 4.0f, 2.0f, 4.0f, 3.0f, 4.0f;
    const Dataset n = normalize(d, NormalizationMode::PerFeature);
    EXPECT_FLOAT_EQ(n.inputs(0, 1), 0.0f);
    const auto c = n.inputs.col(0).cast<double>();
    EXPECT_NEAR(std::sqrt(c.array().square().mean()), 0.5, 1e-6);
}

TEST(Normalize, AppliesStoredTransformToNewRows) {
    const Dataset d = synth_dataset(4, 2, 100, 8);
    const Dataset n = normalize(d);
    const Matrix again = apply_normalization(d.inputs, n.normalization);
    EXPECT_LE((again - n.inputs).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Synth, DeterministicPerSeed) {
    const Dataset a = synth_dataset(6, 4, 100, 11);
    const Dataset b = synth_dataset(6, 4, 100, 11);
    EXPECT_EQ(a.inputs, b.inputs);
    EXPECT_EQ(a.labels, b.labels);
    EXPECT_EQ(a.checksum(), b.checksum());
    EXPECT_NE(a.checksum(), synth_dataset(6, 4, 100, 12).checksum());
    EXPECT_EQ(a.class_count(), 4);
    EXPECT_THROW(synth_dataset(0, 4, 100, 1), InvalidArgument);
}

}  // namespace
}  // namespace neurome
