#include <gtest/gtest.h>

#include "support.hpp"

namespace neurome {
namespace {

using testing::random_matrix;
using testing::random_net;

TEST(MlpSpec, RejectsInvalidShapes) {
    EXPECT_THROW(MlpSpec({4}, Activation::ReLU), InvalidSpec);
    EXPECT_THROW(MlpSpec({4, 0, 2}, Activation::ReLU), InvalidSpec);
    const MlpSpec s({784, 128, 10}, Activation::LeakyReLU);
    EXPECT_EQ(s.input_dim(), 784);
    EXPECT_EQ(s.output_dim(), 10);
    EXPECT_EQ(s.layer_count(), 2u);
    EXPECT_EQ(s.parameter_count(), 784u * 128 + 128 + 128 * 10 + 10);
}

TEST(MlpSpec, ActivationNamesRoundTrip) {
    for (Activation a : {Activation::LeakyReLU, Activation::ReLU, Activation::TanH}) {
        EXPECT_EQ(activation_from_string(to_string(a)), a);
    }
    EXPECT_THROW(activation_from_string("sigmoid"), InvalidArgument);
}

TEST(Glorot, SigmaMatchesFormula) {
    EXPECT_NEAR(glorot_sigma(784, 128), 0.046829, 1e-6);
    EXPECT_DOUBLE_EQ(glorot_sigma(1, 1), 1.0);
}

TEST(Glorot, SameSeedIsBitIdentical) {
    const MlpSpec s({16, 12, 4}, Activation::LeakyReLU);
    EXPECT_EQ(init_glorot(s, 7), init_glorot(s, 7));
    EXPECT_NE(init_glorot(s, 7).checksum(), init_glorot(s, 8).checksum());
}

TEST(Glorot, EmpiricalStdMatchesSigma) {
    const MlpParams p = init_glorot(MlpSpec({784, 128, 10}, Activation::ReLU), 3);
    const auto& w = p.weights[0];
    const double mean = w.cast<double>().mean();
    const double sd = std::sqrt((w.cast<double>().array() - mean).square().mean());
    EXPECT_NEAR(sd, glorot_sigma(784, 128), 0.02 * glorot_sigma(784, 128));
    EXPECT_NEAR(mean, 0.0, 1e-3);
}

TEST(Forward, IdentityNetOnNonnegativeInputs) {
    MlpParams p(MlpSpec({3, 3, 3}, Activation::LeakyReLU));
    p.weights[0] = Matrix::Identity(3, 3);
    p.weights[1] = Matrix::Identity(3, 3);
    p.biases[0].setZero();
    p.biases[1].setZero();
    Matrix x(2, 3);
    x << 0.0f, 1.5f, 2.0f, 3.0f, 0.25f, 0.0f;
    EXPECT_EQ(forward(p, x), x);
}

TEST(Forward, HandComputedChain) {
    MlpParams p(MlpSpec({3, 2, 2}, Activation::LeakyReLU));
    p.weights[0] << 1.0f, -1.0f, 0.5f, 2.0f, -2.0f, 0.0f;
    p.biases[0] << 0.1f, -0.2f;
    p.weights[1] << 1.0f, 2.0f, -3.0f, 0.5f;
    p.biases[1] << 0.0f, 1.0f;
    Matrix x(1, 3);
    x << 1.0f, 2.0f, 3.0f;
    // z1 = [1 + 1 - 6 + 0.1, -1 + 4 + 0 - 0.2] = [-3.9, 2.8]; h = [-0.039, 2.8]
    // y = [-0.039 - 8.4, -0.078 + 1.4 + 1] = [-8.439, 2.322]
    const Matrix y = forward(p, x);
    EXPECT_NEAR(y(0, 0), -8.439f, 1e-5);
    EXPECT_NEAR(y(0, 1), 2.322f, 1e-5);
}

TEST(Forward, ShapeMismatchOnWrongWidth) {
    const MlpParams p = random_net({4, 3, 2}, Activation::ReLU, 1);
    EXPECT_THROW(forward(p, Matrix::Zero(2, 5)), ShapeMismatch);
}

TEST(Forward, TanhIsOddWithZeroBiases) {
    MlpParams p = random_net({4, 5, 3}, Activation::TanH, 2);
    for (auto& b : p.biases) b.setZero();
    const Matrix x = random_matrix(6, 4, 9);
    const Matrix y = forward(p, x);
    const Matrix ym = forward(p, -x);
    EXPECT_LE(((y + ym).cwiseAbs().maxCoeff()), 1e-6);

    // Flipping every first-layer column and the matching rows is an isomorphism.
    MlpParams flipped = p;
    flipped.weights[0] = -flipped.weights[0];
    flipped.weights[1] = -flipped.weights[1];
    EXPECT_LE(testing::relative_difference(forward(flipped, x), y), 1e-6);
}

TEST(Forward, PositiveHomogeneityForPiecewiseLinear) {
    for (Activation a : {Activation::LeakyReLU, Activation::ReLU}) {
        const MlpParams p = random_net({5, 4, 3}, a, 11);
        MlpParams q = p;
        const float alpha = 3.7f;
        q.weights[0].col(2) *= alpha;
        q.biases[0](2) *= alpha;
        q.weights[1].row(2) /= alpha;
        const Matrix x = random_matrix(20, 5, 12);
        EXPECT_LE(testing::relative_difference(forward(q, x), forward(p, x)), 1e-5);
    }
}

TEST(Forward, PermutingHiddenNeuronsPreservesOutput) {
    const MlpParams p = random_net({5, 4, 3}, Activation::LeakyReLU, 13);
    MlpParams q = p;
    const std::vector<int> perm = {2, 0, 3, 1};
    for (int k = 0; k < 4; ++k) {
        q.weights[0].col(k) = p.weights[0].col(perm[k]);
        q.biases[0](k) = p.biases[0](perm[k]);
        q.weights[1].row(k) = p.weights[1].row(perm[k]);
    }
    const Matrix x = random_matrix(20, 5, 14);
    EXPECT_LE(testing::relative_difference(forward(q, x), forward(p, x)), 1e-6);
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
    const MlpParams p = random_net({4, 3, 2}, Activation::TanH, 3);
    const Matrix x = random_matrix(5, 4, 4);
    const GradBundle g = backward(p, x, Matrix::Zero(5, 2));
    for (const auto& w : g.d_weights) EXPECT_EQ(w.cwiseAbs().maxCoeff(), 0.0f);
    for (const auto& b : g.d_biases) EXPECT_EQ(b.cwiseAbs().maxCoeff(), 0.0f);
    EXPECT_EQ(g.d_inputs.cwiseAbs().maxCoeff(), 0.0f);
}

TEST(Backward, LinearNetInputGradientIsUpstreamTimesWeightTranspose) {
    const MlpParams p = random_net({4, 3}, Activation::ReLU, 5);
    const Matrix x = random_matrix(6, 4, 6);
    const Matrix up = random_matrix(6, 3, 7);
    const GradBundle g = backward(p, x, up);
    const Matrix expected = up * p.weights[0].transpose();
    EXPECT_LE((g.d_inputs - expected).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Backward, ShapeMismatchOnBadUpstream) {
    const MlpParams p = random_net({4, 3, 2}, Activation::ReLU, 3);
    EXPECT_THROW(backward(p, random_matrix(5, 4, 1), Matrix::Zero(5, 3)), ShapeMismatch);
}

TEST(Backward, LeakyDerivativeAtZeroIsOne) {
    MlpParams p(MlpSpec({1, 1, 1}, Activation::LeakyReLU));
    p.weights[0](0, 0) = 1.0f;
    p.weights[1](0, 0) = 1.0f;
    p.biases[0].setZero();
    p.biases[1].setZero();
    Matrix x(1, 1);
    x(0, 0) = 0.0f;
    Matrix up(1, 1);
    up(0, 0) = 1.0f;
    EXPECT_EQ(backward(p, x, up).d_inputs(0, 0), 1.0f);
    x(0, 0) = -1.0f;
    EXPECT_NEAR(backward(p, x, up).d_inputs(0, 0), kDefaultLeakSlope, 1e-9);
}

// Parameter gradient check on the 4x3x2 TanH net, h = 1e-3, rel. error 1e-3.
TEST(Backward, TanhParameterGradientsMatchFiniteDifferences) {
    MlpParams p = random_net({4, 3, 2}, Activation::TanH, 21);
    const Matrix x = random_matrix(5, 4, 22);
    const Matrix up = random_matrix(5, 2, 23);
    const GradBundle g = backward(p, x, up);
    const auto f = [&] { return testing::weighted_output(p, x, up); };
    for (std::size_t l = 0; l < p.layer_count(); ++l) {
        for (Eigen::Index i = 0; i < p.weights[l].size(); ++i) {
            const double fd = testing::central_difference(p.weights[l].data()[i], 1e-3, f);
            const double an = g.d_weights[l].data()[i];
            EXPECT_LE(std::abs(fd - an), 1e-3 * std::max(1.0, std::abs(fd))) << "layer " << l << " weight " << i;
        }
        for (Eigen::Index i = 0; i < p.biases[l].size(); ++i) {
            const double fd = testing::central_difference(p.biases[l](i), 1e-3, f);
            EXPECT_LE(std::abs(fd - g.d_biases[l](i)), 1e-3 * std::max(1.0, std::abs(fd)));
        }
    }
}

TEST(L1Loss, ExamplesAndSignConvention) {
    Matrix a(1, 2), t(1, 2);
    a << 1.0f, -1.0f;
    t << 0.0f, 0.0f;
    EXPECT_DOUBLE_EQ(l1_output_loss(a, a).loss, 0.0);
    const LossAndGrad lg = l1_output_loss(a, t);
    EXPECT_DOUBLE_EQ(lg.loss, 1.0);
    EXPECT_FLOAT_EQ(lg.grad(0, 0), 0.5f);
    EXPECT_FLOAT_EQ(lg.grad(0, 1), -0.5f);
    EXPECT_EQ(l1_output_loss(t, t).grad.cwiseAbs().maxCoeff(), 0.0f);
    EXPECT_THROW(l1_output_loss(a, Matrix::Zero(2, 2)), ShapeMismatch);
}

TEST(L1Loss, GradientMatchesFiniteDifferencesAwayFromTies) {
    Matrix pred = random_matrix(4, 3, 31);
    const Matrix target = random_matrix(4, 3, 32);
    const LossAndGrad lg = l1_output_loss(pred, target);
    for (Eigen::Index i = 0; i < pred.size(); ++i) {
        ASSERT_GT(std::abs(pred.data()[i] - target.data()[i]), 1e-2);
        const double fd = testing::central_difference(pred.data()[i], 1e-3, [&] { return l1_error(pred, target); });
        EXPECT_NEAR(fd, lg.grad.data()[i], 1e-4);
    }
}

}  // namespace
}  // namespace neurome
