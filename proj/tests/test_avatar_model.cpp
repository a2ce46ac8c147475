#include "gsavatar/avatar_model.hpp"
#include "gsavatar/mlp.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <random>

namespace gsavatar {
namespace {

using testing::random_matrix;
using testing::random_vector;

AvatarModel<double> random_model(Index n, Index k, Index h, std::mt19937_64& rng) {
    AvatarModel<double> m;
    m.base = GaussianSet<double>::zeros(n);
    m.base.position = random_matrix(n, 3, rng);
    m.base.rotation = random_matrix(n, 4, rng);
    m.base.scale = random_matrix(n, 3, rng);
    m.base.opacity = random_vector(n, rng);
    m.base.color = random_matrix(n, 3, rng);
    for (Index j = 0; j < k; ++j) m.deltas.push_back({random_matrix(n, 3, rng), random_matrix(n, 4, rng), random_matrix(n, 3, rng)});
    m.mlp = MlpWeights<double>::random(h, 16, k, rng());
    m.bindings.triangle.assign(static_cast<std::size_t>(n), 0);
    m.bindings.barycentric = RowMatX3<double>::Constant(n, 3, 1.0 / 3.0);
    return m;
}

// Straightforward loops, no Eigen products.
VecX<double> mlp_oracle(const MlpWeights<double>& m, const VecX<double>& theta) {
    auto layer = [](const RowMatX<double>& w, const VecX<double>& b, const VecX<double>& x, bool relu) {
        VecX<double> y(w.rows());
        for (Index r = 0; r < w.rows(); ++r) {
            double acc = b[r];
            for (Index c = 0; c < w.cols(); ++c) acc += w(r, c) * x[c];
            y[r] = relu ? std::max(acc, 0.0) : acc;
        }
        return y;
    };
    return layer(m.w3, m.b3, layer(m.w2, m.b2, layer(m.w1, m.b1, theta, true), true), false);
}

TEST(MapParams, ZeroOutputLayerGivesZeroWeights) {
    auto mlp = MlpWeights<double>::random(13, 128, 20, 3);
    mlp.w3.setZero();
    mlp.b3.setZero();
    std::mt19937_64 rng(1);
    EXPECT_TRUE(map_params(mlp, random_vector(13, rng)).isZero(0.0));
}

TEST(MapParams, ZeroInputGivesOutputBias) {
    auto mlp = MlpWeights<double>::zeros(13, 128, 20);
    for (Index i = 0; i < 20; ++i) {
        mlp.w1(i, i % 13) = 1.0;
        mlp.w2(i, i) = 1.0;
        mlp.w3(i, i) = 1.0;
        mlp.b3[i] = 0.1 * static_cast<double>(i) - 0.5;
    }
    EXPECT_EQ(map_params(mlp, VecX<double>::Zero(13).eval()), mlp.b3);
}

TEST(MapParams, MatchesDenseOracle) {
    const auto mlp = MlpWeights<double>::random(13, 128, 20, 42);
    std::mt19937_64 rng(42);
    for (int trial = 0; trial < 20; ++trial) {
        const VecX<double> theta = random_vector(13, rng);
        const VecX<double> psi = map_params(mlp, theta), ref = mlp_oracle(mlp, theta);
        ASSERT_EQ(psi.size(), 20);
        EXPECT_LT((psi - ref).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(MapParams, DimensionMismatchThrows) {
    const auto mlp = MlpWeights<double>::random(13, 8, 4, 1);
    EXPECT_THROW(map_params(mlp, VecX<double>::Zero(12).eval()), ConfigError);
}

TEST(MapParams, LinearEncodingIsExact) {
    std::mt19937_64 rng(5);
    const RowMatX<double> a = random_matrix(4, 13, rng);
    const auto mlp = MlpWeights<double>::linear(a, 128);
    for (int trial = 0; trial < 10; ++trial) {
        const VecX<double> theta = random_vector(13, rng);
        EXPECT_LT((map_params(mlp, theta) - a * theta).cwiseAbs().maxCoeff(), 1e-12);
    }
    const auto slice = MlpWeights<double>::identity_slice(13, 128, 8);
    const VecX<double> theta = random_vector(13, rng);
    EXPECT_LT((map_params(slice, theta) - theta.head(8)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Blend, ZeroWeightsCopyBase) {
    std::mt19937_64 rng(2);
    const auto m = random_model(7, 5, 4, rng);
    EXPECT_TRUE(blend(m, VecX<double>::Zero(5).eval()) == m.base);
}

TEST(Blend, UnitWeightSelectsOneDelta) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        const auto m = random_model(7, 5, 4, rng);
        for (Index k = 0; k < 5; ++k) {
            const auto out = blend(m, VecX<double>::Unit(5, k).eval());
            const auto& d = m.deltas[static_cast<std::size_t>(k)];
            ASSERT_EQ(out.position, (m.base.position + d.position).eval());
            ASSERT_EQ(out.rotation, (m.base.rotation + d.rotation).eval());
            ASSERT_EQ(out.color, (m.base.color + d.color).eval());
            ASSERT_EQ(out.scale, m.base.scale);
            ASSERT_EQ(out.opacity, m.base.opacity);
        }
    }
}

TEST(Blend, MatchesDoubleLoopBitwise) {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 100; ++trial) {
        const auto m = random_model(7, 5, 4, rng);
        const VecX<double> psi = random_vector(5, rng);
        const auto out = blend(m, psi);
        for (Index n = 0; n < 7; ++n) {
            for (int c = 0; c < 3; ++c) {
                double p = m.base.position(n, c), col = m.base.color(n, c);
                for (Index k = 0; k < 5; ++k) {
                    p += psi[k] * m.deltas[k].position(n, c);
                    col += psi[k] * m.deltas[k].color(n, c);
                }
                ASSERT_EQ(out.position(n, c), p);
                ASSERT_EQ(out.color(n, c), col);
            }
            for (int c = 0; c < 4; ++c) {
                double q = m.base.rotation(n, c);
                for (Index k = 0; k < 5; ++k) q += psi[k] * m.deltas[k].rotation(n, c);
                ASSERT_EQ(out.rotation(n, c), q);
            }
        }
    }
}

TEST(Blend, IsAffineInWeights) {
    std::mt19937_64 rng(6);
    const auto m = random_model(9, 4, 4, rng);
    const VecX<double> p1 = random_vector(4, rng), p2 = random_vector(4, rng);
    const double a = 0.7, b = -1.3;
    const auto lhs = blend(m, (a * p1 + b * p2).eval());
    const auto g1 = blend(m, p1), g2 = blend(m, p2);
    const double c = a + b - 1.0;
    EXPECT_LT((lhs.position - (a * g1.position + b * g2.position - c * m.base.position)).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((lhs.rotation - (a * g1.rotation + b * g2.rotation - c * m.base.rotation)).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((lhs.color - (a * g1.color + b * g2.color - c * m.base.color)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Blend, LengthMismatchThrows) {
    std::mt19937_64 rng(7);
    const auto m = random_model(3, 2, 4, rng);
    EXPECT_THROW(blend(m, VecX<double>::Zero(3).eval()), ConfigError);
}

TEST(Activate, Examples) {
    auto raw = GaussianSet<double>::zeros(1);
    raw.rotation.row(0) << 2, 0, 0, 0;
    const auto a = activate(raw);
    EXPECT_EQ(a.opacity[0], 0.5);
    EXPECT_EQ(a.scale(0, 0), 1.0);
    EXPECT_EQ(a.rotation.row(0), Eigen::RowVector4d(1, 0, 0, 0));
    EXPECT_EQ(a.color(0, 2), 0.5);
}

TEST(Activate, ZeroQuaternionNamesIndex) {
    auto raw = GaussianSet<double>::zeros(3);
    raw.rotation.col(0).setOnes();
    raw.rotation.row(2).setZero();
    try {
        activate(raw);
        FAIL() << "expected NumericalError";
    } catch (const NumericalError& e) {
        EXPECT_EQ(e.index(), 2u);
    }
}

TEST(Activate, OutputsSatisfyInvariants) {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 50; ++trial) {
        auto raw = GaussianSet<double>::zeros(20);
        raw.position = random_matrix(20, 3, rng, 5.0);
        raw.rotation = random_matrix(20, 4, rng, 3.0);
        raw.scale = random_matrix(20, 3, rng, 5.0);
        raw.opacity = random_vector(20, rng, 20.0);
        raw.color = random_matrix(20, 3, rng, 20.0);
        const auto a = activate(raw);
        for (Index i = 0; i < 20; ++i) ASSERT_NEAR(a.rotation.row(i).norm(), 1.0, 1e-6);
        EXPECT_GE(a.opacity.minCoeff(), 0.0);
        EXPECT_LE(a.opacity.maxCoeff(), 1.0);
        EXPECT_GE(a.color.minCoeff(), 0.0);
        EXPECT_LE(a.color.maxCoeff(), 1.0);
        EXPECT_GT(a.scale.minCoeff(), 0.0);
        EXPECT_EQ(a.position, raw.position);
    }
}

// Finite-difference helper: scalar loss <G, W> over a GaussianSet.
double weighted_sum(const GaussianSet<double>& g, const GaussianSet<double>& w) {
    return g.position.cwiseProduct(w.position).sum() + g.rotation.cwiseProduct(w.rotation).sum() +
           g.scale.cwiseProduct(w.scale).sum() + g.opacity.cwiseProduct(w.opacity).sum() +
           g.color.cwiseProduct(w.color).sum();
}

GaussianSet<double> random_set(Index n, std::mt19937_64& rng) {
    auto g = GaussianSet<double>::zeros(n);
    g.position = random_matrix(n, 3, rng);
    g.rotation = random_matrix(n, 4, rng);
    g.scale = random_matrix(n, 3, rng);
    g.opacity = random_vector(n, rng);
    g.color = random_matrix(n, 3, rng);
    return g;
}

TEST(BlendBackward, TrivialCases) {
    std::mt19937_64 rng(9);
    auto m = random_model(5, 3, 4, rng);
    const auto grad = random_set(5, rng);
    const auto g0 = blend_backward(m, VecX<double>::Zero(3).eval(), grad);
    for (const auto& d : g0.deltas) EXPECT_TRUE(d.position.isZero(0) && d.rotation.isZero(0) && d.color.isZero(0));
    EXPECT_TRUE(g0.base == grad);

    auto m1 = random_model(5, 1, 4, rng);
    const auto g1 = blend_backward(m1, VecX<double>::Ones(1).eval(), grad);
    EXPECT_EQ(g1.deltas[0].position, grad.position);
    EXPECT_EQ(g1.deltas[0].rotation, grad.rotation);
    EXPECT_EQ(g1.deltas[0].color, grad.color);
}

TEST(BlendBackward, MatchesFiniteDifferences) {
    std::mt19937_64 rng(10);
    for (int trial = 0; trial < 10; ++trial) {
        auto m = random_model(16, 4, 8, rng);
        VecX<double> psi = random_vector(4, rng);
        const auto w = random_set(16, rng);
        const auto g = blend_backward(m, psi, w);
        const double h = 1e-6;
        for (Index k = 0; k < 4; ++k) {
            VecX<double> pp = psi, pm = psi;
            pp[k] += h;
            pm[k] -= h;
            const double fd = (weighted_sum(blend(m, pp), w) - weighted_sum(blend(m, pm), w)) / (2 * h);
            EXPECT_TRUE(testing::gradients_agree(g.psi[k], fd, 1e-5)) << g.psi[k] << " vs " << fd;
        }
        for (Index k = 0; k < 4; ++k) {
            auto& d = m.deltas[static_cast<std::size_t>(k)];
            for (Index i = 0; i < d.rotation.size(); i += 5) {
                double& x = d.rotation.data()[i];
                const double x0 = x;
                x = x0 + h;
                const double fp = weighted_sum(blend(m, psi), w);
                x = x0 - h;
                const double fm = weighted_sum(blend(m, psi), w);
                x = x0;
                EXPECT_TRUE(testing::gradients_agree(g.deltas[k].rotation.data()[i], (fp - fm) / (2 * h), 1e-5));
            }
        }
    }
}

TEST(MlpBackward, TrivialCases) {
    const auto mlp = MlpWeights<double>::random(6, 8, 3, 11);
    std::mt19937_64 rng(11);
    const VecX<double> theta = random_vector(6, rng);
    const auto g = mlp_backward(mlp, theta, VecX<double>::Zero(3).eval());
    EXPECT_TRUE(g.weights.w1.isZero(0) && g.weights.w2.isZero(0) && g.weights.w3.isZero(0));
    EXPECT_TRUE(g.weights.b1.isZero(0) && g.weights.b2.isZero(0) && g.weights.b3.isZero(0));

    // Hidden layers switched off: only the output bias and w3 see a gradient,
    // and w3's is the outer product with the (zero) hidden activation.
    auto dead = mlp;
    dead.b1.setConstant(-100.0);
    dead.b2.setConstant(-100.0);
    const VecX<double> gp = random_vector(3, rng);
    const auto gd = mlp_backward(dead, theta, gp);
    EXPECT_EQ(gd.weights.b3, gp);
    EXPECT_TRUE(gd.weights.w3.isZero(0));
    EXPECT_TRUE(gd.weights.w1.isZero(0));

    // Linear regime: a one-layer path with all ReLUs active gives outer(grad, input).
    auto lin = MlpWeights<double>::zeros(3, 3, 3);
    lin.w1.setIdentity();
    lin.w2.setIdentity();
    lin.b1.setConstant(10.0);
    lin.b2.setConstant(0.0);
    const VecX<double> x(Eigen::Vector3d(0.3, -0.2, 0.5));
    const auto gl = mlp_backward(lin, x, gp);
    const VecX<double> act2 = (x.array() + 10.0).matrix();
    EXPECT_LT((gl.weights.w3 - gp * act2.transpose()).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(MlpBackward, MatchesFiniteDifferences) {
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 10; ++trial) {
        auto mlp = MlpWeights<double>::random(8, 8, 4, rng());
        const VecX<double> theta = random_vector(8, rng), w = random_vector(4, rng);
        const auto g = mlp_backward(mlp, theta, w);
        auto f = [&] { return map_params(mlp, theta).dot(w); };
        auto check = [&](RowMatX<double>& p, const RowMatX<double>& gp) {
            for (Index i = 0; i < p.size(); ++i) {
                double& x = p.data()[i];
                const double x0 = x;
                const double fd = testing::numeric_derivative(
                    [&](double d) {
                        x = x0 + d;
                        const double v = f();
                        x = x0;
                        return v;
                    },
                    1e-6);
                EXPECT_TRUE(testing::gradients_agree(gp.data()[i], fd, 1e-5)) << gp.data()[i] << " vs " << fd;
            }
        };
        check(mlp.w1, g.weights.w1);
        check(mlp.w2, g.weights.w2);
        check(mlp.w3, g.weights.w3);
        for (Index i = 0; i < 8; ++i) {
            const double x0 = mlp.b1[i];
            mlp.b1[i] = x0 + 1e-6;
            const double fp = f();
            mlp.b1[i] = x0 - 1e-6;
            const double fm = f();
            mlp.b1[i] = x0;
            EXPECT_TRUE(testing::gradients_agree(g.weights.b1[i], (fp - fm) / 2e-6, 1e-5));
        }
    }
}

TEST(Orthogonality, Examples) {
    AvatarModel<double> m;
    m.base = GaussianSet<double>::zeros(2);
    for (Index k = 0; k < 3; ++k) {
        auto d = DeltaSet<double>::zeros(2);
        d.position(0, k) = 2.0;
        m.deltas.push_back(d);
    }
    EXPECT_LE(orthogonality_metric(m), 1e-6);

    m.deltas.resize(2);
    m.deltas[1] = m.deltas[0];
    // V V^T - I = [[0, 1], [1, 0]]: Frobenius norm sqrt(2), its square 2.
    const double e = orthogonality_metric(m);
    EXPECT_NEAR(e, std::sqrt(2.0), 1e-12);
    EXPECT_NEAR(e * e, 2.0, 1e-12);

    m.deltas[1] = DeltaSet<double>::zeros(2);
    try {
        orthogonality_metric(m);
        FAIL();
    } catch (const NumericalError& e) {
        EXPECT_EQ(e.index(), 1u);
    }
}

TEST(Orthogonality, RandomModelIsFiniteNonNegative) {
    std::mt19937_64 rng(13);
    const auto m = random_model(30, 6, 4, rng);
    const double e = orthogonality_metric(m);
    EXPECT_TRUE(std::isfinite(e));
    EXPECT_GE(e, 0.0);
}

}  // namespace
}  // namespace gsavatar
