#include "gsavatar/renderer.hpp"
#include "gsavatar/scheduler.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

namespace gsavatar {
namespace {

using testing::random_matrix;
using testing::random_vector;

Camera axis_camera(int size = 8, double f = 20.0) {
    Camera c;
    c.fx = c.fy = f;
    c.cx = c.cy = 0.5 * (size - 1);
    c.width = c.height = size;
    return c;  // identity pose: looks down +z
}

// Activated world Gaussians scattered in front of an axis camera.
GaussianSet<double> random_world(Index n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto g = GaussianSet<double>::zeros(n);
    for (Index i = 0; i < n; ++i) {
        g.position.row(i) << 0.6 * (u(rng) - 0.5), 0.6 * (u(rng) - 0.5), 3.0 + u(rng);
        g.rotation.row(i) = random_vector(4, rng).normalized().transpose();
        g.scale.row(i) << 0.03 + 0.1 * u(rng), 0.03 + 0.1 * u(rng), 0.03 + 0.1 * u(rng);
        g.opacity[i] = 0.2 + 0.75 * u(rng);
        g.color.row(i) << u(rng), u(rng), u(rng);
    }
    return g;
}

// Per-pixel compositor written independently of the renderer's data layout.
Image<double> reference_render(const SplatList<double>& list, const Camera& cam, const Vec3<double>& bg) {
    std::vector<ProjectedSplat<double>> s = list.splats;
    std::stable_sort(s.begin(), s.end(), [](const auto& a, const auto& b) {
        return a.depth != b.depth ? a.depth < b.depth : a.index < b.index;
    });
    Image<double> img = Image<double>::filled(cam.width, cam.height, Vec3<double>::Zero());
    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            double t = 1.0, c[3] = {0, 0, 0};
            for (const auto& sp : s) {
                if (t == 0.0) break;
                const double dx = x - sp.mean.x(), dy = y - sp.mean.y();
                if (std::abs(dx) > sp.radius || std::abs(dy) > sp.radius) continue;
                const double a =
                    sp.opacity * std::exp(-0.5 * (sp.conic[0] * dx * dx + sp.conic[2] * dy * dy) - sp.conic[1] * dx * dy);
                if (a < 1.0 / 255.0) continue;
                for (int ch = 0; ch < 3; ++ch) c[ch] += sp.color[ch] * a * t;
                t *= 1.0 - a;
            }
            for (int ch = 0; ch < 3; ++ch) img.pixels(y * cam.width + x, ch) = c[ch] + t * bg[ch];
        }
    }
    return img;
}

TEST(Preprocess, IsotropicOnAxisMatchesPinholeOracle) {
    const Camera cam = axis_camera(16, 30.0);
    auto g = GaussianSet<double>::zeros(1);
    const double d = 4.0, s = 0.2;
    g.position.row(0) << 0, 0, d;
    g.rotation.row(0) << 1, 0, 0, 0;
    g.scale.row(0).setConstant(s);
    g.opacity[0] = 0.5;
    const auto list = preprocess(g, cam);
    ASSERT_EQ(list.splats.size(), 1u);
    const auto& sp = list.splats[0];
    EXPECT_NEAR(sp.mean.x(), cam.cx, 1e-12);
    EXPECT_NEAR(sp.mean.y(), cam.cy, 1e-12);
    const double var = std::pow(cam.fx * s / d, 2) + kCovarianceDilation;
    EXPECT_NEAR(sp.conic[0], 1.0 / var, 1e-12);
    EXPECT_NEAR(sp.conic[2], 1.0 / var, 1e-12);
    EXPECT_NEAR(sp.conic[1], 0.0, 1e-12);
    EXPECT_NEAR(sp.radius, 3.0 * std::sqrt(var), 1e-9);
    EXPECT_EQ(sp.depth, d);
}

TEST(Preprocess, IsotropicConicIsIsotropicOffAxis) {
    const Camera cam = axis_camera(16, 30.0);
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 10; ++trial) {
        auto g = random_world(1, rng);
        g.position.row(0) << 0, 0, 3.0;
        g.scale.row(0).setConstant(0.1);
        g.rotation.row(0) << 1, 0, 0, 0;
        const auto sp = preprocess(g, cam).splats.at(0);
        EXPECT_NEAR(sp.conic[0], sp.conic[2], 1e-9);
        EXPECT_NEAR(sp.conic[1], 0.0, 1e-9);
    }
}

TEST(Preprocess, CullsBehindCameraAndTinySplats) {
    const Camera cam = axis_camera();
    auto g = GaussianSet<double>::zeros(3);
    g.rotation.col(0).setOnes();
    g.scale.setConstant(0.1);
    g.position.row(0) << 0, 0, -2;     // behind
    g.position.row(1) << 0, 0, 0.005;  // inside the near plane
    g.position.row(2) << 0, 0, 3;
    const auto list = preprocess(g, cam);
    ASSERT_EQ(list.splats.size(), 1u);
    EXPECT_EQ(list.splats[0].index, 2u);
    EXPECT_EQ(list.gaussian_count, 3);
}

TEST(Preprocess, NonFiniteNamesGaussian) {
    std::mt19937_64 rng(2);
    auto g = random_world(4, rng);
    g.scale(3, 1) = std::nan("");
    try {
        preprocess(g, axis_camera());
        FAIL();
    } catch (const NumericalError& e) {
        EXPECT_EQ(e.index(), 3u);
    }
}

TEST(Rasterize, EmptySceneIsBackground) {
    const Camera cam = axis_camera();
    const Vec3<double> bg(0.2, 0.4, 0.6);
    const auto r = rasterize(SplatList<double>{}, cam, bg);
    for (Index p = 0; p < r.image.pixels.rows(); ++p) EXPECT_EQ(r.image.pixels.row(p), bg.transpose());
    EXPECT_TRUE((r.aux.transmittance.array() == 1.0).all());
}

TEST(Rasterize, OpaqueSplatSaturates) {
    const Camera cam = axis_camera();
    auto g = GaussianSet<double>::zeros(1);
    g.position.row(0) << 0, 0, 4;
    g.rotation.row(0) << 1, 0, 0, 0;
    g.scale.row(0).setConstant(50.0);
    g.opacity[0] = 1.0;
    g.color.row(0) << 0.9, 0.3, 0.1;
    const auto r = render(g, cam, Vec3<double>(1, 1, 1));
    const Index centre = 3 * 8 + 3;
    EXPECT_LT((r.image.pixels.row(centre) - g.color.row(0)).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(Rasterize, MatchesReferenceCompositor) {
    const Camera cam = axis_camera();
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 30; ++trial) {
        const auto g = random_world(trial < 10 ? 2 : 8, rng);
        const Vec3<double> bg(0.3, 0.5, 0.7);
        const auto list = preprocess(g, cam);
        const auto r = rasterize(list, cam, bg);
        const auto ref = reference_render(list, cam, bg);
        EXPECT_LT((r.image.pixels - ref.pixels).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(Rasterize, EnergyBound) {
    const Camera cam = axis_camera(16);
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 30; ++trial) {
        const auto g = random_world(40, rng);
        const auto r = render(g, cam, Vec3<double>(u(rng), u(rng), u(rng)));
        EXPECT_GE(r.image.pixels.minCoeff(), 0.0);
        EXPECT_LE(r.image.pixels.maxCoeff(), 1.0 + 1e-12);
        EXPECT_GE(r.aux.transmittance.minCoeff(), 0.0);
        EXPECT_LE(r.aux.max_weight.maxCoeff(), 1.0);
    }
}

// Blend weight of `gaussian` at every pixel.
VecX<double> weights_of(const RenderAux<double>& aux, const SplatList<double>& list, std::uint32_t gaussian) {
    VecX<double> w = VecX<double>::Zero(static_cast<Index>(aux.width) * aux.height);
    for (Index p = 0; p < w.size(); ++p) {
        for (auto e = aux.offsets[p]; e < aux.offsets[p + 1]; ++e) {
            const auto& c = aux.contributions[e];
            if (list.splats[c.splat].index == gaussian) w[p] = c.weight();
        }
    }
    return w;
}

TEST(Rasterize, OcclusionMonotonicity) {
    const Camera cam = axis_camera();
    auto g = GaussianSet<double>::zeros(2);
    g.rotation.col(0).setOnes();
    g.scale.setConstant(0.12);
    g.position.row(0) << 0.05, 0.0, 3.0;  // front
    g.position.row(1) << -0.05, 0.02, 3.5;
    g.color.setConstant(0.5);
    g.opacity[1] = 0.8;
    VecX<double> last;
    for (double logit_front = -4.0; logit_front <= 6.0; logit_front += 0.5) {
        g.opacity[0] = sigmoid(logit_front);
        const auto list = preprocess(g, cam);
        const auto r = rasterize(list, cam, Vec3<double>::Zero().eval());
        const VecX<double> w = weights_of(r.aux, list, 1);
        if (last.size() > 0) EXPECT_TRUE((w.array() <= last.array()).all());
        last = w;
    }
}

TEST(Rasterize, PoolDoesNotChangeOutput) {
    const Camera cam = axis_camera(19);
    std::mt19937_64 rng(5);
    const auto g = random_world(50, rng);
    const auto list = preprocess(g, cam);
    const auto a = rasterize(list, cam, Vec3<double>(0.1, 0.2, 0.3));
    ThreadPool pool(3);
    const auto b = rasterize(list, cam, Vec3<double>(0.1, 0.2, 0.3), &pool);
    EXPECT_EQ(a.image.pixels, b.image.pixels);
    EXPECT_EQ(a.aux.max_weight, b.aux.max_weight);
    EXPECT_EQ(a.aux.offsets, b.aux.offsets);
}

double weighted_image(const Image<double>& img, const RowMatX3<double>& w) { return img.pixels.cwiseProduct(w).sum(); }

TEST(RenderBackward, ZeroUpstreamGivesZero) {
    const Camera cam = axis_camera();
    std::mt19937_64 rng(6);
    const auto g = random_world(5, rng);
    const auto list = preprocess(g, cam);
    const auto r = rasterize(list, cam, Vec3<double>(0.5, 0.5, 0.5));
    const auto grad = render_backward(g, cam, list, r.aux, Image<double>::filled(8, 8, Vec3<double>::Zero()));
    EXPECT_TRUE(grad == GaussianSet<double>::zeros(5));
}

TEST(RenderBackward, OpaqueCoveringColourGradient) {
    const Camera cam = axis_camera();
    auto g = GaussianSet<double>::zeros(1);
    g.position.row(0) << 0, 0, 4;
    g.rotation.row(0) << 1, 0, 0, 0;
    g.scale.row(0).setConstant(50.0);
    g.opacity[0] = 1.0;
    std::mt19937_64 rng(7);
    Image<double> up{8, 8, random_matrix(64, 3, rng)};
    const auto list = preprocess(g, cam);
    const auto r = rasterize(list, cam, Vec3<double>::Zero().eval());
    const auto grad = render_backward(g, cam, list, r.aux, up);
    const Eigen::RowVector3d expect = up.pixels.colwise().sum();
    EXPECT_LT((grad.color.row(0) - expect).cwiseAbs().maxCoeff(), 1e-3 * expect.cwiseAbs().maxCoeff());
}

void check_render_gradients(const GaussianSet<double>& world0, const Camera& cam, std::mt19937_64& rng,
                            int& checked) {
    const Vec3<double> bg(0.2, 0.7, 0.4);
    const RowMatX3<double> w = random_matrix(cam.pixel_count(), 3, rng);
    const auto list = preprocess(world0, cam);
    const auto r = rasterize(list, cam, bg);
    const auto grad = render_backward(world0, cam, list, r.aux, Image<double>{cam.width, cam.height, w});
    GaussianSet<double> world = world0;
    auto f = [&] { return weighted_image(render(world, cam, bg).image, w); };
    auto check = [&](auto& p, const auto& gp, const char* name) {
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
                1e-5);
            ++checked;
            EXPECT_TRUE(testing::gradients_agree(gp.data()[i], fd, 1e-3))
                << name << "[" << i << "] analytic " << gp.data()[i] << " numeric " << fd;
        }
    };
    check(world.position, grad.position, "position");
    check(world.rotation, grad.rotation, "rotation");
    check(world.scale, grad.scale, "scale");
    check(world.opacity, grad.opacity, "opacity");
    check(world.color, grad.color, "color");
}

TEST(RenderBackward, SingleGaussianMatchesFiniteDifferences) {
    const Camera cam = axis_camera();
    std::mt19937_64 rng(8);
    int checked = 0;
    for (int trial = 0; trial < 10; ++trial) check_render_gradients(random_world(1, rng), cam, rng, checked);
    EXPECT_EQ(checked, 140);
}

TEST(RenderBackward, RandomScenesMatchFiniteDifferences) {
    std::mt19937_64 rng(9);
    int checked = 0;
    for (int trial = 0; trial < 10; ++trial) check_render_gradients(random_world(8, rng), axis_camera(), rng, checked);
    // Rotated camera exercises the view matrix adjoint.
    const Camera cam = testing::micro_camera();
    for (int trial = 0; trial < 5; ++trial) {
        auto g = random_world(8, rng);
        g.position.col(2).array() -= 3.5;
        check_render_gradients(g, cam, rng, checked);
    }
    EXPECT_GT(checked, 1000);
}

std::vector<Image<double>> batch_images(unsigned workers, BatchScheme scheme, const std::vector<GaussianSet<double>>& sets,
                                        const Camera& cam, std::size_t* barriers = nullptr) {
    ThreadPool pool(workers);
    StageScheduler sched(pool);
    std::vector<BatchItem<double>> items;
    for (std::size_t i = 0; i < sets.size(); ++i) {
        items.push_back({&sets[i], &cam, Vec3<double>(0.1 * static_cast<double>(i % 10), 0.5, 0.9)});
    }
    const auto out = render_batch(items, sched, scheme);
    if (barriers) *barriers = sched.barrier_count();
    std::vector<Image<double>> imgs;
    for (const auto& o : out) imgs.push_back(o.image);
    return imgs;
}

TEST(RenderBatch, SingleItemMatchesDirectRender) {
    const Camera cam = axis_camera(12);
    std::mt19937_64 rng(10);
    const std::vector<GaussianSet<double>> sets{random_world(30, rng)};
    const auto imgs = batch_images(2, BatchScheme::TwoStage, sets, cam);
    EXPECT_EQ(imgs[0].pixels, render(sets[0], cam, Vec3<double>(0.0, 0.5, 0.9)).image.pixels);
}

TEST(RenderBatch, IdenticalAcrossWorkerCountsAndSchemes) {
    const Camera cam = axis_camera(16);
    std::mt19937_64 rng(11);
    std::vector<GaussianSet<double>> sets;
    for (int i = 0; i < 10; ++i) sets.push_back(random_world(60, rng));
    const auto ref = batch_images(1, BatchScheme::TwoStage, sets, cam);
    for (unsigned workers : {2u, 8u}) {
        for (auto scheme : {BatchScheme::Sequential, BatchScheme::NaiveParallel, BatchScheme::TwoStage}) {
            const auto imgs = batch_images(workers, scheme, sets, cam);
            for (std::size_t i = 0; i < sets.size(); ++i) ASSERT_EQ(imgs[i].pixels, ref[i].pixels);
        }
    }
}

TEST(RenderBatch, OneBarrierPerTwoStageBatch) {
    const Camera cam = axis_camera();
    std::mt19937_64 rng(12);
    std::vector<GaussianSet<double>> sets;
    for (int i = 0; i < 10; ++i) sets.push_back(random_world(5, rng));
    std::size_t barriers = 0;
    batch_images(4, BatchScheme::TwoStage, sets, cam, &barriers);
    EXPECT_EQ(barriers, 1u);
    batch_images(4, BatchScheme::NaiveParallel, sets, cam, &barriers);
    EXPECT_EQ(barriers, 20u);
}

}  // namespace
}  // namespace gsavatar
