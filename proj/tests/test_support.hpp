#pragma once

#include "gsavatar/avatar_model.hpp"
#include "gsavatar/binding.hpp"
#include "gsavatar/dataset.hpp"
#include "gsavatar/renderer.hpp"
#include "gsavatar/rig.hpp"
#include "gsavatar/trainer.hpp"

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace gsavatar::testing {

inline RowMatX<double> random_matrix(Index rows, Index cols, std::mt19937_64& rng, double sigma = 1.0) {
    std::normal_distribution<double> n(0.0, sigma);
    return RowMatX<double>::NullaryExpr(rows, cols, [&] { return n(rng); });
}

inline VecX<double> random_vector(Index size, std::mt19937_64& rng, double sigma = 1.0) {
    std::normal_distribution<double> n(0.0, sigma);
    return VecX<double>::NullaryExpr(size, [&] { return n(rng); });
}

/// Gradient agreement used throughout: absolute floor 1e-8, else relative.
inline bool gradients_agree(double analytic, double numeric, double rel_tol) {
    const double diff = std::abs(analytic - numeric);
    if (diff <= 1e-8) return true;
    return diff / std::max(std::abs(analytic), std::abs(numeric)) < rel_tol;
}

/// Central difference of f at 0. When the central estimate straddles a jump
/// (splat cutoffs, ReLU kinks) the second-order one-sided stencil on the
/// side whose h and h/2 estimates agree is returned instead.
inline double numeric_derivative(const std::function<double(double)>& f, double h) {
    const double f0 = f(0.0), fp = f(h), fm = f(-h), fp2 = f(2 * h), fm2 = f(-2 * h);
    const double central = (fp - fm) / (2 * h);
    const double forward = (-3 * f0 + 4 * fp - fp2) / (2 * h);
    const double backward = (3 * f0 - 4 * fm + fm2) / (2 * h);
    if (gradients_agree(forward, central, 1e-4) && gradients_agree(backward, central, 1e-4)) return central;
    const double hh = 0.5 * h;
    const double fph = f(hh), fmh = f(-hh);
    const double forward_half = (-3 * f0 + 4 * fph - fp) / (2 * hh);
    const double backward_half = (3 * f0 - 4 * fmh + fm) / (2 * hh);
    const double fwd_gap = std::abs(forward - forward_half), bwd_gap = std::abs(backward - backward_half);
    return fwd_gap <= bwd_gap ? forward_half : backward_half;
}

/// Slightly non-planar quad (two triangles) facing the camera.
inline ParametricHeadRig quad_rig(Index expressions, std::mt19937_64& rng) {
    ParametricHeadRig rig;
    rig.base_vertices.resize(4, 3);
    rig.base_vertices << -0.7, -0.7, 0.1, 0.7, -0.7, -0.1, 0.7, 0.7, 0.15, -0.7, 0.7, 0.0;
    rig.faces.resize(2, 3);
    rig.faces << 0, 1, 2, 0, 2, 3;
    rig.uv.resize(4, 2);
    rig.uv << 0, 0, 1, 0, 1, 1, 0, 1;
    for (Index e = 0; e < expressions; ++e) rig.expr_bases.push_back(random_matrix(4, 3, rng, 0.05));
    rig.validate();
    return rig;
}

/// 8x8 pinhole camera at z = 4 looking down -z.
inline Camera micro_camera(int size = 8) {
    Camera c;
    c.fx = c.fy = 2.5 * size;
    c.cx = c.cy = 0.5 * (size - 1);
    c.rotation = Eigen::Vector3d(1.0, -1.0, -1.0).asDiagonal();
    c.translation = Vec3<double>(0.0, 0.0, 4.0);
    c.width = c.height = size;
    return c;
}

inline GaussianBindings random_bindings(Index n, Index faces, std::mt19937_64& rng) {
    GaussianBindings b;
    std::uniform_int_distribution<Index> face(0, faces - 1);
    std::uniform_real_distribution<double> u(0.05, 1.0);
    b.barycentric.resize(n, 3);
    for (Index i = 0; i < n; ++i) {
        b.triangle.push_back(static_cast<std::uint32_t>(face(rng)));
        Vec3<double> w(u(rng), u(rng), u(rng));
        b.barycentric.row(i) = (w / w.sum()).transpose();
    }
    return b;
}

inline RgbaImage random_rgba(int w, int h, std::mt19937_64& rng) {
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    RgbaImage img{w, h, RowMatX4<float>(static_cast<Index>(w) * h, 4)};
    img.pixels = RowMatX4<float>::NullaryExpr(img.pixels.rows(), 4, [&] { return u(rng); });
    return img;
}

/// Everything for one full-chain gradient check.
struct MicroScene {
    ParametricHeadRig rig;
    Camera camera;
    AvatarModel<double> model;
    VecX<double> theta;
    GaussianFrames frames;
    RgbaImage target;
    Vec3<double> background;
};

inline MicroScene make_micro_scene(std::uint64_t seed, Index n, Index k, Index h, Index hidden = 8) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    MicroScene s;
    s.rig = quad_rig(h - 3, rng);
    s.camera = micro_camera();
    auto& m = s.model;
    m.bindings = random_bindings(n, s.rig.face_count(), rng);
    m.base = GaussianSet<double>::zeros(n);
    m.base.position = random_matrix(n, 3, rng, 0.05);
    m.base.rotation = random_matrix(n, 4, rng);
    m.base.scale = (random_matrix(n, 3, rng, 0.3).array() + std::log(0.12)).matrix();
    m.base.opacity = random_vector(n, rng, 1.0);
    m.base.color = random_matrix(n, 3, rng);
    for (Index j = 0; j < k; ++j) {
        DeltaSet<double> d;
        d.position = random_matrix(n, 3, rng, 0.05);
        d.rotation = random_matrix(n, 4, rng, 0.1);
        d.color = random_matrix(n, 3, rng, 0.5);
        m.deltas.push_back(d);
    }
    m.mlp = MlpWeights<double>::random(h, hidden, k, seed + 1);
    m.validate();
    s.theta = random_vector(h, rng, 0.5);
    s.theta.tail(3) *= 0.3;
    s.frames = gaussian_frames(s.rig, rig_evaluate(s.rig, s.theta), m.bindings);
    s.target = random_rgba(s.camera.width, s.camera.height, rng);
    s.background = Vec3<double>(u(rng), u(rng), u(rng));
    return s;
}

/// Calls fn(ref) for every trainable scalar of the model, with a label.
template <typename S, typename Fn>
void for_each_parameter(AvatarModel<S>& m, Fn&& fn) {
    auto visit = [&](auto& mat, const std::string& name) {
        for (Index i = 0; i < mat.size(); ++i) fn(mat.data()[i], name + "[" + std::to_string(i) + "]");
    };
    visit(m.base.position, "base.position");
    visit(m.base.rotation, "base.rotation");
    visit(m.base.scale, "base.scale");
    visit(m.base.opacity, "base.opacity");
    visit(m.base.color, "base.color");
    for (std::size_t k = 0; k < m.deltas.size(); ++k) {
        visit(m.deltas[k].position, "delta" + std::to_string(k) + ".position");
        visit(m.deltas[k].rotation, "delta" + std::to_string(k) + ".rotation");
        visit(m.deltas[k].color, "delta" + std::to_string(k) + ".color");
    }
    visit(m.mlp.w1, "mlp.w1");
    visit(m.mlp.b1, "mlp.b1");
    visit(m.mlp.w2, "mlp.w2");
    visit(m.mlp.b2, "mlp.b2");
    visit(m.mlp.w3, "mlp.w3");
    visit(m.mlp.b3, "mlp.b3");
}

struct GradientCheck {
    int checked = 0;
    int failed = 0;
    double max_rel = 0.0;  // over entries with magnitude above 1e-6
    double max_abs = 0.0;
    std::string worst;
};

/// Analytic full-chain gradient of the L1 loss against numeric derivatives
/// for every trainable scalar of the scene's model.
inline GradientCheck check_full_chain(const MicroScene& scene, double rel_tol = 1e-3, double h = 1e-5) {
    AvatarModel<double> model = scene.model;
    const auto analytic = item_loss(model, scene.theta, scene.frames, scene.camera, scene.target, scene.background);
    AvatarModel<double> grads;
    grads.base = analytic.grads.base;
    grads.deltas = analytic.grads.deltas;
    grads.mlp = analytic.grads.mlp;
    std::vector<double> g;
    for_each_parameter(grads, [&](double& v, const std::string&) { g.push_back(v); });

    GradientCheck out;
    std::size_t idx = 0;
    for_each_parameter(model, [&](double& x, const std::string& name) {
        const double x0 = x;
        const double fd = numeric_derivative(
            [&](double d) {
                x = x0 + d;
                const double v = item_loss(model, scene.theta, scene.frames, scene.camera, scene.target,
                                           scene.background).loss;
                x = x0;
                return v;
            },
            h);
        const double a = g[idx++];
        ++out.checked;
        const double diff = std::abs(a - fd);
        out.max_abs = std::max(out.max_abs, diff);
        if (std::max(std::abs(a), std::abs(fd)) > 1e-6) {
            const double rel = diff / std::max(std::abs(a), std::abs(fd));
            if (rel > out.max_rel) {
                out.max_rel = rel;
                out.worst = name + " analytic " + std::to_string(a) + " numeric " + std::to_string(fd);
            }
        }
        if (!gradients_agree(a, fd, rel_tol)) ++out.failed;
    });
    return out;
}

}  // namespace gsavatar::testing
