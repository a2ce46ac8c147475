#include "gsavatar/synth.hpp"

#include "gsavatar/io.hpp"
#include "gsavatar/trainer.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace gsavatar {

void SynthConfig::validate() const {
    if (frames < 1) throw ConfigError("synth: frame count must be >= 1");
    if (size < 16) throw ConfigError("synth: image size must be >= 16");
    if (expressions < 10) throw ConfigError("synth: needs at least 10 expression coefficients");
    if (uv_resolution < 1) throw ConfigError("synth: uv resolution must be >= 1");
    if (true_blendshapes < 1 || true_blendshapes > 4) throw ConfigError("synth: true blendshape count must be 1..4");
    if (trajectory != "sinusoid" && trajectory != "static") throw ConfigError("synth: unknown trajectory " + trajectory);
}

Camera synth_camera(int size) {
    Camera c;
    c.fx = c.fy = 1.6 * size;
    c.cx = c.cy = 0.5 * (size - 1);
    c.rotation = Eigen::Vector3d(1.0, -1.0, -1.0).asDiagonal();
    c.translation = Vec3<double>(0.0, 0.0, 4.0);
    c.width = c.height = size;
    return c;
}

VecX<double> synth_theta(const SynthConfig& config, std::size_t frame) {
    const Index e = config.expressions;
    VecX<double> theta = VecX<double>::Zero(e + 3);
    if (config.trajectory == "static") return theta;
    const double t = 2.0 * std::numbers::pi * static_cast<double>(frame);
    for (Index k = 0; k < e; ++k) theta[k] = 0.8 * std::sin(t / (23.0 + 7.0 * static_cast<double>(k)));
    theta[e] = 0.15 * std::sin(t / 61.0);      // pitch
    theta[e + 1] = 0.3 * std::sin(t / 47.0);   // yaw
    theta[e + 2] = 0.05 * std::sin(t / 97.0);  // roll
    return theta;
}

RgbaImage unpremultiply(const Image<float>& premultiplied, const VecX<float>& transmittance) {
    RgbaImage out{premultiplied.width, premultiplied.height, RowMatX4<float>(premultiplied.pixels.rows(), 4)};
    for (Index p = 0; p < out.pixels.rows(); ++p) {
        const float alpha = 1.0f - transmittance[p];
        out.pixels(p, 3) = alpha;
        for (int ch = 0; ch < 3; ++ch) {
            out.pixels(p, ch) = alpha > 1e-6f ? std::clamp(premultiplied.pixels(p, ch) / alpha, 0.0f, 1.0f) : 0.0f;
        }
    }
    return quantize(out);
}

namespace {

double blob(const Vec2<double>& uv, double u0, double v0, double su, double sv) {
    const double du = (uv.x() - u0) / su, dv = (uv.y() - v0) / sv;
    return std::exp(-0.5 * (du * du + dv * dv));
}

Vec3<double> base_color(const Vec2<double>& uv) {
    const Vec3<double> skin(0.85, 0.64, 0.52), hair(0.28, 0.18, 0.1), eye(0.12, 0.1, 0.12), lip(0.72, 0.25, 0.25);
    const double face = blob(uv, 0.5, 0.45, 0.16, 0.4);
    Vec3<double> c = hair + (skin - hair) * std::clamp(1.6 * face, 0.0, 1.0);
    c = c.cwiseMax(0.0);
    const double eyes = std::max(blob(uv, 0.44, 0.6, 0.018, 0.035), blob(uv, 0.56, 0.6, 0.018, 0.035));
    c += (eye - c) * eyes;
    c += (lip - c) * blob(uv, 0.5, 0.3, 0.04, 0.03);
    // Soft vertical shading band so large regions are not flat.
    c *= 0.85 + 0.15 * std::cos(2.0 * std::numbers::pi * uv.y());
    return c;
}

// Hand-set deltas: mouth, smile corners, brows, cheeks. Returns the tangent
// normal offset and the color-logit change of Gaussian at `uv` for blendshape k.
std::pair<double, Vec3<double>> delta_at(Index k, const Vec2<double>& uv) {
    switch (k) {
        case 0: {
            const double w = blob(uv, 0.5, 0.3, 0.05, 0.05);
            return {-0.03 * w, Vec3<double>(-1.5, -1.5, -1.5) * w};
        }
        case 1: {
            const double w = std::max(blob(uv, 0.45, 0.33, 0.025, 0.03), blob(uv, 0.55, 0.33, 0.025, 0.03));
            return {0.02 * w, Vec3<double>(1.0, -0.4, -0.4) * w};
        }
        case 2: {
            const double w = std::max(blob(uv, 0.44, 0.7, 0.03, 0.025), blob(uv, 0.56, 0.7, 0.03, 0.025));
            return {0.03 * w, Vec3<double>(-1.2, -1.2, -1.0) * w};
        }
        default: {
            const double w = std::max(blob(uv, 0.38, 0.45, 0.035, 0.05), blob(uv, 0.62, 0.45, 0.035, 0.05));
            return {0.0, Vec3<double>(1.2, -0.3, -0.3) * w};
        }
    }
}

AvatarModel<float> make_truth(const ParametricHeadRig& rig, const SynthConfig& config, std::uint64_t seed) {
    const BindResult bound = bind_gaussians(rig, config.uv_resolution);
    const Index n = bound.bindings.size(), h = rig.param_dim(), k_true = config.true_blendshapes;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> angle(-std::numbers::pi, std::numbers::pi);

    AvatarModel<double> m;
    m.bindings = bound.bindings;
    m.base = GaussianSet<double>::zeros(n);
    m.deltas.assign(static_cast<std::size_t>(k_true), DeltaSet<double>::zeros(n));
    for (Index g = 0; g < n; ++g) {
        const auto f = rig.faces.row(m.bindings.triangle[static_cast<std::size_t>(g)]);
        Vec2<double> uv = Vec2<double>::Zero();
        for (int i = 0; i < 3; ++i) uv += m.bindings.barycentric(g, i) * rig.uv.row(f[i]).transpose();

        const double a = angle(rng);
        m.base.rotation.row(g) << std::cos(0.5 * a), 0.0, 0.0, std::sin(0.5 * a);
        m.base.scale.row(g) << std::log(0.09) + 0.15 * normal(rng), std::log(0.06) + 0.15 * normal(rng),
            std::log(0.02);
        m.base.opacity[g] = logit(0.95);
        const Vec3<double> c = (base_color(uv) + 0.03 * Vec3<double>(normal(rng), normal(rng), normal(rng)))
                                   .cwiseMax(0.02)
                                   .cwiseMin(0.98);
        for (int ch = 0; ch < 3; ++ch) m.base.color(g, ch) = logit(c[ch]);
        for (Index k = 0; k < k_true; ++k) {
            const auto [offset, dcolor] = delta_at(k, uv);
            m.deltas[static_cast<std::size_t>(k)].position(g, 2) = offset;
            m.deltas[static_cast<std::size_t>(k)].color.row(g) = dcolor.transpose();
        }
    }

    // psi = A theta, driven partly by coefficients and pose that an identity
    // slice of the first K parameters cannot see.
    const Index e = rig.expression_count();
    RowMatX<double> map = RowMatX<double>::Zero(k_true, h);
    const double rows[4][5] = {{0.8, 0.6, 0.0, 0.0, 0.0},   // theta0, theta8, theta9, pitch, yaw
                               {0.7, 0.0, -0.6, 0.0, 0.0},  // theta1 ...
                               {0.5, 0.0, 0.8, 0.5, 0.0},   // theta2 ...
                               {0.0, 0.6, 0.0, 0.0, 1.0}};
    for (Index k = 0; k < k_true; ++k) {
        if (k < 3) map(k, k) = rows[k][0];
        map(k, 8) = rows[k][1];
        map(k, 9) = rows[k][2];
        map(k, e) = rows[k][3];
        map(k, e + 1) = rows[k][4];
    }
    m.mlp = MlpWeights<double>::linear(map, 128);
    m.validate();
    return m.cast<float>();
}

}  // namespace

SynthOutput synth_generate(const SynthConfig& config, std::uint64_t seed, ThreadPool* pool) {
    config.validate();
    RigOptions options;
    options.expressions = config.expressions;
    SynthOutput out;
    auto& ds = out.dataset;
    ds.rig = make_default_rig(options);
    ds.camera = synth_camera(config.size);
    ds.uv_resolution = config.uv_resolution;
    ds.background = "black";
    out.truth = make_truth(ds.rig, config, seed);

    ds.theta.resize(config.frames);
    ds.frames.resize(config.frames);
    auto render_one = [&](std::size_t i) {
        ds.theta[i] = synth_theta(config, i);
        const GaussianFrames frames = gaussian_frames(ds.rig, rig_evaluate(ds.rig, ds.theta[i]), out.truth.bindings);
        const auto fwd = forward_item(out.truth, ds.theta[i], frames, ds.camera, Vec3<float>::Zero().eval());
        ds.frames[i] = unpremultiply(fwd.render.image, fwd.render.aux.transmittance);
    };
    if (pool) {
        pool->parallel_for(config.frames, render_one);
    } else {
        for (std::size_t i = 0; i < config.frames; ++i) render_one(i);
    }
    ds.validate();
    return out;
}

}  // namespace gsavatar
