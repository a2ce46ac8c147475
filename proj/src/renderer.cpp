#include "gsavatar/renderer.hpp"

#include "gsavatar/scheduler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace gsavatar {

void Camera::validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw ConfigError("camera focal lengths must be positive");
    if (width < 1 || height < 1) throw ConfigError("camera image size must be positive");
    if (!(rotation * rotation.transpose()).isIdentity(1e-9)) throw ConfigError("camera rotation is not orthonormal");
}

namespace {

constexpr int kTile = 4;

template <typename S>
bool all_finite(const GaussianSet<S>& g, Index i) {
    return g.position.row(i).allFinite() && g.rotation.row(i).allFinite() && g.scale.row(i).allFinite() &&
           std::isfinite(g.opacity[i]) && g.color.row(i).allFinite();
}

/// Camera-space point, its projection Jacobian and the 3D covariance factor.
template <typename S>
struct ProjectionTerms {
    Vec3<S> p;           // camera space
    Eigen::Matrix<S, 2, 3> j;
    Eigen::Matrix<S, 2, 3> t;  // j * W
    Mat3<S> rot;
    Mat3<S> m;           // rot * diag(scale)
    Mat3<S> cov3;
    Mat2<S> cov2;
};

template <typename S>
ProjectionTerms<S> projection_terms(const GaussianSet<S>& world, const Camera& camera, Index i) {
    ProjectionTerms<S> pt;
    const Mat3<S> w = camera.rotation.cast<S>();
    pt.p = w * world.position.row(i).transpose() + camera.translation.cast<S>();
    const S z = pt.p.z(), fx = static_cast<S>(camera.fx), fy = static_cast<S>(camera.fy);
    pt.j << fx / z, S(0), -fx * pt.p.x() / (z * z),
            S(0), fy / z, -fy * pt.p.y() / (z * z);
    pt.t = pt.j * w;
    pt.rot = quat::to_matrix<S>(world.rotation.row(i).transpose());
    pt.m = pt.rot * world.scale.row(i).transpose().asDiagonal();
    pt.cov3 = pt.m * pt.m.transpose();
    pt.cov2 = pt.t * pt.cov3 * pt.t.transpose();
    pt.cov2(0, 0) += static_cast<S>(kCovarianceDilation);
    pt.cov2(1, 1) += static_cast<S>(kCovarianceDilation);
    return pt;
}

template <typename S>
struct RasterChunk {
    std::vector<std::uint32_t> counts;  // per pixel in chunk
    std::vector<Contribution<S>> contributions;
    VecX<S> max_weight;
};

}  // namespace

template <typename S>
bool project_gaussian(const GaussianSet<S>& world, const Camera& camera, Index i, ProjectedSplat<S>& out) {
    if (!all_finite(world, i)) throw NumericalError("non-finite Gaussian parameter", static_cast<std::size_t>(i));
    const Vec3<S> p = camera.rotation.cast<S>() * world.position.row(i).transpose() + camera.translation.cast<S>();
    if (!(p.z() > static_cast<S>(kNearPlane))) return false;
    const auto pt = projection_terms(world, camera, i);
    const S det = pt.cov2(0, 0) * pt.cov2(1, 1) - pt.cov2(0, 1) * pt.cov2(1, 0);
    if (!(det > S(0))) return false;
    const S mid = S(0.5) * (pt.cov2(0, 0) + pt.cov2(1, 1));
    const S lambda = mid + std::sqrt(std::max(mid * mid - det, S(0)));
    const S radius = S(3) * std::sqrt(lambda);
    if (!(radius >= static_cast<S>(kMinRadius))) return false;
    out.mean = {static_cast<S>(camera.fx) * p.x() / p.z() + static_cast<S>(camera.cx),
                static_cast<S>(camera.fy) * p.y() / p.z() + static_cast<S>(camera.cy)};
    out.conic = {pt.cov2(1, 1) / det, -pt.cov2(0, 1) / det, pt.cov2(0, 0) / det};
    out.depth = p.z();
    out.color = world.color.row(i).transpose();
    out.opacity = world.opacity[i];
    out.radius = radius;
    out.index = static_cast<std::uint32_t>(i);
    return true;
}

template <typename S>
SplatList<S> preprocess(const GaussianSet<S>& world, const Camera& camera) {
    if (!world.consistent()) throw ConfigError("preprocess: Gaussian arrays differ in length");
    SplatList<S> out;
    out.gaussian_count = world.size();
    out.splats.reserve(static_cast<std::size_t>(world.size()));
    ProjectedSplat<S> s;
    for (Index i = 0; i < world.size(); ++i) {
        if (project_gaussian(world, camera, i, s)) out.splats.push_back(s);
    }
    return out;
}

template <typename S>
RenderResult<S> rasterize(const SplatList<S>& list, const Camera& camera, const Vec3<S>& background,
                          ThreadPool* pool) {
    const int w = camera.width, h = camera.height;
    const auto& splats = list.splats;

    std::vector<std::uint32_t> order(splats.size());
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
        if (splats[a].depth != splats[b].depth) return splats[a].depth < splats[b].depth;
        return splats[a].index < splats[b].index;
    });

    const int tiles_x = (w + kTile - 1) / kTile, tiles_y = (h + kTile - 1) / kTile;
    std::vector<std::vector<std::uint32_t>> tiles(static_cast<std::size_t>(tiles_x) * tiles_y);
    for (auto s : order) {
        const auto& sp = splats[s];
        const int x0 = std::max(0, static_cast<int>(std::ceil(sp.mean.x() - sp.radius)));
        const int x1 = std::min(w - 1, static_cast<int>(std::floor(sp.mean.x() + sp.radius)));
        const int y0 = std::max(0, static_cast<int>(std::ceil(sp.mean.y() - sp.radius)));
        const int y1 = std::min(h - 1, static_cast<int>(std::floor(sp.mean.y() + sp.radius)));
        if (x0 > x1 || y0 > y1) continue;
        for (int ty = y0 / kTile; ty <= y1 / kTile; ++ty)
            for (int tx = x0 / kTile; tx <= x1 / kTile; ++tx) tiles[static_cast<std::size_t>(ty) * tiles_x + tx].push_back(s);
    }

    RenderResult<S> result;
    result.image = Image<S>{w, h, RowMatX3<S>(static_cast<Index>(w) * h, 3)};
    result.aux.width = w;
    result.aux.height = h;
    result.aux.background = background;
    result.aux.transmittance.resize(static_cast<Index>(w) * h);

    const S min_alpha = static_cast<S>(kMinAlpha);
    const int chunk_rows = kTile;
    const std::size_t chunks = static_cast<std::size_t>(tiles_y);
    std::vector<RasterChunk<S>> parts(chunks);

    // power below this gives alpha under the cutoff for sure; the margin keeps
    // borderline cases on the exact exp test
    std::vector<S> skip_below(splats.size());
    for (std::size_t i = 0; i < splats.size(); ++i) {
        skip_below[i] = static_cast<S>(std::log(kMinAlpha / static_cast<double>(splats[i].opacity)) - 0.01);
    }

    auto run_chunk = [&](std::size_t c) {
        auto& part = parts[c];
        part.max_weight = VecX<S>::Zero(list.gaussian_count);
        const int y_begin = static_cast<int>(c) * chunk_rows, y_end = std::min(h, y_begin + chunk_rows);
        part.counts.assign(static_cast<std::size_t>(y_end - y_begin) * w, 0);
        for (int y = y_begin; y < y_end; ++y) {
            for (int x = 0; x < w; ++x) {
                const auto& cand = tiles[static_cast<std::size_t>(y / kTile) * tiles_x + x / kTile];
                const S px = static_cast<S>(x), py = static_cast<S>(y);
                Vec3<S> color = Vec3<S>::Zero();
                S trans = S(1);
                std::uint32_t count = 0;
                for (auto s : cand) {
                    if (trans == S(0)) break;
                    const auto& sp = splats[s];
                    const S dx = px - sp.mean.x(), dy = py - sp.mean.y();
                    if (std::abs(dx) > sp.radius || std::abs(dy) > sp.radius) continue;
                    const S power = S(-0.5) * (sp.conic[0] * dx * dx + sp.conic[2] * dy * dy) - sp.conic[1] * dx * dy;
                    if (power < skip_below[s]) continue;
                    const S alpha = sp.opacity * std::exp(power);
                    if (alpha < min_alpha) continue;
                    const S weight = alpha * trans;
                    color += weight * sp.color;
                    part.contributions.push_back({s, alpha, trans});
                    S& mw = part.max_weight[sp.index];
                    if (weight > mw) mw = weight;
                    trans *= (S(1) - alpha);
                    ++count;
                }
                const Index pix = static_cast<Index>(y) * w + x;
                result.image.pixels.row(pix) = (color + trans * background).transpose();
                result.aux.transmittance[pix] = trans;
                part.counts[static_cast<std::size_t>(y - y_begin) * w + x] = count;
            }
        }
    };
    if (pool != nullptr) {
        pool->parallel_for(chunks, run_chunk);
    } else {
        for (std::size_t c = 0; c < chunks; ++c) run_chunk(c);
    }

    auto& aux = result.aux;
    aux.max_weight = VecX<S>::Zero(list.gaussian_count);
    aux.offsets.resize(static_cast<std::size_t>(w) * h + 1);
    aux.offsets[0] = 0;
    std::size_t total = 0;
    for (const auto& p : parts) total += p.contributions.size();
    aux.contributions.reserve(total);
    std::size_t pix = 0;
    for (const auto& p : parts) {
        for (auto count : p.counts) {
            aux.offsets[pix + 1] = aux.offsets[pix] + count;
            ++pix;
        }
        aux.contributions.insert(aux.contributions.end(), p.contributions.begin(), p.contributions.end());
        aux.max_weight = aux.max_weight.cwiseMax(p.max_weight);
    }
    return result;
}

template <typename S>
GaussianSet<S> render_backward(const GaussianSet<S>& world, const Camera& camera, const SplatList<S>& list,
                               const RenderAux<S>& aux, const Image<S>& grad_image) {
    const auto& splats = list.splats;
    const std::size_t ns = splats.size();
    if (grad_image.pixels.rows() != static_cast<Index>(aux.width) * aux.height) {
        throw ConfigError("render_backward: gradient image size mismatch");
    }
    std::vector<Vec2<S>> g_mean(ns, Vec2<S>::Zero());
    std::vector<Vec3<S>> g_conic(ns, Vec3<S>::Zero());
    std::vector<Vec3<S>> g_color(ns, Vec3<S>::Zero());
    std::vector<S> g_opacity(ns, S(0));

    const int w = aux.width, h = aux.height;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const Index pix = static_cast<Index>(y) * w + x;
            const Vec3<S> g = grad_image.pixels.row(pix).transpose();
            if (g.isZero()) continue;
            const auto begin = aux.offsets[static_cast<std::size_t>(pix)];
            const auto end = aux.offsets[static_cast<std::size_t>(pix) + 1];
            if (begin == end) continue;
            // Colour composited behind the current contribution, built back to front.
            Vec3<S> suffix = aux.background;
            for (auto e = end; e-- > begin;) {
                const auto& c = aux.contributions[e];
                const auto& sp = splats[c.splat];
                g_color[c.splat] += g * (c.alpha * c.transmittance);
                const S d_alpha = c.transmittance * g.dot(sp.color - suffix);
                suffix = c.alpha * sp.color + (S(1) - c.alpha) * suffix;

                const S dx = static_cast<S>(x) - sp.mean.x(), dy = static_cast<S>(y) - sp.mean.y();
                const S power = S(-0.5) * (sp.conic[0] * dx * dx + sp.conic[2] * dy * dy) - sp.conic[1] * dx * dy;
                const S gauss = std::exp(power);
                g_opacity[c.splat] += d_alpha * gauss;
                const S d_power = d_alpha * sp.opacity * gauss;
                g_mean[c.splat] += d_power * Vec2<S>(sp.conic[0] * dx + sp.conic[1] * dy, sp.conic[1] * dx + sp.conic[2] * dy);
                g_conic[c.splat] += d_power * Vec3<S>(S(-0.5) * dx * dx, -dx * dy, S(-0.5) * dy * dy);
            }
        }
    }

    GaussianSet<S> grad = GaussianSet<S>::zeros(world.size());
    const Mat3<S> wrot = camera.rotation.cast<S>();
    const S fx = static_cast<S>(camera.fx), fy = static_cast<S>(camera.fy);
    for (std::size_t s = 0; s < ns; ++s) {
        const auto& sp = splats[s];
        const Index i = sp.index;
        grad.color.row(i) = g_color[s].transpose();
        grad.opacity[i] = g_opacity[s];

        const auto pt = projection_terms(world, camera, i);
        const Mat2<S> conic{{sp.conic[0], sp.conic[1]}, {sp.conic[1], sp.conic[2]}};
        Mat2<S> g_conic_m;
        g_conic_m << g_conic[s][0], S(0.5) * g_conic[s][1], S(0.5) * g_conic[s][1], g_conic[s][2];
        const Mat2<S> g_cov2 = -conic * g_conic_m * conic;

        const Mat3<S> g_cov3 = pt.t.transpose() * g_cov2 * pt.t;
        const Eigen::Matrix<S, 2, 3> g_t = S(2) * g_cov2 * pt.t * pt.cov3;
        const Eigen::Matrix<S, 2, 3> g_j = g_t * wrot.transpose();

        const S px = pt.p.x(), py = pt.p.y(), z = pt.p.z();
        const S z2 = z * z, z3 = z2 * z;
        Vec3<S> g_p;
        g_p.x() = g_j(0, 2) * (-fx / z2) + g_mean[s].x() * fx / z;
        g_p.y() = g_j(1, 2) * (-fy / z2) + g_mean[s].y() * fy / z;
        g_p.z() = g_j(0, 0) * (-fx / z2) + g_j(0, 2) * (S(2) * fx * px / z3) + g_j(1, 1) * (-fy / z2) +
                  g_j(1, 2) * (S(2) * fy * py / z3) - g_mean[s].x() * fx * px / z2 - g_mean[s].y() * fy * py / z2;
        grad.position.row(i) = (wrot.transpose() * g_p).transpose();

        const Mat3<S> g_m = S(2) * g_cov3 * pt.m;
        const Vec3<S> scale = world.scale.row(i).transpose();
        const Mat3<S> g_rot = g_m * scale.asDiagonal();
        for (int k = 0; k < 3; ++k) grad.scale(i, k) = g_m.col(k).dot(pt.rot.col(k));
        grad.rotation.row(i) = quat::to_matrix_backward<S>(world.rotation.row(i).transpose(), g_rot).transpose();
    }
    return grad;
}

template bool project_gaussian(const GaussianSet<float>&, const Camera&, Index, ProjectedSplat<float>&);
template bool project_gaussian(const GaussianSet<double>&, const Camera&, Index, ProjectedSplat<double>&);
template SplatList<float> preprocess(const GaussianSet<float>&, const Camera&);
template SplatList<double> preprocess(const GaussianSet<double>&, const Camera&);
template RenderResult<float> rasterize(const SplatList<float>&, const Camera&, const Vec3<float>&, ThreadPool*);
template RenderResult<double> rasterize(const SplatList<double>&, const Camera&, const Vec3<double>&, ThreadPool*);
template GaussianSet<float> render_backward(const GaussianSet<float>&, const Camera&, const SplatList<float>&,
                                            const RenderAux<float>&, const Image<float>&);
template GaussianSet<double> render_backward(const GaussianSet<double>&, const Camera&, const SplatList<double>&,
                                             const RenderAux<double>&, const Image<double>&);

}  // namespace gsavatar
