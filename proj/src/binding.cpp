#include "gsavatar/binding.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

namespace gsavatar {

namespace {

constexpr double kBaryGrid = 16777216.0;  // 2^24

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace

void GaussianBindings::validate(Index face_count) const {
    if (barycentric.rows() != size()) throw ConfigError("binding arrays differ in length");
    for (Index i = 0; i < size(); ++i) {
        if (static_cast<Index>(triangle[static_cast<std::size_t>(i)]) >= face_count) {
            throw ConfigError("binding " + std::to_string(i) + " references invalid triangle");
        }
        const auto b = barycentric.row(i);
        if (b.minCoeff() < 0.0 || std::abs(b.sum() - 1.0) > 1e-9) {
            throw ConfigError("binding " + std::to_string(i) + " has invalid barycentric coordinates");
        }
    }
}

std::uint64_t GaussianBindings::checksum() const {
    std::uint64_t h = 1469598103934665603ull;
    h = fnv1a(h, triangle.data(), triangle.size() * sizeof(std::uint32_t));
    h = fnv1a(h, barycentric.data(), static_cast<std::size_t>(barycentric.size()) * sizeof(double));
    return h;
}

Mat3<double> tbn(const Vec3<double>& v0, const Vec3<double>& v1, const Vec3<double>& v2,
                 const Vec2<double>& uv0, const Vec2<double>& uv1, const Vec2<double>& uv2,
                 std::size_t face_index) {
    Mat2<double> m;
    m << uv1.x() - uv0.x(), uv2.x() - uv0.x(),
         uv1.y() - uv0.y(), uv2.y() - uv0.y();
    const double det = m.determinant();
    const Vec3<double> e1 = v1 - v0, e2 = v2 - v0;
    const Vec3<double> cross = e1.cross(e2);
    const double cross_norm = cross.norm();
    if (std::abs(det) < 1e-12 || !(cross_norm >= 1e-12)) throw DegenerateTriangleError(face_index);

    // [T B] = [e1 e2] M^-1, i.e. e1 = M11 T + M21 B and e2 = M12 T + M22 B.
    Eigen::Matrix<double, 3, 2> edges;
    edges << e1, e2;
    const Eigen::Matrix<double, 3, 2> tb = edges * m.inverse();
    Mat3<double> r;
    r.col(0) = tb.col(0);
    r.col(1) = tb.col(1);
    r.col(2) = cross / cross_norm;
    return r;
}

GaussianFrames gaussian_frames(const ParametricHeadRig& rig, const Mesh& mesh, const GaussianBindings& bindings) {
    const Index nf = rig.face_count();
    if (mesh.vertices.rows() != rig.vertex_count()) throw ConfigError("mesh vertex count does not match rig");

    std::vector<Mat3<double>> face_tbn(static_cast<std::size_t>(nf));
    RowMatX4<double> face_rot(nf, 4);
    std::vector<bool> used(static_cast<std::size_t>(nf), false);
    for (auto t : bindings.triangle) {
        if (static_cast<Index>(t) >= nf) throw ConfigError("binding references invalid triangle");
        used[t] = true;
    }
    for (Index f = 0; f < nf; ++f) {
        if (!used[static_cast<std::size_t>(f)]) continue;
        const auto idx = rig.faces.row(f);
        const Mat3<double> r = tbn(mesh.vertices.row(idx[0]).transpose(), mesh.vertices.row(idx[1]).transpose(),
                                   mesh.vertices.row(idx[2]).transpose(), rig.uv.row(idx[0]).transpose(),
                                   rig.uv.row(idx[1]).transpose(), rig.uv.row(idx[2]).transpose(),
                                   static_cast<std::size_t>(f));
        const double t_norm = r.col(0).norm();
        if (!(t_norm > 0.0)) throw DegenerateTriangleError(static_cast<std::size_t>(f));
        Mat3<double> frame;
        frame.col(0) = r.col(0) / t_norm;
        frame.col(2) = r.col(2);
        frame.col(1) = frame.col(2).cross(frame.col(0));
        face_tbn[static_cast<std::size_t>(f)] = r;
        face_rot.row(f) = quat::from_rotation(frame).transpose();
    }

    GaussianFrames out;
    const Index n = bindings.size();
    out.tbn.resize(static_cast<std::size_t>(n));
    out.translation.resize(n, 3);
    out.rotation.resize(n, 4);
    for (Index i = 0; i < n; ++i) {
        const auto f = bindings.triangle[static_cast<std::size_t>(i)];
        const auto idx = rig.faces.row(f);
        const auto b = bindings.barycentric.row(i);
        out.translation.row(i) = b[0] * mesh.vertices.row(idx[0]) + b[1] * mesh.vertices.row(idx[1]) +
                                 b[2] * mesh.vertices.row(idx[2]);
        out.tbn[static_cast<std::size_t>(i)] = face_tbn[f];
        out.rotation.row(i) = face_rot.row(f);
    }
    return out;
}

BindResult bind_gaussians(const ParametricHeadRig& rig, int uv_resolution) {
    if (uv_resolution < 1) throw ConfigError("uv_resolution must be >= 1");
    const int res = uv_resolution;
    const std::size_t texels = static_cast<std::size_t>(res) * static_cast<std::size_t>(res);
    std::vector<std::int64_t> owner(texels, -1);
    std::vector<Eigen::Vector3d> bary(texels);

    for (Index f = 0; f < rig.face_count(); ++f) {
        const auto idx = rig.faces.row(f);
        const Eigen::Vector2d a = rig.uv.row(idx[0]), b = rig.uv.row(idx[1]), c = rig.uv.row(idx[2]);
        const double det = (b - a).x() * (c - a).y() - (b - a).y() * (c - a).x();
        if (std::abs(det) < 1e-12) throw DegenerateTriangleError(static_cast<std::size_t>(f));
        const double umin = std::min({a.x(), b.x(), c.x()}), umax = std::max({a.x(), b.x(), c.x()});
        const double vmin = std::min({a.y(), b.y(), c.y()}), vmax = std::max({a.y(), b.y(), c.y()});
        const int i0 = std::max(0, static_cast<int>(std::floor(umin * res - 0.5)));
        const int i1 = std::min(res - 1, static_cast<int>(std::ceil(umax * res - 0.5)));
        const int j0 = std::max(0, static_cast<int>(std::floor(vmin * res - 0.5)));
        const int j1 = std::min(res - 1, static_cast<int>(std::ceil(vmax * res - 0.5)));
        for (int j = j0; j <= j1; ++j) {
            for (int i = i0; i <= i1; ++i) {
                const std::size_t t = static_cast<std::size_t>(j) * res + i;
                if (owner[t] >= 0) continue;
                const Eigen::Vector2d p((i + 0.5) / res, (j + 0.5) / res);
                const Eigen::Vector2d d = p - a;
                const double l1 = (d.x() * (c - a).y() - d.y() * (c - a).x()) / det;
                const double l2 = ((b - a).x() * d.y() - (b - a).y() * d.x()) / det;
                const double l0 = 1.0 - l1 - l2;
                constexpr double tol = -1e-12;
                if (l0 < tol || l1 < tol || l2 < tol) continue;
                owner[t] = f;
                bary[t] = Eigen::Vector3d(l0, l1, l2);
            }
        }
    }

    BindResult out;
    std::size_t count = 0;
    for (auto o : owner) count += o >= 0 ? 1 : 0;
    if (count == 0) throw ConfigError("rig has no UV coverage at resolution " + std::to_string(res));
    out.bindings.triangle.reserve(count);
    out.bindings.barycentric.resize(static_cast<Index>(count), 3);
    Index row = 0;
    for (std::size_t t = 0; t < texels; ++t) {
        if (owner[t] < 0) continue;
        Eigen::Vector3d b = bary[t].cwiseMax(0.0);
        b /= b.sum();
        const double b0 = std::floor(b[0] * kBaryGrid) / kBaryGrid;
        const double b1 = std::floor(b[1] * kBaryGrid) / kBaryGrid;
        out.bindings.triangle.push_back(static_cast<std::uint32_t>(owner[t]));
        out.bindings.barycentric.row(row++) << b0, b1, 1.0 - b0 - b1;
    }
    out.tangent_position = RowMatX3<double>::Zero(static_cast<Index>(count), 3);
    return out;
}

template <typename S>
GaussianSet<S> transform_to_deformed(const GaussianSet<S>& tangent, const GaussianFrames& frames) {
    const Index n = tangent.size();
    if (frames.size() != n) throw ConfigError("transform: frame count does not match Gaussian count");
    GaussianSet<S> world = tangent;
    for (Index i = 0; i < n; ++i) {
        const Mat3<S> r = frames.tbn[static_cast<std::size_t>(i)].template cast<S>();
        const Vec3<S> x = tangent.position.row(i).transpose();
        world.position.row(i) = (r * x + frames.translation.row(i).transpose().template cast<S>()).transpose();
        const Vec4<S> qf = frames.rotation.row(i).transpose().template cast<S>();
        world.rotation.row(i) = quat::multiply<S>(qf, tangent.rotation.row(i).transpose()).transpose();
    }
    return world;
}

template <typename S>
GaussianSet<S> transform_backward(const GaussianSet<S>& grad_world, const GaussianFrames& frames) {
    const Index n = grad_world.size();
    if (frames.size() != n) throw ConfigError("transform_backward: frame count does not match Gaussian count");
    GaussianSet<S> g = grad_world;
    for (Index i = 0; i < n; ++i) {
        const Mat3<S> r = frames.tbn[static_cast<std::size_t>(i)].template cast<S>();
        g.position.row(i) = (r.transpose() * grad_world.position.row(i).transpose()).transpose();
        const Vec4<S> qf = frames.rotation.row(i).transpose().template cast<S>();
        g.rotation.row(i) = (quat::left_matrix<S>(qf).transpose() * grad_world.rotation.row(i).transpose()).transpose();
    }
    return g;
}

template GaussianSet<float> transform_to_deformed(const GaussianSet<float>&, const GaussianFrames&);
template GaussianSet<double> transform_to_deformed(const GaussianSet<double>&, const GaussianFrames&);
template GaussianSet<float> transform_backward(const GaussianSet<float>&, const GaussianFrames&);
template GaussianSet<double> transform_backward(const GaussianSet<double>&, const GaussianFrames&);

}  // namespace gsavatar
