#pragma once

#include "gsavatar/types.hpp"

#include <Eigen/Geometry>

#include <cmath>

namespace gsavatar {

/// Structure-of-arrays storage for N Gaussians. Quaternions are (w, x, y, z).
///
/// The same type carries pre-activation parameters (log-scale, opacity and
/// color logits, raw quaternions), post-activation values, and gradients of
/// either; which one a given instance holds is a property of where it came from.
template <typename S>
struct GaussianSet {
    RowMatX3<S> position;
    RowMatX4<S> rotation;
    RowMatX3<S> scale;
    VecX<S> opacity;
    RowMatX3<S> color;

    Index size() const { return position.rows(); }

    static GaussianSet zeros(Index n) {
        GaussianSet g;
        g.position = RowMatX3<S>::Zero(n, 3);
        g.rotation = RowMatX4<S>::Zero(n, 4);
        g.scale = RowMatX3<S>::Zero(n, 3);
        g.opacity = VecX<S>::Zero(n);
        g.color = RowMatX3<S>::Zero(n, 3);
        return g;
    }

    bool consistent() const {
        const Index n = size();
        return rotation.rows() == n && scale.rows() == n && opacity.rows() == n && color.rows() == n;
    }

    template <typename T>
    GaussianSet<T> cast() const {
        GaussianSet<T> g;
        g.position = position.template cast<T>();
        g.rotation = rotation.template cast<T>();
        g.scale = scale.template cast<T>();
        g.opacity = opacity.template cast<T>();
        g.color = color.template cast<T>();
        return g;
    }

    GaussianSet& operator+=(const GaussianSet& o) {
        position += o.position;
        rotation += o.rotation;
        scale += o.scale;
        opacity += o.opacity;
        color += o.color;
        return *this;
    }

    GaussianSet& operator*=(S s) {
        position *= s;
        rotation *= s;
        scale *= s;
        opacity *= s;
        color *= s;
        return *this;
    }

    bool operator==(const GaussianSet& o) const {
        return position == o.position && rotation == o.rotation && scale == o.scale &&
               opacity == o.opacity && color == o.color;
    }
};

/// Blendshape delta: only position, rotation and color are blended.
template <typename S>
struct DeltaSet {
    RowMatX3<S> position;
    RowMatX4<S> rotation;
    RowMatX3<S> color;

    Index size() const { return position.rows(); }

    static DeltaSet zeros(Index n) {
        return {RowMatX3<S>::Zero(n, 3), RowMatX4<S>::Zero(n, 4), RowMatX3<S>::Zero(n, 3)};
    }

    template <typename T>
    DeltaSet<T> cast() const {
        return {position.template cast<T>(), rotation.template cast<T>(), color.template cast<T>()};
    }

    bool operator==(const DeltaSet& o) const {
        return position == o.position && rotation == o.rotation && color == o.color;
    }
};

namespace quat {

/// Hamilton product a ⊗ b, both (w, x, y, z).
template <typename S>
Vec4<S> multiply(const Vec4<S>& a, const Vec4<S>& b) {
    return {a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
            a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
            a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
            a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]};
}

/// Matrix L(a) with a ⊗ b = L(a) b.
template <typename S>
Eigen::Matrix<S, 4, 4> left_matrix(const Vec4<S>& a) {
    Eigen::Matrix<S, 4, 4> m;
    m << a[0], -a[1], -a[2], -a[3],
         a[1], a[0], -a[3], a[2],
         a[2], a[3], a[0], -a[1],
         a[3], -a[2], a[1], a[0];
    return m;
}

/// Rotation matrix of a quaternion, using the unit-quaternion polynomial form.
/// The input is not renormalized, so gradients are taken with respect to the
/// components exactly as passed.
template <typename S>
Mat3<S> to_matrix(const Vec4<S>& q) {
    const S w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3<S> r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
         2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
         2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

/// Adjoint of to_matrix: maps dL/dR to dL/dq.
template <typename S>
Vec4<S> to_matrix_backward(const Vec4<S>& q, const Mat3<S>& g) {
    const S w = q[0], x = q[1], y = q[2], z = q[3];
    Vec4<S> d;
    d[0] = 2 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    d[1] = 2 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2 * x * g(1, 1) - w * g(1, 2) + z * g(2, 0) +
                w * g(2, 1) - 2 * x * g(2, 2));
    d[2] = 2 * (-2 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0) +
                z * g(2, 1) - 2 * y * g(2, 2));
    d[3] = 2 * (-2 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2 * z * g(1, 1) + y * g(1, 2) +
                x * g(2, 0) + y * g(2, 1));
    return d;
}

/// Unit quaternion (w, x, y, z) of a proper rotation matrix.
inline Vec4<double> from_rotation(const Mat3<double>& r) {
    const Eigen::Quaterniond q(r);
    Vec4<double> out(q.w(), q.x(), q.y(), q.z());
    if (out[0] < 0) out = -out;
    return out.normalized();
}

}  // namespace quat

template <typename S>
S sigmoid(S x) {
    return S(1) / (S(1) + std::exp(-x));
}

template <typename S>
S logit(S p) {
    return std::log(p / (S(1) - p));
}

}  // namespace gsavatar
