#pragma once

#include "gsavatar/gaussian_set.hpp"
#include "gsavatar/rig.hpp"

#include <cstdint>
#include <vector>

namespace gsavatar {

/// Triangle + barycentric coordinates of every Gaussian, fixed after binding.
/// Barycentrics lie on a 2^-24 grid so they survive float32 storage unchanged
/// and sum to exactly one.
struct GaussianBindings {
    std::vector<std::uint32_t> triangle;
    RowMatX3<double> barycentric;

    Index size() const { return static_cast<Index>(triangle.size()); }
    void validate(Index face_count) const;
    /// FNV-1a over the raw bytes of both arrays.
    std::uint64_t checksum() const;
    bool operator==(const GaussianBindings& o) const {
        return triangle == o.triangle && barycentric == o.barycentric;
    }
};

/// Tangent/bitangent/normal columns of one triangle, exactly as solved from
/// its edges and UV differences (T and B are not orthonormalized).
Mat3<double> tbn(const Vec3<double>& v0, const Vec3<double>& v1, const Vec3<double>& v2,
                 const Vec2<double>& uv0, const Vec2<double>& uv1, const Vec2<double>& uv2,
                 std::size_t face_index = 0);

/// Per-Gaussian deformation for one mesh: TBN matrix, barycentric anchor,
/// and the unit quaternion of the orthonormalized frame (T/|T|, N x T/|T|, N)
/// used to compose Gaussian rotations.
struct GaussianFrames {
    std::vector<Mat3<double>> tbn;
    RowMatX3<double> translation;
    RowMatX4<double> rotation;

    Index size() const { return translation.rows(); }
};

GaussianFrames gaussian_frames(const ParametricHeadRig& rig, const Mesh& mesh, const GaussianBindings& bindings);

struct BindResult {
    GaussianBindings bindings;
    RowMatX3<double> tangent_position;  // all zero: Gaussians start on the surface
};

/// One Gaussian per UV texel centre covered by a face in UV space. Texels are
/// visited row-major (v outer, u inner); a texel covered by several faces
/// binds to the first in face order.
BindResult bind_gaussians(const ParametricHeadRig& rig, int uv_resolution);

/// x_world = R x_tangent + t; q_world = q_frame (x) q_tangent; the remaining
/// channels pass through.
template <typename S>
GaussianSet<S> transform_to_deformed(const GaussianSet<S>& tangent, const GaussianFrames& frames);

template <typename S>
GaussianSet<S> transform_to_deformed(const GaussianSet<S>& tangent, const ParametricHeadRig& rig,
                                     const Mesh& mesh, const GaussianBindings& bindings) {
    return transform_to_deformed(tangent, gaussian_frames(rig, mesh, bindings));
}

/// Adjoint of transform_to_deformed with the mesh held constant.
template <typename S>
GaussianSet<S> transform_backward(const GaussianSet<S>& grad_world, const GaussianFrames& frames);

}  // namespace gsavatar
