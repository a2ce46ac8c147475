#pragma once

#include "gsavatar/types.hpp"

#include <vector>

namespace gsavatar {

using FaceArray = Eigen::Matrix<std::int32_t, Eigen::Dynamic, 3, Eigen::RowMajor>;
using UvArray = Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor>;

/// Synthetic stand-in for a 3D morphable head model: a template mesh with UV
/// layout, linear per-vertex expression bases, and a global axis-angle pose.
/// Rig parameters are laid out as [expression coefficients..., pose (3)].
struct ParametricHeadRig {
    RowMatX3<double> base_vertices;
    FaceArray faces;
    UvArray uv;
    std::vector<RowMatX3<double>> expr_bases;
    Index pose_dim = 3;

    Index vertex_count() const { return base_vertices.rows(); }
    Index face_count() const { return faces.rows(); }
    Index expression_count() const { return static_cast<Index>(expr_bases.size()); }
    Index param_dim() const { return expression_count() + pose_dim; }

    /// Checks face indices, UV ranges, per-face UV area and basis shapes.
    void validate() const;
};

struct Mesh {
    RowMatX3<double> vertices;
};

struct RigOptions {
    int latitude_bands = 20;
    int longitude_segments = 30;
    int expressions = 10;
    double latitude_limit = 1.2;  // radians; the caps above/below are open
    Eigen::Vector3d radii{0.8, 1.0, 0.9};
    double expression_amplitude = 0.05;
};

/// Ellipsoidal head of (bands+1)*(segments+1) vertices with a UV seam at the
/// back of the head, plus smooth sinusoidal expression fields along the
/// surface normal that fade out towards the back.
ParametricHeadRig make_default_rig(const RigOptions& options = {});

/// vertices = rotation(theta_pose) * (base + sum_e theta_e * expr_base_e)
Mesh rig_evaluate(const ParametricHeadRig& rig, const VecX<double>& theta);

template <typename S>
Mesh rig_evaluate(const ParametricHeadRig& rig, const VecX<S>& theta) {
    return rig_evaluate(rig, VecX<double>(theta.template cast<double>()));
}

/// Axis-angle vector to rotation matrix (identity for the zero vector).
Mat3<double> axis_angle_matrix(const Vec3<double>& axis_angle);

}  // namespace gsavatar
