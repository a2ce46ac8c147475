#include "gsavatar/rig.hpp"

#include <Eigen/Geometry>

#include <cmath>
#include <numbers>
#include <string>

namespace gsavatar {

void ParametricHeadRig::validate() const {
    const Index v = vertex_count();
    if (uv.rows() != v) throw ConfigError("rig uv count does not match vertex count");
    if (pose_dim != 3) throw ConfigError("rig pose_dim must be 3 (axis-angle)");
    for (std::size_t e = 0; e < expr_bases.size(); ++e) {
        if (expr_bases[e].rows() != v) {
            throw ConfigError("rig expression basis " + std::to_string(e) + " has wrong vertex count");
        }
    }
    for (Index i = 0; i < uv.rows(); ++i) {
        if (uv(i, 0) < 0.0 || uv(i, 0) > 1.0 || uv(i, 1) < 0.0 || uv(i, 1) > 1.0) {
            throw ConfigError("rig uv coordinate " + std::to_string(i) + " outside [0,1]");
        }
    }
    for (Index f = 0; f < face_count(); ++f) {
        for (int c = 0; c < 3; ++c) {
            if (faces(f, c) < 0 || faces(f, c) >= v) {
                throw ConfigError("rig face " + std::to_string(f) + " references invalid vertex");
            }
        }
        const Eigen::Vector2d a = uv.row(faces(f, 0)), b = uv.row(faces(f, 1)), c = uv.row(faces(f, 2));
        const double area = (b - a).x() * (c - a).y() - (b - a).y() * (c - a).x();
        if (std::abs(area) < 1e-12) throw DegenerateTriangleError(static_cast<std::size_t>(f));
    }
}

Mat3<double> axis_angle_matrix(const Vec3<double>& axis_angle) {
    const double angle = axis_angle.norm();
    if (angle == 0.0) return Mat3<double>::Identity();
    return Eigen::AngleAxisd(angle, axis_angle / angle).toRotationMatrix();
}

ParametricHeadRig make_default_rig(const RigOptions& o) {
    using std::numbers::pi;
    const int rows = o.latitude_bands, cols = o.longitude_segments;
    if (rows < 1 || cols < 3 || o.expressions < 0) throw ConfigError("invalid rig options");

    ParametricHeadRig rig;
    const Index nv = static_cast<Index>(rows + 1) * (cols + 1);
    rig.base_vertices.resize(nv, 3);
    rig.uv.resize(nv, 2);
    RowMatX3<double> normals(nv, 3);
    Eigen::VectorXd lat(nv), lon(nv);

    for (int r = 0; r <= rows; ++r) {
        const double v = static_cast<double>(r) / rows;
        const double phi = -o.latitude_limit + 2.0 * o.latitude_limit * v;
        for (int c = 0; c <= cols; ++c) {
            const double u = static_cast<double>(c) / cols;
            const double lambda = 2.0 * pi * u - pi;  // front of the face (+z) at u = 0.5
            const Index i = static_cast<Index>(r) * (cols + 1) + c;
            const Eigen::Vector3d dir(std::cos(phi) * std::sin(lambda), std::sin(phi),
                                      std::cos(phi) * std::cos(lambda));
            rig.base_vertices.row(i) = dir.cwiseProduct(o.radii);
            normals.row(i) = dir.cwiseQuotient(o.radii).normalized();
            rig.uv(i, 0) = u;
            rig.uv(i, 1) = v;
            lat[i] = phi;
            lon[i] = lambda;
        }
    }

    rig.faces.resize(static_cast<Index>(rows) * cols * 2, 3);
    Index f = 0;
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            const std::int32_t a = r * (cols + 1) + c, b = a + 1, d = a + (cols + 1), e = d + 1;
            rig.faces.row(f++) << a, b, e;
            rig.faces.row(f++) << a, e, d;
        }
    }

    for (int e = 0; e < o.expressions; ++e) {
        const double k_lat = 1.0 + (e % 3);
        const double k_lon = 1.0 + (e / 3) % 3;
        const double phase_lat = 0.7 * e;
        const double phase_lon = 1.3 * e + 0.4;
        RowMatX3<double> basis(nv, 3);
        for (Index i = 0; i < nv; ++i) {
            const double front = 0.5 * (1.0 + std::cos(lon[i]));
            const double amp = o.expression_amplitude * front *
                               std::sin(k_lat * 2.0 * lat[i] + phase_lat) *
                               std::cos(k_lon * lon[i] + phase_lon);
            basis.row(i) = amp * normals.row(i);
        }
        rig.expr_bases.push_back(std::move(basis));
    }
    rig.pose_dim = 3;
    return rig;
}

Mesh rig_evaluate(const ParametricHeadRig& rig, const VecX<double>& theta) {
    if (theta.size() != rig.param_dim()) {
        throw ConfigError("rig parameter dimension " + std::to_string(theta.size()) + " != " +
                          std::to_string(rig.param_dim()));
    }
    RowMatX3<double> verts = rig.base_vertices;
    for (Index e = 0; e < rig.expression_count(); ++e) {
        if (theta[e] != 0.0) verts += theta[e] * rig.expr_bases[static_cast<std::size_t>(e)];
    }
    const Vec3<double> pose = theta.segment<3>(rig.expression_count());
    if (pose.squaredNorm() != 0.0) {
        const Mat3<double> rot = axis_angle_matrix(pose);
        verts = verts * rot.transpose();
    }
    return {std::move(verts)};
}

}  // namespace gsavatar
