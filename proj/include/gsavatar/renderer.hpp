#pragma once

#include "gsavatar/gaussian_set.hpp"

#include <cstdint>
#include <vector>

namespace gsavatar {

class ThreadPool;

/// Pinhole camera. Pixel (x, y) has its centre at coordinates (x, y).
struct Camera {
    double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
    Mat3<double> rotation = Mat3<double>::Identity();  // world -> camera
    Vec3<double> translation = Vec3<double>::Zero();
    int width = 0, height = 0;

    void validate() const;
    Index pixel_count() const { return static_cast<Index>(width) * height; }
};

/// Row-major RGB image; pixel (x, y) is row y * width + x.
template <typename S>
struct Image {
    int width = 0, height = 0;
    RowMatX3<S> pixels;

    static Image filled(int w, int h, const Vec3<S>& value) {
        Image img{w, h, RowMatX3<S>(static_cast<Index>(w) * h, 3)};
        img.pixels.rowwise() = value.transpose();
        return img;
    }
};

/// Screen-space footprint of one Gaussian after projection.
template <typename S>
struct ProjectedSplat {
    Vec2<S> mean;
    Vec3<S> conic;  // (a, b, c) of the inverse 2D covariance [[a, b], [b, c]]
    S depth;
    Vec3<S> color;
    S opacity;
    S radius;  // 3 sigma of the major axis, pixels
    std::uint32_t index;  // source Gaussian
};

template <typename S>
struct SplatList {
    std::vector<ProjectedSplat<S>> splats;  // culled Gaussians removed, input order kept
    Index gaussian_count = 0;
};

/// One splat's contribution at one pixel: alpha = opacity * G and the
/// transmittance in front of it. Its blend weight is alpha * transmittance.
template <typename S>
struct Contribution {
    std::uint32_t splat;
    S alpha;
    S transmittance;

    S weight() const { return alpha * transmittance; }
};

/// Everything the backward pass and color initialization need from a forward
/// pass. Contributions are stored per pixel in compositing order (CSR layout).
template <typename S>
struct RenderAux {
    int width = 0, height = 0;
    Vec3<S> background = Vec3<S>::Zero();
    VecX<S> transmittance;  // final, per pixel
    VecX<S> max_weight;     // per source Gaussian
    std::vector<std::uint32_t> offsets;
    std::vector<Contribution<S>> contributions;
};

template <typename S>
struct RenderResult {
    Image<S> image;
    RenderAux<S> aux;
};

inline constexpr double kNearPlane = 0.01;
inline constexpr double kMinRadius = 0.3;
inline constexpr double kCovarianceDilation = 0.3;
inline constexpr double kMinAlpha = 1.0 / 255.0;

/// Projects activated world-space Gaussians. Throws NumericalError for a
/// non-finite parameter.
template <typename S>
SplatList<S> preprocess(const GaussianSet<S>& world, const Camera& camera);

/// Single-Gaussian projection; false when the Gaussian is culled.
template <typename S>
bool project_gaussian(const GaussianSet<S>& world, const Camera& camera, Index i, ProjectedSplat<S>& out);

/// Front-to-back compositing with a global depth sort (ties by Gaussian
/// index); pixel = sum_i c_i alpha_i T_i + T_final * background. A splat is
/// considered at a pixel inside its square radius bound, and skipped there
/// when alpha < 1/255. With a pool, rows are split into chunks whose results
/// are merged in row order, so the output does not depend on the worker count.
template <typename S>
RenderResult<S> rasterize(const SplatList<S>& splats, const Camera& camera, const Vec3<S>& background,
                          ThreadPool* pool = nullptr);

template <typename S>
RenderResult<S> render(const GaussianSet<S>& world, const Camera& camera, const Vec3<S>& background) {
    return rasterize(preprocess(world, camera), camera, background);
}

/// Gradient of a scalar loss with respect to the activated world Gaussians,
/// given dLoss/dImage and the retained forward state.
template <typename S>
GaussianSet<S> render_backward(const GaussianSet<S>& world, const Camera& camera, const SplatList<S>& splats,
                               const RenderAux<S>& aux, const Image<S>& grad_image);

}  // namespace gsavatar
