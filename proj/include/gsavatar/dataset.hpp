#pragma once

#include "gsavatar/renderer.hpp"
#include "gsavatar/rig.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace gsavatar {

/// 8-bit RGBA frame decoded to [0, 1]; straight (not premultiplied) alpha.
struct RgbaImage {
    int width = 0, height = 0;
    RowMatX4<float> pixels;
};

/// rgb * a + background * (1 - a), per pixel.
template <typename S>
Image<S> composite(const RgbaImage& rgba, const Vec3<S>& background) {
    Image<S> out{rgba.width, rgba.height, RowMatX3<S>(rgba.pixels.rows(), 3)};
    const auto rgb = rgba.pixels.leftCols<3>().template cast<S>();
    const auto alpha = rgba.pixels.col(3).template cast<S>();
    out.pixels = rgb.array().colwise() * alpha.array();
    out.pixels += ((S(1) - alpha.array()).matrix() * background.transpose());
    return out;
}

/// Frames, per-frame rig parameters, camera and rig of one captured (here:
/// synthesized) sequence.
struct SequenceDataset {
    Camera camera;
    ParametricHeadRig rig;
    std::vector<VecX<double>> theta;
    std::vector<RgbaImage> frames;
    int uv_resolution = 32;
    std::string background = "black";  // convention used for evaluation

    std::size_t size() const { return frames.size(); }
    Index param_dim() const { return rig.param_dim(); }

    /// Throws ConfigError naming the offending frame.
    void validate() const;
};

/// Train on the leading frames and hold out the tail: 350 frames once the
/// sequence has 2000 or more, otherwise the last 17.5% (rounded).
struct HoldoutSplit {
    std::size_t train = 0, test = 0;
    std::vector<std::size_t> train_indices() const;
    std::vector<std::size_t> test_indices() const;
};

HoldoutSplit holdout_split(std::size_t frames);

}  // namespace gsavatar
