#pragma once

#include "gsavatar/avatar_model.hpp"
#include "gsavatar/dataset.hpp"
#include "gsavatar/scheduler.hpp"

#include <cstdint>
#include <string>

namespace gsavatar {

struct SynthConfig {
    std::size_t frames = 200;
    int size = 64;                 // square images
    int expressions = 10;          // H = expressions + 3
    int uv_resolution = 32;
    Index true_blendshapes = 4;    // at most 4 hand-set deltas
    std::string trajectory = "sinusoid";  // "sinusoid" or "static"

    void validate() const;
};

struct SynthOutput {
    SequenceDataset dataset;
    AvatarModel<float> truth;
};

/// Deterministic synthetic capture: the default rig, a ground-truth avatar
/// bound at the dataset's UV resolution (patterned colors, anisotropic disks,
/// expression-driven deltas whose weights depend on the last two expression
/// coefficients and the pose), and frames rendered over black and stored as
/// 8-bit straight-alpha RGBA. Frame 0 has theta = 0.
SynthOutput synth_generate(const SynthConfig& config, std::uint64_t seed, ThreadPool* pool = nullptr);

/// Camera used by the generator: looking down -z from z = 4, focal 1.6 * size.
Camera synth_camera(int size);

/// theta of frame i for the given trajectory type.
VecX<double> synth_theta(const SynthConfig& config, std::size_t frame);

/// Composites a black-background render and its final transmittance into a
/// straight-alpha RGBA image, quantized to 8 bits.
RgbaImage unpremultiply(const Image<float>& premultiplied, const VecX<float>& transmittance);

}  // namespace gsavatar
