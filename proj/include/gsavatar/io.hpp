#pragma once

#include "gsavatar/avatar_model.hpp"
#include "gsavatar/color_init.hpp"
#include "gsavatar/dataset.hpp"
#include "gsavatar/online.hpp"
#include "gsavatar/trainer.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace gsavatar {

namespace fs = std::filesystem;

/// 8-bit RGBA PNG, straight alpha.
RgbaImage read_png(const fs::path& path);
void write_png(const fs::path& path, const RgbaImage& image);

/// Opaque RGB image to RGBA (alpha 1) for writing.
template <typename S>
RgbaImage to_rgba(const Image<S>& image) {
    RgbaImage out{image.width, image.height, RowMatX4<float>(image.pixels.rows(), 4)};
    out.pixels.leftCols<3>() = image.pixels.template cast<float>();
    out.pixels.col(3).setOnes();
    return out;
}

/// Rounds every channel to the nearest multiple of 1/255 after clamping to [0, 1].
RgbaImage quantize(const RgbaImage& image);

/// Directory layout: frames/NNNNNN.png, params.json, rig.json.
void save_sequence(const fs::path& dir, const SequenceDataset& dataset);

/// Throws IoError naming the file and field for missing files, malformed
/// JSON, dimension mismatches or a frame count that disagrees with params.json.
SequenceDataset load_sequence(const fs::path& dir);

struct ModelFile {
    AvatarModel<float> model;
    ColorInitState color_state;
};

/// Little-endian binary layout:
///   "RGBA" | u32 version=1 | u32 N | u32 K | u32 H | u32 hidden
///   f32 G0 position[N*3] rotation[N*4] scale[N*3] opacity[N] color[N*3]
///   for k in K: f32 position[N*3] rotation[N*4] color[N*3]
///   f32 w1[hidden*H] b1[hidden] w2[hidden*hidden] b2[hidden] w3[K*hidden] b3[K]  (row major)
///   u32 triangle[N] | f32 barycentric[N*3] | u8 visited[ceil(N/8)] (LSB first)
void save_model(const fs::path& path, const AvatarModel<float>& model, const ColorInitState& state);

/// Strict inverse of save_model: bad magic, version or length throw IoError
/// before any model is returned.
ModelFile load_model(const fs::path& path);

void write_metrics_log(const fs::path& path, const std::vector<StepRecord>& log);
std::vector<StepRecord> read_metrics_log(const fs::path& path);

/// One record per streamed frame: frame, min_l1 (null if never sampled), final_l1.
void write_forgetting_report(const fs::path& path, const std::vector<FrameLoss>& frames);

/// Rig parameter list: a JSON array of arrays.
std::vector<VecX<double>> read_theta_file(const fs::path& path, Index expected_dim);

}  // namespace gsavatar
