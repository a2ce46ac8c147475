#include "gsavatar/dataset.hpp"

#include <numeric>

namespace gsavatar {

void SequenceDataset::validate() const {
    camera.validate();
    rig.validate();
    if (frames.size() != theta.size()) {
        throw ConfigError("dataset has " + std::to_string(frames.size()) + " frames but " +
                          std::to_string(theta.size()) + " parameter vectors");
    }
    const Index h = rig.param_dim();
    for (std::size_t i = 0; i < theta.size(); ++i) {
        if (theta[i].size() != h) {
            throw ConfigError("theta[" + std::to_string(i) + "] has " + std::to_string(theta[i].size()) +
                              " values, expected " + std::to_string(h));
        }
        if (!theta[i].allFinite()) throw ConfigError("theta[" + std::to_string(i) + "] is not finite");
        if (frames[i].width != camera.width || frames[i].height != camera.height) {
            throw ConfigError("frame " + std::to_string(i) + " size does not match the camera");
        }
    }
    if (uv_resolution < 1) throw ConfigError("uv_resolution must be >= 1");
}

HoldoutSplit holdout_split(std::size_t frames) {
    const std::size_t test =
        frames >= 2000 ? 350 : static_cast<std::size_t>(std::llround(0.175 * static_cast<double>(frames)));
    return {frames - test, test};
}

std::vector<std::size_t> HoldoutSplit::train_indices() const {
    std::vector<std::size_t> out(train);
    std::iota(out.begin(), out.end(), std::size_t{0});
    return out;
}

std::vector<std::size_t> HoldoutSplit::test_indices() const {
    std::vector<std::size_t> out(test);
    std::iota(out.begin(), out.end(), train);
    return out;
}

}  // namespace gsavatar
