#pragma once

#include "gsavatar/avatar_model.hpp"
#include "gsavatar/renderer.hpp"

#include <vector>

namespace gsavatar {

/// Which Gaussians already received their one-time color estimate.
struct ColorInitState {
    std::vector<bool> visited;
    double threshold = 0.1;

    explicit ColorInitState(Index n = 0, double delta = 0.1) : visited(static_cast<std::size_t>(n), false), threshold(delta) {}
    bool all_visited() const;
    Index visited_count() const;
};

template <typename S>
struct ColorEstimate {
    RowMatX3<S> color;          // splat-weighted mean of the observed pixels
    std::vector<bool> eligible; // max per-pixel weight above the threshold
    VecX<S> max_weight;
};

/// c[g] = sum_p w_gp I_p / sum_p w_gp over the pixels g contributed to.
/// Throws std::logic_error if a Gaussian is eligible with zero total weight.
template <typename S>
ColorEstimate<S> estimate_colors(const SplatList<S>& splats, const RenderAux<S>& aux, const Image<S>& target,
                                 double threshold);

/// Writes logit(clamp(c, 1e-4, 1 - 1e-4)) into G0's color for every eligible,
/// unvisited Gaussian and marks it visited. Returns how many were written.
template <typename S>
Index apply_color_init(AvatarModel<S>& model, const ColorEstimate<S>& estimate, ColorInitState& state);

}  // namespace gsavatar
