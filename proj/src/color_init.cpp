#include "gsavatar/color_init.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace gsavatar {

bool ColorInitState::all_visited() const {
    return std::all_of(visited.begin(), visited.end(), [](bool v) { return v; });
}

Index ColorInitState::visited_count() const {
    return static_cast<Index>(std::count(visited.begin(), visited.end(), true));
}

template <typename S>
ColorEstimate<S> estimate_colors(const SplatList<S>& list, const RenderAux<S>& aux, const Image<S>& target,
                                 double threshold) {
    if (target.width != aux.width || target.height != aux.height) {
        throw ConfigError("estimate_colors: target image size does not match render");
    }
    const Index n = list.gaussian_count;
    RowMatX3<S> weighted = RowMatX3<S>::Zero(n, 3);
    VecX<S> total = VecX<S>::Zero(n);
    const Index pixels = static_cast<Index>(aux.width) * aux.height;
    for (Index p = 0; p < pixels; ++p) {
        const auto begin = aux.offsets[static_cast<std::size_t>(p)], end = aux.offsets[static_cast<std::size_t>(p) + 1];
        for (auto e = begin; e < end; ++e) {
            const auto& c = aux.contributions[e];
            const Index g = list.splats[c.splat].index;
            const S w = c.weight();
            weighted.row(g) += w * target.pixels.row(p);
            total[g] += w;
        }
    }
    ColorEstimate<S> out;
    out.color = RowMatX3<S>::Zero(n, 3);
    out.eligible.assign(static_cast<std::size_t>(n), false);
    out.max_weight = aux.max_weight;
    for (Index g = 0; g < n; ++g) {
        const bool eligible = aux.max_weight[g] > static_cast<S>(threshold);
        if (eligible && !(total[g] > S(0))) {
            throw std::logic_error("color init: Gaussian " + std::to_string(g) + " eligible with zero total weight");
        }
        out.eligible[static_cast<std::size_t>(g)] = eligible;
        if (total[g] > S(0)) out.color.row(g) = weighted.row(g) / total[g];
    }
    return out;
}

template <typename S>
Index apply_color_init(AvatarModel<S>& model, const ColorEstimate<S>& estimate, ColorInitState& state) {
    constexpr double eps = 1e-4;
    Index written = 0;
    const Index n = model.size();
    if (static_cast<Index>(state.visited.size()) != n || estimate.color.rows() != n) {
        throw ConfigError("apply_color_init: state or estimate size does not match model");
    }
    for (Index g = 0; g < n; ++g) {
        const auto gi = static_cast<std::size_t>(g);
        if (!estimate.eligible[gi] || state.visited[gi]) continue;
        for (int ch = 0; ch < 3; ++ch) {
            const double c = std::clamp(static_cast<double>(estimate.color(g, ch)), eps, 1.0 - eps);
            model.base.color(g, ch) = static_cast<S>(logit(c));
        }
        state.visited[gi] = true;
        ++written;
    }
    return written;
}

template ColorEstimate<float> estimate_colors(const SplatList<float>&, const RenderAux<float>&, const Image<float>&, double);
template ColorEstimate<double> estimate_colors(const SplatList<double>&, const RenderAux<double>&, const Image<double>&, double);
template Index apply_color_init(AvatarModel<float>&, const ColorEstimate<float>&, ColorInitState&);
template Index apply_color_init(AvatarModel<double>&, const ColorEstimate<double>&, ColorInitState&);

}  // namespace gsavatar
