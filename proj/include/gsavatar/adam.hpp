#pragma once

#include "gsavatar/types.hpp"

#include <cmath>
#include <cstdint>

namespace gsavatar {

struct AdamHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// First and second moments of one parameter tensor, flattened in storage order.
template <typename S>
struct AdamMoments {
    VecX<S> m, v;

    bool empty() const { return m.size() == 0; }
    void resize(Index n) {
        m = VecX<S>::Zero(n);
        v = VecX<S>::Zero(n);
    }
};

/// One bias-corrected Adam update of a contiguous parameter block; `step` is
/// the 1-based count of updates including this one.
template <typename S, typename P, typename G>
void adam_update(Eigen::DenseBase<P>& params, const Eigen::DenseBase<G>& grads, AdamMoments<S>& moments, double lr,
                 std::int64_t step, const AdamHyper& hyper = {}) {
    const Index n = params.size();
    if (grads.size() != n) throw ConfigError("adam_update: gradient size does not match parameters");
    if (moments.empty()) moments.resize(n);
    if (moments.m.size() != n) throw ConfigError("adam_update: moment size does not match parameters");

    Eigen::Map<VecX<S>> p(params.derived().data(), n);
    const auto& plain = grads.derived().eval();  // no copy for plain matrices
    const Eigen::Map<const VecX<S>> g(plain.data(), n);
    const S b1 = static_cast<S>(hyper.beta1), b2 = static_cast<S>(hyper.beta2);
    moments.m = b1 * moments.m + (S(1) - b1) * g;
    moments.v = b2 * moments.v + (S(1) - b2) * g.cwiseProduct(g);
    const double t = static_cast<double>(step);
    const S c1 = static_cast<S>(1.0 - std::pow(hyper.beta1, t));
    const S c2 = static_cast<S>(1.0 - std::pow(hyper.beta2, t));
    const S rate = static_cast<S>(lr), eps = static_cast<S>(hyper.eps);
    p.array() -= rate * (moments.m.array() / c1) / ((moments.v.array() / c2).sqrt() + eps);
}

}  // namespace gsavatar
