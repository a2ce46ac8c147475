#include "gsavatar/mlp.hpp"

#include <cmath>
#include <random>
#include <string>

namespace gsavatar {

template <typename S>
void MlpWeights<S>::validate() const {
    const Index in = w1.cols(), hid = w1.rows(), out = w3.rows();
    if (b1.size() != hid || w2.rows() != hid || w2.cols() != hid || b2.size() != hid ||
        w3.cols() != hid || b3.size() != out) {
        throw ConfigError("mlp layer shapes do not chain " + std::to_string(in) + "->" +
                          std::to_string(hid) + "->" + std::to_string(hid) + "->" +
                          std::to_string(out));
    }
}

template <typename S>
MlpWeights<S> MlpWeights<S>::zeros(Index input, Index hidden, Index output) {
    return {RowMatX<S>::Zero(hidden, input), VecX<S>::Zero(hidden), RowMatX<S>::Zero(hidden, hidden),
            VecX<S>::Zero(hidden), RowMatX<S>::Zero(output, hidden), VecX<S>::Zero(output)};
}

template <typename S>
MlpWeights<S> MlpWeights<S>::random(Index input, Index hidden, Index output, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto fill = [&rng](auto& m, Index fan_in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(dist(rng));
    };
    MlpWeights m = zeros(input, hidden, output);
    fill(m.w1, input);
    fill(m.b1, input);
    fill(m.w2, hidden);
    fill(m.b2, hidden);
    fill(m.w3, hidden);
    fill(m.b3, hidden);
    return m;
}

template <typename S>
MlpWeights<S> MlpWeights<S>::linear(const RowMatX<S>& map, Index hidden) {
    const Index out = map.rows(), in = map.cols();
    if (hidden < 2 * out) throw ConfigError("linear mlp encoding needs hidden >= 2 * output");
    MlpWeights m = zeros(in, hidden, out);
    m.w1.topRows(out) = map;
    m.w1.middleRows(out, out) = -map;
    for (Index i = 0; i < 2 * out; ++i) m.w2(i, i) = S(1);
    for (Index k = 0; k < out; ++k) {
        m.w3(k, k) = S(1);
        m.w3(k, out + k) = S(-1);
    }
    return m;
}

template <typename S>
MlpWeights<S> MlpWeights<S>::identity_slice(Index input, Index hidden, Index output) {
    RowMatX<S> map = RowMatX<S>::Zero(output, input);
    for (Index k = 0; k < std::min(input, output); ++k) map(k, k) = S(1);
    return linear(map, hidden);
}

template <typename S>
MlpWeights<S>& MlpWeights<S>::operator+=(const MlpWeights& o) {
    w1 += o.w1;
    b1 += o.b1;
    w2 += o.w2;
    b2 += o.b2;
    w3 += o.w3;
    b3 += o.b3;
    return *this;
}

template <typename S>
MlpWeights<S>& MlpWeights<S>::operator*=(S s) {
    w1 *= s;
    b1 *= s;
    w2 *= s;
    b2 *= s;
    w3 *= s;
    b3 *= s;
    return *this;
}

template <typename S>
MlpTape<S> mlp_forward(const MlpWeights<S>& mlp, const VecX<S>& theta) {
    if (theta.size() != mlp.input_dim()) {
        throw ConfigError("rig parameter dimension " + std::to_string(theta.size()) +
                          " does not match mlp input " + std::to_string(mlp.input_dim()));
    }
    MlpTape<S> t;
    t.input = theta;
    t.pre1 = mlp.w1 * theta + mlp.b1;
    t.act1 = t.pre1.cwiseMax(S(0));
    t.pre2 = mlp.w2 * t.act1 + mlp.b2;
    t.act2 = t.pre2.cwiseMax(S(0));
    t.output = mlp.w3 * t.act2 + mlp.b3;
    return t;
}

template <typename S>
VecX<S> map_params(const MlpWeights<S>& mlp, const VecX<S>& theta) {
    return mlp_forward(mlp, theta).output;
}

template <typename S>
MlpGradients<S> mlp_backward(const MlpWeights<S>& mlp, const MlpTape<S>& tape, const VecX<S>& grad_psi) {
    if (grad_psi.size() != mlp.output_dim()) throw ConfigError("grad_psi length does not match mlp output");
    MlpGradients<S> g;
    g.weights.w3 = grad_psi * tape.act2.transpose();
    g.weights.b3 = grad_psi;
    VecX<S> d2 = mlp.w3.transpose() * grad_psi;
    d2 = (tape.pre2.array() > S(0)).select(d2, S(0));
    g.weights.w2 = d2 * tape.act1.transpose();
    g.weights.b2 = d2;
    VecX<S> d1 = mlp.w2.transpose() * d2;
    d1 = (tape.pre1.array() > S(0)).select(d1, S(0));
    g.weights.w1 = d1 * tape.input.transpose();
    g.weights.b1 = d1;
    g.theta = mlp.w1.transpose() * d1;
    return g;
}

template struct MlpWeights<float>;
template struct MlpWeights<double>;
template MlpTape<float> mlp_forward(const MlpWeights<float>&, const VecX<float>&);
template MlpTape<double> mlp_forward(const MlpWeights<double>&, const VecX<double>&);
template VecX<float> map_params(const MlpWeights<float>&, const VecX<float>&);
template VecX<double> map_params(const MlpWeights<double>&, const VecX<double>&);
template MlpGradients<float> mlp_backward(const MlpWeights<float>&, const MlpTape<float>&, const VecX<float>&);
template MlpGradients<double> mlp_backward(const MlpWeights<double>&, const MlpTape<double>&, const VecX<double>&);

}  // namespace gsavatar
