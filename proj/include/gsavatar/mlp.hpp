#pragma once

#include "gsavatar/types.hpp"

#include <cstdint>

namespace gsavatar {

/// Three fully connected layers, input -> hidden -> hidden -> output, ReLU on
/// the two hidden layers and a linear output layer.
template <typename S>
struct MlpWeights {
    RowMatX<S> w1;  // hidden x input
    VecX<S> b1;
    RowMatX<S> w2;  // hidden x hidden
    VecX<S> b2;
    RowMatX<S> w3;  // output x hidden
    VecX<S> b3;

    Index input_dim() const { return w1.cols(); }
    Index hidden_dim() const { return w1.rows(); }
    Index output_dim() const { return w3.rows(); }

    /// Throws ConfigError unless the layer shapes chain input->hidden->hidden->output.
    void validate() const;

    static MlpWeights zeros(Index input, Index hidden, Index output);

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias.
    static MlpWeights random(Index input, Index hidden, Index output, std::uint64_t seed);

    /// Exact piecewise-linear encoding of psi = map * theta using the identity
    /// relu(x) - relu(-x) = x. Needs hidden >= 2 * output.
    static MlpWeights linear(const RowMatX<S>& map, Index hidden);

    /// psi = theta[0:output] (zero padded when output > input).
    static MlpWeights identity_slice(Index input, Index hidden, Index output);

    template <typename T>
    MlpWeights<T> cast() const {
        return {w1.template cast<T>(), b1.template cast<T>(), w2.template cast<T>(),
                b2.template cast<T>(), w3.template cast<T>(), b3.template cast<T>()};
    }

    MlpWeights& operator+=(const MlpWeights& o);
    MlpWeights& operator*=(S s);
    bool operator==(const MlpWeights& o) const {
        return w1 == o.w1 && b1 == o.b1 && w2 == o.w2 && b2 == o.b2 && w3 == o.w3 && b3 == o.b3;
    }
};

/// Intermediate activations retained for the backward pass.
template <typename S>
struct MlpTape {
    VecX<S> input;
    VecX<S> pre1, act1;
    VecX<S> pre2, act2;
    VecX<S> output;
};

template <typename S>
MlpTape<S> mlp_forward(const MlpWeights<S>& mlp, const VecX<S>& theta);

/// Blendshape weights psi for rig parameters theta.
template <typename S>
VecX<S> map_params(const MlpWeights<S>& mlp, const VecX<S>& theta);

template <typename S>
struct MlpGradients {
    MlpWeights<S> weights;
    VecX<S> theta;
};

template <typename S>
MlpGradients<S> mlp_backward(const MlpWeights<S>& mlp, const MlpTape<S>& tape, const VecX<S>& grad_psi);

template <typename S>
MlpGradients<S> mlp_backward(const MlpWeights<S>& mlp, const VecX<S>& theta, const VecX<S>& grad_psi) {
    return mlp_backward(mlp, mlp_forward(mlp, theta), grad_psi);
}

}  // namespace gsavatar
