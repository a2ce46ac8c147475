#pragma once

#include "gsavatar/binding.hpp"
#include "gsavatar/gaussian_set.hpp"
#include "gsavatar/mlp.hpp"

#include <cstdint>
#include <vector>

namespace gsavatar {

/// Base Gaussians G0 in tangent space, K blendshape deltas, the parameter ->
/// weight MLP, and the mesh bindings shared by all of them.
template <typename S>
struct AvatarModel {
    GaussianSet<S> base;
    std::vector<DeltaSet<S>> deltas;
    MlpWeights<S> mlp;
    GaussianBindings bindings;

    Index size() const { return base.size(); }
    Index blendshape_count() const { return static_cast<Index>(deltas.size()); }

    /// Throws ConfigError when any array disagrees with N, K or the MLP shapes.
    void validate() const;

    template <typename T>
    AvatarModel<T> cast() const {
        AvatarModel<T> m;
        m.base = base.template cast<T>();
        for (const auto& d : deltas) m.deltas.push_back(d.template cast<T>());
        m.mlp = mlp.template cast<T>();
        m.bindings = bindings;
        return m;
    }
};

struct ModelInit {
    Index blendshapes = 20;
    Index hidden = 128;
    double initial_scale = 0.05;    // world units, isotropic
    double initial_opacity = 0.5;   // post-activation
    double initial_color = 0.5;     // post-activation, all channels
    std::uint64_t seed = 0;
};

/// Fresh model for training: G0 at the bound surface points with default
/// attributes, zero deltas, and a randomly initialized MLP.
template <typename S>
AvatarModel<S> init_model(const BindResult& binding, Index param_dim, const ModelInit& init);

/// Pre-activation Gaussians G0 + sum_k psi_k dG_k. Opacity and scale are G0's.
template <typename S>
GaussianSet<S> blend(const AvatarModel<S>& model, const VecX<S>& psi);

template <typename S>
struct BlendGradients {
    GaussianSet<S> base;
    std::vector<DeltaSet<S>> deltas;
    VecX<S> psi;
};

template <typename S>
BlendGradients<S> blend_backward(const AvatarModel<S>& model, const VecX<S>& psi, const GaussianSet<S>& grad_out);

/// sigmoid on opacity and color, exp on scale, unit-normalized rotation.
/// Throws NumericalError naming the Gaussian whose quaternion has zero norm.
template <typename S>
GaussianSet<S> activate(const GaussianSet<S>& raw);

/// Gradient with respect to the raw input given the post-activation gradient.
template <typename S>
GaussianSet<S> activate_backward(const GaussianSet<S>& raw, const GaussianSet<S>& activated,
                                 const GaussianSet<S>& grad_activated);

/// Frobenius norm of V V^T - I, V holding the unit-normalized flattened
/// deltas as rows. A zero delta throws NumericalError with its index.
template <typename S>
double orthogonality_metric(const AvatarModel<S>& model);

}  // namespace gsavatar
