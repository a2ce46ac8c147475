#include "gsavatar/avatar_model.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace gsavatar {

template <typename S>
void AvatarModel<S>::validate() const {
    const Index n = size();
    if (!base.consistent()) throw ConfigError("base Gaussian arrays differ in length");
    if (deltas.empty()) throw ConfigError("avatar model needs at least one blendshape");
    for (std::size_t k = 0; k < deltas.size(); ++k) {
        const auto& d = deltas[k];
        if (d.position.rows() != n || d.rotation.rows() != n || d.color.rows() != n) {
            throw ConfigError("blendshape " + std::to_string(k) + " does not match base Gaussian count");
        }
    }
    mlp.validate();
    if (mlp.output_dim() != blendshape_count()) throw ConfigError("mlp output does not match blendshape count");
    if (bindings.size() != n) throw ConfigError("binding count does not match Gaussian count");
}

template <typename S>
AvatarModel<S> init_model(const BindResult& binding, Index param_dim, const ModelInit& init) {
    if (init.blendshapes < 1) throw ConfigError("blendshape count must be >= 1");
    const Index n = binding.bindings.size();
    AvatarModel<S> m;
    m.base = GaussianSet<S>::zeros(n);
    m.base.position = binding.tangent_position.template cast<S>();
    m.base.rotation.col(0).setOnes();
    m.base.scale.setConstant(static_cast<S>(std::log(init.initial_scale)));
    m.base.opacity.setConstant(static_cast<S>(logit(init.initial_opacity)));
    m.base.color.setConstant(static_cast<S>(logit(init.initial_color)));
    m.deltas.assign(static_cast<std::size_t>(init.blendshapes), DeltaSet<S>::zeros(n));
    m.mlp = MlpWeights<S>::random(param_dim, init.hidden, init.blendshapes, init.seed);
    m.bindings = binding.bindings;
    return m;
}

template <typename S>
GaussianSet<S> blend(const AvatarModel<S>& model, const VecX<S>& psi) {
    if (psi.size() != model.blendshape_count()) {
        throw ConfigError("blend weight count " + std::to_string(psi.size()) + " != blendshape count " +
                          std::to_string(model.blendshape_count()));
    }
    GaussianSet<S> out = model.base;
    for (Index k = 0; k < psi.size(); ++k) {
        const auto& d = model.deltas[static_cast<std::size_t>(k)];
        const S w = psi[k];
        out.position.noalias() += w * d.position;
        out.rotation.noalias() += w * d.rotation;
        out.color.noalias() += w * d.color;
    }
    return out;
}

template <typename S>
BlendGradients<S> blend_backward(const AvatarModel<S>& model, const VecX<S>& psi, const GaussianSet<S>& grad_out) {
    if (psi.size() != model.blendshape_count()) throw ConfigError("blend_backward: weight count mismatch");
    if (grad_out.size() != model.size() || !grad_out.consistent()) {
        throw ConfigError("blend_backward: gradient shape does not match model");
    }
    BlendGradients<S> g;
    g.base = grad_out;
    g.psi.resize(psi.size());
    g.deltas.reserve(static_cast<std::size_t>(psi.size()));
    for (Index k = 0; k < psi.size(); ++k) {
        const auto& d = model.deltas[static_cast<std::size_t>(k)];
        g.deltas.push_back({psi[k] * grad_out.position, psi[k] * grad_out.rotation, psi[k] * grad_out.color});
        g.psi[k] = d.position.cwiseProduct(grad_out.position).sum() +
                   d.rotation.cwiseProduct(grad_out.rotation).sum() + d.color.cwiseProduct(grad_out.color).sum();
    }
    return g;
}

template <typename S>
GaussianSet<S> activate(const GaussianSet<S>& raw) {
    if (!raw.consistent()) throw ConfigError("activate: Gaussian arrays differ in length");
    GaussianSet<S> out;
    out.position = raw.position;
    out.scale = raw.scale.array().exp().cwiseMax(std::numeric_limits<S>::min()).matrix();
    out.opacity = raw.opacity.unaryExpr([](S x) { return sigmoid(x); });
    out.color = raw.color.unaryExpr([](S x) { return sigmoid(x); });
    out.rotation.resize(raw.size(), 4);
    for (Index i = 0; i < raw.size(); ++i) {
        const S norm = raw.rotation.row(i).norm();
        if (!(norm > std::numeric_limits<S>::min()) || !std::isfinite(norm)) {
            throw NumericalError("zero-norm or non-finite quaternion", static_cast<std::size_t>(i));
        }
        out.rotation.row(i) = raw.rotation.row(i) / norm;
    }
    return out;
}

template <typename S>
GaussianSet<S> activate_backward(const GaussianSet<S>& raw, const GaussianSet<S>& act, const GaussianSet<S>& grad) {
    GaussianSet<S> g;
    g.position = grad.position;
    g.scale = grad.scale.cwiseProduct(act.scale);
    g.opacity = grad.opacity.array() * act.opacity.array() * (S(1) - act.opacity.array());
    g.color = grad.color.array() * act.color.array() * (S(1) - act.color.array());
    g.rotation.resize(raw.size(), 4);
    for (Index i = 0; i < raw.size(); ++i) {
        const S norm = raw.rotation.row(i).norm();
        const auto qhat = act.rotation.row(i);
        const auto gi = grad.rotation.row(i);
        g.rotation.row(i) = (gi - qhat * qhat.dot(gi)) / norm;
    }
    return g;
}

template <typename S>
double orthogonality_metric(const AvatarModel<S>& model) {
    const Index k = model.blendshape_count();
    if (k < 1) throw ConfigError("orthogonality_metric needs at least one blendshape");
    const Index n = model.size();
    const Index d = n * 10;
    Eigen::MatrixXd v(k, d);
    for (Index r = 0; r < k; ++r) {
        const auto& ds = model.deltas[static_cast<std::size_t>(r)];
        v.row(r) << Eigen::Map<const RowMatX<S>>(ds.position.data(), 1, n * 3).template cast<double>(),
            Eigen::Map<const RowMatX<S>>(ds.rotation.data(), 1, n * 4).template cast<double>(),
            Eigen::Map<const RowMatX<S>>(ds.color.data(), 1, n * 3).template cast<double>();
        const double norm = v.row(r).norm();
        if (!(norm > 0.0)) throw NumericalError("degenerate (zero) blendshape basis", static_cast<std::size_t>(r));
        v.row(r) /= norm;
    }
    return (v * v.transpose() - Eigen::MatrixXd::Identity(k, k)).norm();
}

template struct AvatarModel<float>;
template struct AvatarModel<double>;
template AvatarModel<float> init_model(const BindResult&, Index, const ModelInit&);
template AvatarModel<double> init_model(const BindResult&, Index, const ModelInit&);
template GaussianSet<float> blend(const AvatarModel<float>&, const VecX<float>&);
template GaussianSet<double> blend(const AvatarModel<double>&, const VecX<double>&);
template BlendGradients<float> blend_backward(const AvatarModel<float>&, const VecX<float>&, const GaussianSet<float>&);
template BlendGradients<double> blend_backward(const AvatarModel<double>&, const VecX<double>&, const GaussianSet<double>&);
template GaussianSet<float> activate(const GaussianSet<float>&);
template GaussianSet<double> activate(const GaussianSet<double>&);
template GaussianSet<float> activate_backward(const GaussianSet<float>&, const GaussianSet<float>&, const GaussianSet<float>&);
template GaussianSet<double> activate_backward(const GaussianSet<double>&, const GaussianSet<double>&, const GaussianSet<double>&);
template double orthogonality_metric(const AvatarModel<float>&);
template double orthogonality_metric(const AvatarModel<double>&);

}  // namespace gsavatar
