#include "gsavatar/trainer.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

namespace gsavatar {

void LearningRates::validate() const {
    for (double v : {position, opacity, scale, rotation, color, delta_position_factor, delta_rotation_factor,
                     delta_color_factor, mlp}) {
        if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError("learning rates and factors must be positive");
    }
}

void TrainConfig::validate() const {
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (steps < 0) throw ConfigError("step count must be >= 0");
    if (blendshapes < 1) throw ConfigError("blendshape count K must be >= 1");
    if (hidden < 1) throw ConfigError("hidden width must be >= 1");
    if (uv_resolution < 0) throw ConfigError("uv resolution must be >= 0");
    lr.validate();
}

template <typename S>
ModelGradients<S> ModelGradients<S>::zeros(const AvatarModel<S>& model) {
    ModelGradients g;
    const Index n = model.size();
    g.base = GaussianSet<S>::zeros(n);
    g.deltas.assign(model.deltas.size(), DeltaSet<S>::zeros(n));
    const auto& m = model.mlp;
    g.mlp = MlpWeights<S>::zeros(m.input_dim(), m.hidden_dim(), m.output_dim());
    return g;
}

template <typename S>
ModelGradients<S>& ModelGradients<S>::operator+=(const ModelGradients& o) {
    base += o.base;
    for (std::size_t k = 0; k < deltas.size(); ++k) {
        deltas[k].position += o.deltas[k].position;
        deltas[k].rotation += o.deltas[k].rotation;
        deltas[k].color += o.deltas[k].color;
    }
    mlp += o.mlp;
    return *this;
}

template <typename S>
ModelGradients<S>& ModelGradients<S>::operator*=(S s) {
    base *= s;
    for (auto& d : deltas) {
        d.position *= s;
        d.rotation *= s;
        d.color *= s;
    }
    mlp *= s;
    return *this;
}

template <typename S>
ItemForward<S> forward_geometry(const AvatarModel<S>& model, const VecX<double>& theta, const GaussianFrames& frames,
                                const Camera& camera) {
    ItemForward<S> fwd;
    fwd.tape = mlp_forward(model.mlp, VecX<S>(theta.cast<S>()));
    fwd.raw = blend(model, fwd.tape.output);
    fwd.activated = activate(fwd.raw);
    fwd.world = transform_to_deformed(fwd.activated, frames);
    fwd.splats = preprocess(fwd.world, camera);
    return fwd;
}

template <typename S>
ItemForward<S> forward_item(const AvatarModel<S>& model, const VecX<double>& theta, const GaussianFrames& frames,
                            const Camera& camera, const Vec3<S>& background) {
    ItemForward<S> fwd = forward_geometry(model, theta, frames, camera);
    fwd.render = rasterize(fwd.splats, camera, background);
    return fwd;
}

template <typename S>
ModelGradients<S> backward_item(const AvatarModel<S>& model, const ItemForward<S>& fwd, const GaussianFrames& frames,
                                const Camera& camera, const Image<S>& grad_image) {
    const GaussianSet<S> grad_world = render_backward(fwd.world, camera, fwd.splats, fwd.render.aux, grad_image);
    const GaussianSet<S> grad_activated = transform_backward(grad_world, frames);
    const GaussianSet<S> grad_raw = activate_backward(fwd.raw, fwd.activated, grad_activated);
    BlendGradients<S> b = blend_backward(model, fwd.tape.output, grad_raw);
    MlpGradients<S> m = mlp_backward(model.mlp, fwd.tape, b.psi);
    return {std::move(b.base), std::move(b.deltas), std::move(m.weights)};
}

template <typename S>
ItemLoss<S> item_loss(const AvatarModel<S>& model, const VecX<double>& theta, const GaussianFrames& frames,
                      const Camera& camera, const RgbaImage& target, const Vec3<S>& background) {
    const ItemForward<S> fwd = forward_item(model, theta, frames, camera, background);
    const L1Result<S> l1 = l1_loss(fwd.render.image, composite(target, background));
    return {l1.loss, backward_item(model, fwd, frames, camera, l1.grad)};
}

template <typename S>
void ModelOptimizer<S>::apply(AvatarModel<S>& model, const ModelGradients<S>& g, const LearningRates& lr,
                              bool train_mlp) {
    ++step;
    adam_update(model.base.position, g.base.position, base[0], lr.position, step, hyper);
    adam_update(model.base.rotation, g.base.rotation, base[1], lr.rotation, step, hyper);
    adam_update(model.base.scale, g.base.scale, base[2], lr.scale, step, hyper);
    adam_update(model.base.opacity, g.base.opacity, base[3], lr.opacity, step, hyper);
    adam_update(model.base.color, g.base.color, base[4], lr.color, step, hyper);

    deltas.resize(model.deltas.size(), std::vector<AdamMoments<S>>(3));
    for (std::size_t k = 0; k < model.deltas.size(); ++k) {
        auto& d = model.deltas[k];
        adam_update(d.position, g.deltas[k].position, deltas[k][0], lr.position * lr.delta_position_factor, step, hyper);
        adam_update(d.rotation, g.deltas[k].rotation, deltas[k][1], lr.rotation * lr.delta_rotation_factor, step, hyper);
        adam_update(d.color, g.deltas[k].color, deltas[k][2], lr.color * lr.delta_color_factor, step, hyper);
    }
    if (!train_mlp) return;
    adam_update(model.mlp.w1, g.mlp.w1, mlp[0], lr.mlp, step, hyper);
    adam_update(model.mlp.b1, g.mlp.b1, mlp[1], lr.mlp, step, hyper);
    adam_update(model.mlp.w2, g.mlp.w2, mlp[2], lr.mlp, step, hyper);
    adam_update(model.mlp.b2, g.mlp.b2, mlp[3], lr.mlp, step, hyper);
    adam_update(model.mlp.w3, g.mlp.w3, mlp[4], lr.mlp, step, hyper);
    adam_update(model.mlp.b3, g.mlp.b3, mlp[5], lr.mlp, step, hyper);
}

template <typename S>
Trainer<S>::Trainer(AvatarModel<S> model, const Camera& camera, const TrainConfig& config, ThreadPool& pool)
    : model_(std::move(model)),
      camera_(camera),
      config_(config),
      pool_(pool),
      scheduler_(pool),
      color_state_(model_.size(), config.color_threshold) {
    config_.validate();
    model_.validate();
    camera_.validate();
}

template <typename S>
StepRecord Trainer<S>::step(const std::vector<TrainSample>& batch, const std::vector<Vec3<S>>& backgrounds) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t b = batch.size();
    if (b == 0 || backgrounds.size() != b) throw ConfigError("trainer step needs one background per batch item");

    const bool init_colors = config_.color_init && !color_state_.all_visited();
    std::vector<ItemForward<S>> fwd(b);
    std::vector<ModelGradients<S>> grads(b);
    std::vector<ColorEstimate<S>> estimates(init_colors ? b : 0);
    item_losses_.assign(b, 0.0);

    scheduler_.run_two_stage(
        b, [&](std::size_t i) { fwd[i] = forward_geometry(model_, *batch[i].theta, *batch[i].geometry, camera_); },
        [&](std::size_t i) {
            fwd[i].render = rasterize(fwd[i].splats, camera_, backgrounds[i]);
            const Image<S> target = composite(*batch[i].target, backgrounds[i]);
            const L1Result<S> l1 = l1_loss(fwd[i].render.image, target);
            item_losses_[i] = l1.loss;
            grads[i] = backward_item(model_, fwd[i], *batch[i].geometry, camera_, l1.grad);
            if (init_colors) {
                estimates[i] = estimate_colors(fwd[i].splats, fwd[i].render.aux, target, config_.color_threshold);
            }
            fwd[i] = ItemForward<S>{};
        });

    // Fixed item order keeps the reduction independent of worker timing.
    ModelGradients<S> total = std::move(grads[0]);
    double loss = item_losses_[0];
    for (std::size_t i = 1; i < b; ++i) {
        total += grads[i];
        loss += item_losses_[i];
    }
    total *= static_cast<S>(1.0 / static_cast<double>(b));
    loss /= static_cast<double>(b);
    if (!std::isfinite(loss)) {
        throw NumericalError("non-finite training loss at step", static_cast<std::size_t>(optimizer_.step + 1));
    }
    optimizer_.apply(model_, total, config_.lr, config_.reduce);

    if (init_colors) {
        // Several items may make a Gaussian eligible; the one with the largest
        // max weight provides its estimate.
        ColorEstimate<S> merged = estimates[0];
        for (std::size_t i = 1; i < b; ++i) {
            for (Index g = 0; g < model_.size(); ++g) {
                const auto gi = static_cast<std::size_t>(g);
                if (!estimates[i].eligible[gi]) continue;
                if (!merged.eligible[gi] || estimates[i].max_weight[g] > merged.max_weight[g]) {
                    merged.eligible[gi] = true;
                    merged.max_weight[g] = estimates[i].max_weight[g];
                    merged.color.row(g) = estimates[i].color.row(g);
                }
            }
        }
        apply_color_init(model_, merged, color_state_);
    }

    const auto t1 = std::chrono::steady_clock::now();
    return {optimizer_.step, loss, std::chrono::duration<double, std::milli>(t1 - t0).count()};
}

template <typename S>
AvatarModel<S> make_initial_model(const SequenceDataset& dataset, const TrainConfig& config) {
    config.validate();
    const int res = config.uv_resolution > 0 ? config.uv_resolution : dataset.uv_resolution;
    const BindResult bound = bind_gaussians(dataset.rig, res);
    ModelInit init;
    init.blendshapes = config.blendshapes;
    init.hidden = config.hidden;
    init.initial_scale = config.initial_scale;
    init.initial_opacity = config.initial_opacity;
    init.seed = config.seed;
    AvatarModel<S> model = init_model<S>(bound, dataset.param_dim(), init);
    if (!config.reduce) model.mlp = MlpWeights<S>::identity_slice(dataset.param_dim(), config.hidden, config.blendshapes);
    return model;
}

std::vector<GaussianFrames> frame_geometry(const SequenceDataset& dataset, const GaussianBindings& bindings,
                                           const std::vector<std::size_t>& frames, ThreadPool& pool) {
    std::vector<GaussianFrames> out(frames.size());
    pool.parallel_for(frames.size(), [&](std::size_t i) {
        const Mesh mesh = rig_evaluate(dataset.rig, dataset.theta.at(frames[i]));
        out[i] = gaussian_frames(dataset.rig, mesh, bindings);
    });
    return out;
}

template <typename S>
TrainResult<S> train_offline(const SequenceDataset& dataset, const std::vector<std::size_t>& frames,
                             const TrainConfig& config, ThreadPool& pool) {
    if (frames.empty()) throw ConfigError("train_offline: no training frames");
    Trainer<S> trainer(make_initial_model<S>(dataset, config), dataset.camera, config, pool);
    const std::vector<GaussianFrames> geometry = frame_geometry(dataset, trainer.model().bindings, frames, pool);

    std::mt19937_64 rng(config.seed);
    std::uniform_int_distribution<std::size_t> pick(0, frames.size() - 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    TrainResult<S> result;
    std::vector<TrainSample> batch(static_cast<std::size_t>(config.batch_size));
    std::vector<Vec3<S>> backgrounds(batch.size());
    for (std::int64_t s = 0; s < config.steps; ++s) {
        for (std::size_t i = 0; i < batch.size(); ++i) {
            const std::size_t j = pick(rng);
            batch[i] = {frames[j], &dataset.theta[frames[j]], &geometry[j], &dataset.frames[frames[j]]};
            backgrounds[i] = Vec3<double>(unit(rng), unit(rng), unit(rng)).cast<S>();
        }
        result.log.push_back(trainer.step(batch, backgrounds));
        if (config.stop_at_loss && result.log.size() >= 10) {
            const auto tail = std::vector<StepRecord>(result.log.end() - 10, result.log.end());
            if (steps_to_reach(tail, *config.stop_at_loss) >= 0) break;
        }
    }
    result.steps_run = trainer.steps_done();
    result.model = trainer.model();
    result.color_state = trainer.color_state();
    return result;
}

template <typename S>
Image<S> render_frame(const AvatarModel<S>& model, const ParametricHeadRig& rig, const VecX<double>& theta,
                      const Camera& camera, const Vec3<S>& background) {
    const GaussianFrames frames = gaussian_frames(rig, rig_evaluate(rig, theta), model.bindings);
    return forward_item(model, theta, frames, camera, background).render.image;
}

template <typename S>
EvalReport evaluate(const AvatarModel<S>& model, const SequenceDataset& dataset, const std::vector<std::size_t>& frames,
                    ThreadPool& pool) {
    EvalReport report;
    report.frames.resize(frames.size());
    const Vec3<S> black = Vec3<S>::Zero();
    pool.parallel_for(frames.size(), [&](std::size_t i) {
        const std::size_t f = frames[i];
        const Image<S> pred = render_frame(model, dataset.rig, dataset.theta.at(f), dataset.camera, black);
        const Image<S> target = composite(dataset.frames.at(f), black);
        report.frames[i] = {f, psnr(pred, target), ssim(pred, target)};
    });
    for (const auto& s : report.frames) {
        report.mean_psnr += s.psnr;
        report.mean_ssim += s.ssim;
    }
    if (!frames.empty()) {
        report.mean_psnr /= static_cast<double>(frames.size());
        report.mean_ssim /= static_cast<double>(frames.size());
    }
    return report;
}

std::vector<double> smoothed_loss(const std::vector<StepRecord>& log, std::size_t window) {
    std::vector<double> out(log.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < log.size(); ++i) {
        sum += log[i].loss;
        if (i >= window) sum -= log[i - window].loss;
        out[i] = sum / static_cast<double>(std::min(i + 1, window));
    }
    return out;
}

std::int64_t steps_to_reach(const std::vector<StepRecord>& log, double threshold, std::size_t window) {
    if (log.size() < window) return -1;
    // Re-summing the trailing window keeps the check exact and cheap at this size.
    for (std::size_t i = window - 1; i < log.size(); ++i) {
        double sum = 0.0;
        for (std::size_t j = i + 1 - window; j <= i; ++j) sum += log[j].loss;
        if (sum / static_cast<double>(window) <= threshold) return log[i].step;
    }
    return -1;
}

#define GSAVATAR_INSTANTIATE(S)                                                                                     \
    template struct ModelGradients<S>;                                                                             \
    template struct ModelOptimizer<S>;                                                                             \
    template class Trainer<S>;                                                                                     \
    template ItemForward<S> forward_geometry(const AvatarModel<S>&, const VecX<double>&, const GaussianFrames&,    \
                                             const Camera&);                                                       \
    template ItemForward<S> forward_item(const AvatarModel<S>&, const VecX<double>&, const GaussianFrames&,        \
                                         const Camera&, const Vec3<S>&);                                           \
    template ModelGradients<S> backward_item(const AvatarModel<S>&, const ItemForward<S>&, const GaussianFrames&,  \
                                             const Camera&, const Image<S>&);                                      \
    template ItemLoss<S> item_loss(const AvatarModel<S>&, const VecX<double>&, const GaussianFrames&,              \
                                   const Camera&, const RgbaImage&, const Vec3<S>&);                               \
    template AvatarModel<S> make_initial_model(const SequenceDataset&, const TrainConfig&);                        \
    template TrainResult<S> train_offline(const SequenceDataset&, const std::vector<std::size_t>&,                 \
                                          const TrainConfig&, ThreadPool&);                                        \
    template Image<S> render_frame(const AvatarModel<S>&, const ParametricHeadRig&, const VecX<double>&,           \
                                   const Camera&, const Vec3<S>&);                                                 \
    template EvalReport evaluate(const AvatarModel<S>&, const SequenceDataset&, const std::vector<std::size_t>&,   \
                                 ThreadPool&);

GSAVATAR_INSTANTIATE(float)
GSAVATAR_INSTANTIATE(double)

#undef GSAVATAR_INSTANTIATE

}  // namespace gsavatar
