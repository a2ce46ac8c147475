#pragma once

#include "gsavatar/adam.hpp"
#include "gsavatar/avatar_model.hpp"
#include "gsavatar/color_init.hpp"
#include "gsavatar/dataset.hpp"
#include "gsavatar/metrics.hpp"
#include "gsavatar/scheduler.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <vector>

namespace gsavatar {

struct LearningRates {
    double position = 0.0008;
    double opacity = 0.25;
    double scale = 0.025;
    double rotation = 0.005;
    double color = 0.0125;
    double delta_position_factor = 0.05;
    double delta_rotation_factor = 0.5;
    double delta_color_factor = 0.5;
    double mlp = 0.001;

    void validate() const;
};

struct TrainConfig {
    Index batch_size = 10;
    std::int64_t steps = 5000;
    LearningRates lr;
    Index blendshapes = 20;
    Index hidden = 128;
    int uv_resolution = 0;  // 0: use the dataset's resolution
    double color_threshold = 0.1;
    bool color_init = true;
    bool reduce = true;  // false: psi = theta[0:K] through a frozen identity-slice MLP
    double initial_scale = 0.05;
    double initial_opacity = 0.5;
    std::uint64_t seed = 0;
    std::optional<double> stop_at_loss;  // stop once the 10-step mean loss reaches this

    void validate() const;
};

/// Per-parameter-tensor gradients of the whole model.
template <typename S>
struct ModelGradients {
    GaussianSet<S> base;
    std::vector<DeltaSet<S>> deltas;
    MlpWeights<S> mlp;

    static ModelGradients zeros(const AvatarModel<S>& model);
    ModelGradients& operator+=(const ModelGradients& o);
    ModelGradients& operator*=(S s);
};

/// Everything one batch item keeps between its forward and backward pass.
template <typename S>
struct ItemForward {
    MlpTape<S> tape;
    GaussianSet<S> raw, activated, world;
    SplatList<S> splats;
    RenderResult<S> render;
};

/// theta -> psi -> blend -> activate -> transform -> preprocess.
template <typename S>
ItemForward<S> forward_geometry(const AvatarModel<S>& model, const VecX<double>& theta, const GaussianFrames& frames,
                                const Camera& camera);

template <typename S>
ItemForward<S> forward_item(const AvatarModel<S>& model, const VecX<double>& theta, const GaussianFrames& frames,
                            const Camera& camera, const Vec3<S>& background);

/// Adjoint of forward_item for dLoss/dImage.
template <typename S>
ModelGradients<S> backward_item(const AvatarModel<S>& model, const ItemForward<S>& fwd, const GaussianFrames& frames,
                                const Camera& camera, const Image<S>& grad_image);

template <typename S>
struct ItemLoss {
    double loss = 0.0;
    ModelGradients<S> grads;
};

/// L1 loss of one frame against target composited over `background`, with
/// gradients for every trainable tensor.
template <typename S>
ItemLoss<S> item_loss(const AvatarModel<S>& model, const VecX<double>& theta, const GaussianFrames& frames,
                      const Camera& camera, const RgbaImage& target, const Vec3<S>& background);

/// Adam state for the 5 base groups, 3 delta groups (per blendshape) and the MLP.
template <typename S>
struct ModelOptimizer {
    AdamHyper hyper;
    std::int64_t step = 0;
    std::vector<AdamMoments<S>> base{5};
    std::vector<std::vector<AdamMoments<S>>> deltas;  // [k][position, rotation, color]
    std::vector<AdamMoments<S>> mlp{6};

    void apply(AvatarModel<S>& model, const ModelGradients<S>& grads, const LearningRates& lr, bool train_mlp);
};

/// One training sample: the frame's precomputed deformation and its target.
struct TrainSample {
    std::size_t frame = 0;
    const VecX<double>* theta = nullptr;
    const GaussianFrames* geometry = nullptr;
    const RgbaImage* target = nullptr;
};

struct StepRecord {
    std::int64_t step = 0;
    double loss = 0.0;
    double wall_ms = 0.0;
};

/// Owns the model and optimizer state. Each step renders and backpropagates
/// the batch with the two-stage scheduler, reduces gradients in item order,
/// takes one Adam step and then runs color initialization on the batch.
template <typename S>
class Trainer {
public:
    Trainer(AvatarModel<S> model, const Camera& camera, const TrainConfig& config, ThreadPool& pool);

    StepRecord step(const std::vector<TrainSample>& batch, const std::vector<Vec3<S>>& backgrounds);

    const AvatarModel<S>& model() const { return model_; }
    AvatarModel<S>& model() { return model_; }
    const ColorInitState& color_state() const { return color_state_; }
    void set_color_state(ColorInitState state) { color_state_ = std::move(state); }
    const StageScheduler& scheduler() const { return scheduler_; }
    std::int64_t steps_done() const { return optimizer_.step; }
    /// Per-item L1 losses of the last step, in batch order.
    const std::vector<double>& item_losses() const { return item_losses_; }

private:
    AvatarModel<S> model_;
    Camera camera_;
    TrainConfig config_;
    ThreadPool& pool_;
    StageScheduler scheduler_;
    ModelOptimizer<S> optimizer_;
    ColorInitState color_state_;
    std::vector<double> item_losses_;
};

/// Fresh model bound to the dataset's rig at the configured UV resolution.
template <typename S>
AvatarModel<S> make_initial_model(const SequenceDataset& dataset, const TrainConfig& config);

/// Deformation frames of the given frames under `bindings`, computed in parallel.
std::vector<GaussianFrames> frame_geometry(const SequenceDataset& dataset, const GaussianBindings& bindings,
                                           const std::vector<std::size_t>& frames, ThreadPool& pool);

template <typename S>
struct TrainResult {
    AvatarModel<S> model;
    ColorInitState color_state;
    std::vector<StepRecord> log;
    std::int64_t steps_run = 0;
};

/// Offline training on `frames` (B frames drawn uniformly per step, each with
/// its own uniform random background). Throws NumericalError carrying the
/// step index if the loss turns non-finite.
template <typename S>
TrainResult<S> train_offline(const SequenceDataset& dataset, const std::vector<std::size_t>& frames,
                             const TrainConfig& config, ThreadPool& pool);

struct FrameScore {
    std::size_t frame = 0;
    double psnr = 0.0;
    double ssim = 0.0;
};

struct EvalReport {
    std::vector<FrameScore> frames;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
};

/// Renders each frame over black and scores it against the target composited
/// over black.
template <typename S>
EvalReport evaluate(const AvatarModel<S>& model, const SequenceDataset& dataset, const std::vector<std::size_t>& frames,
                    ThreadPool& pool);

/// Renders one frame of the model over `background`.
template <typename S>
Image<S> render_frame(const AvatarModel<S>& model, const ParametricHeadRig& rig, const VecX<double>& theta,
                      const Camera& camera, const Vec3<S>& background);

/// Moving average over `window` trailing entries (shorter at the start).
std::vector<double> smoothed_loss(const std::vector<StepRecord>& log, std::size_t window);

/// First step whose `window`-step trailing mean loss is <= threshold; -1 if never.
std::int64_t steps_to_reach(const std::vector<StepRecord>& log, double threshold, std::size_t window = 10);

}  // namespace gsavatar
