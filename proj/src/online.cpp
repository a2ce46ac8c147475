#include "gsavatar/online.hpp"

#include <chrono>
#include <condition_variable>
#include <limits>
#include <map>
#include <mutex>
#include <thread>

namespace gsavatar {

void OnlineConfig::validate() const {
    train.validate();
    if (!(eta >= 0.0 && eta <= 1.0)) throw ConfigError("eta must lie in [0, 1]");
    if (steps_per_frame < 0 || tail_steps < 0) throw ConfigError("step counts must be >= 0");
    if (mode == StreamMode::WallClock && !(fps > 0.0)) throw ConfigError("fps must be positive");
    if (!use_local && !use_global) throw ConfigError("at least one sample pool must be enabled");
}

double forgetting_gap(const std::vector<FrameLoss>& frames, double fraction) {
    const auto lead = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(frames.size())));
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < lead && i < frames.size(); ++i) {
        if (std::isnan(frames[i].min_l1)) continue;
        sum += frames[i].final_l1 - frames[i].min_l1;
        ++count;
    }
    return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

namespace {

FrameSample make_sample(const SequenceDataset& dataset, const GaussianBindings& bindings, std::size_t frame) {
    auto geometry = std::make_shared<FrameSample::Geometry>();
    geometry->mesh = rig_evaluate(dataset.rig, dataset.theta.at(frame));
    geometry->frames = gaussian_frames(dataset.rig, geometry->mesh, bindings);
    return {frame, &dataset.frames.at(frame), dataset.theta[frame], std::move(geometry)};
}

template <typename S>
class OnlineLoop {
public:
    OnlineLoop(const SequenceDataset& dataset, const std::vector<std::size_t>& stream, const OnlineConfig& config,
               ThreadPool& pool)
        : config_(config),
          trainer_(make_initial_model<S>(dataset, config.train), dataset.camera, config.train, pool),
          pools_(config.local_capacity, config.use_global ? config.global_capacity : 0),
          pool_rng_(config.train.seed ^ 0x9e3779b97f4a7c15ull),
          batch_rng_(config.train.seed),
          eta_(config.use_local ? (config.use_global ? config.eta : 1.0) : 0.0) {
        for (std::size_t i = 0; i < stream.size(); ++i) slot_[stream[i]] = i;
        losses_.resize(stream.size());
        for (std::size_t i = 0; i < stream.size(); ++i) losses_[i].frame = stream[i];
    }

    const GaussianBindings& bindings() const { return trainer_.model().bindings; }

    void ingest(FrameSample sample) {
        pools_.process(std::move(sample), pool_rng_);
        ++ingested_;
    }

    std::size_t ingested() const { return ingested_; }

    void train_step() {
        const auto batch = pools_.sample(static_cast<std::size_t>(config_.train.batch_size), eta_, batch_rng_);
        std::vector<TrainSample> items(batch.size());
        std::vector<Vec3<S>> backgrounds(batch.size());
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        for (std::size_t i = 0; i < batch.size(); ++i) {
            items[i] = {batch[i].index, &batch[i].theta, &batch[i].geometry->frames, batch[i].image};
            backgrounds[i] = Vec3<double>(unit(batch_rng_), unit(batch_rng_), unit(batch_rng_)).cast<S>();
        }
        log_.push_back(trainer_.step(items, backgrounds));
        const auto& l = trainer_.item_losses();
        for (std::size_t i = 0; i < batch.size(); ++i) {
            auto& rec = losses_[slot_.at(batch[i].index)];
            if (std::isnan(rec.min_l1) || l[i] < rec.min_l1) rec.min_l1 = l[i];
        }
    }

    OnlineResult<S> finish(const SequenceDataset& dataset, ThreadPool& pool) {
        // Final per-frame loss, each against its own random background drawn up front.
        std::mt19937_64 eval_rng(config_.train.seed ^ 0x5851f42d4c957f2dull);
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        std::vector<Vec3<S>> backgrounds(losses_.size());
        for (auto& b : backgrounds) b = Vec3<double>(unit(eval_rng), unit(eval_rng), unit(eval_rng)).cast<S>();
        const auto& model = trainer_.model();
        pool.parallel_for(losses_.size(), [&](std::size_t i) {
            const std::size_t f = losses_[i].frame;
            const Image<S> pred = render_frame(model, dataset.rig, dataset.theta[f], dataset.camera, backgrounds[i]);
            losses_[i].final_l1 = l1_loss(pred, composite(dataset.frames[f], backgrounds[i])).loss;
        });
        OnlineResult<S> out;
        out.model = model;
        out.color_state = trainer_.color_state();
        out.log = std::move(log_);
        out.frames = std::move(losses_);
        out.frames_ingested = ingested_;
        out.complete = ingested_ >= config_.warmup_frames;
        return out;
    }

private:
    const OnlineConfig& config_;
    Trainer<S> trainer_;
    SamplePools<FrameSample> pools_;
    std::mt19937_64 pool_rng_, batch_rng_;
    double eta_;
    std::map<std::size_t, std::size_t> slot_;
    std::vector<FrameLoss> losses_;
    std::vector<StepRecord> log_;
    std::size_t ingested_ = 0;
};

}  // namespace

template <typename S>
OnlineResult<S> run_online(const SequenceDataset& dataset, const std::vector<std::size_t>& stream,
                           const OnlineConfig& config, ThreadPool& pool) {
    config.validate();
    OnlineLoop<S> loop(dataset, stream, config, pool);

    if (config.mode == StreamMode::Deterministic) {
        for (std::size_t f : stream) {
            loop.ingest(make_sample(dataset, loop.bindings(), f));
            if (loop.ingested() < config.warmup_frames) continue;
            for (std::int64_t s = 0; s < config.steps_per_frame; ++s) loop.train_step();
        }
    } else {
        // Producer thread replays the stream at the configured rate; the
        // training loop owns the pools and drains the queue between steps.
        std::mutex mutex;
        std::condition_variable arrived;
        std::deque<FrameSample> queue;
        bool done = false;
        std::thread producer([&] {
            const auto period = std::chrono::duration<double>(1.0 / config.fps);
            auto next = std::chrono::steady_clock::now();
            for (std::size_t f : stream) {
                std::this_thread::sleep_until(next);
                next += std::chrono::duration_cast<std::chrono::steady_clock::duration>(period);
                FrameSample s = make_sample(dataset, loop.bindings(), f);
                {
                    std::lock_guard lock(mutex);
                    queue.push_back(std::move(s));
                }
                arrived.notify_one();
            }
            {
                std::lock_guard lock(mutex);
                done = true;
            }
            arrived.notify_one();
        });
        for (;;) {
            std::deque<FrameSample> incoming;
            bool finished = false;
            {
                std::unique_lock lock(mutex);
                if (loop.ingested() < std::max<std::size_t>(1, config.warmup_frames)) {
                    arrived.wait(lock, [&] { return done || !queue.empty(); });
                }
                incoming.swap(queue);
                finished = done && incoming.empty();
            }
            for (auto& s : incoming) loop.ingest(std::move(s));
            if (finished) break;
            if (loop.ingested() >= std::max<std::size_t>(1, config.warmup_frames)) loop.train_step();
        }
        producer.join();
    }
    if (loop.ingested() >= std::max<std::size_t>(1, config.warmup_frames)) {
        for (std::int64_t s = 0; s < config.tail_steps; ++s) loop.train_step();
    }
    return loop.finish(dataset, pool);
}

template OnlineResult<float> run_online(const SequenceDataset&, const std::vector<std::size_t>&, const OnlineConfig&,
                                        ThreadPool&);
template OnlineResult<double> run_online(const SequenceDataset&, const std::vector<std::size_t>&, const OnlineConfig&,
                                         ThreadPool&);

}  // namespace gsavatar
