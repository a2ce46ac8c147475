#pragma once

#include "gsavatar/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <memory>
#include <random>
#include <vector>

namespace gsavatar {

/// Local FIFO of the most recent frames plus a reservoir of older ones.
/// Frames leave the FIFO oldest first and are then offered to the reservoir;
/// the j-th offered frame replaces slot k ~ U[0, j) when k < capacity.
template <typename T>
class SamplePools {
public:
    SamplePools(std::size_t local_capacity, std::size_t global_capacity)
        : local_capacity_(local_capacity), global_capacity_(global_capacity) {}

    void process(T item, std::mt19937_64& rng) {
        if (local_capacity_ == 0) {
            offer(std::move(item), rng);
            return;
        }
        if (local_.size() == local_capacity_) {
            T evicted = std::move(local_.front());
            local_.pop_front();
            offer(std::move(evicted), rng);
        }
        local_.push_back(std::move(item));
    }

    /// round(eta * B) (half up) draws from the local pool, the rest from the
    /// global pool, all uniform with replacement. An empty pool hands its
    /// share to the other one.
    std::vector<T> sample(std::size_t batch, double eta, std::mt19937_64& rng) const {
        if (local_.empty() && global_.empty()) throw ConfigError("sample_batch: both pools are empty");
        std::size_t from_local = local_split(batch, eta);
        if (global_.empty()) from_local = batch;
        if (local_.empty()) from_local = 0;
        std::vector<T> out;
        out.reserve(batch);
        for (std::size_t i = 0; i < from_local; ++i) {
            out.push_back(local_[std::uniform_int_distribution<std::size_t>(0, local_.size() - 1)(rng)]);
        }
        for (std::size_t i = from_local; i < batch; ++i) {
            out.push_back(global_[std::uniform_int_distribution<std::size_t>(0, global_.size() - 1)(rng)]);
        }
        return out;
    }

    static std::size_t local_split(std::size_t batch, double eta) {
        const double b = std::floor(eta * static_cast<double>(batch) + 0.5);
        return static_cast<std::size_t>(std::clamp(b, 0.0, static_cast<double>(batch)));
    }

    const std::deque<T>& local() const { return local_; }
    const std::vector<T>& global() const { return global_; }
    /// Number of frames offered to the reservoir so far.
    std::uint64_t offered() const { return offered_; }

private:
    void offer(T item, std::mt19937_64& rng) {
        ++offered_;
        if (global_.size() < global_capacity_) {
            global_.push_back(std::move(item));
            return;
        }
        if (global_capacity_ == 0) return;
        const std::uint64_t k = std::uniform_int_distribution<std::uint64_t>(0, offered_ - 1)(rng);
        if (k < global_capacity_) global_[static_cast<std::size_t>(k)] = std::move(item);
    }

    std::size_t local_capacity_, global_capacity_;
    std::deque<T> local_;
    std::vector<T> global_;
    std::uint64_t offered_ = 0;
};

/// One streamed frame with its deformation precomputed on arrival.
struct FrameSample {
    struct Geometry {
        Mesh mesh;
        GaussianFrames frames;
    };

    std::size_t index = 0;
    const RgbaImage* image = nullptr;
    VecX<double> theta;
    std::shared_ptr<const Geometry> geometry;
};

enum class StreamMode { Deterministic, WallClock };

struct OnlineConfig {
    TrainConfig train;
    std::size_t local_capacity = 150;
    std::size_t global_capacity = 1000;
    double eta = 0.7;
    bool use_local = true;   // false: batches come from the reservoir once it has frames
    bool use_global = true;  // false: evicted frames are dropped, batches are all local
    StreamMode mode = StreamMode::Deterministic;
    std::int64_t steps_per_frame = 25;
    double fps = 25.0;                // wall-clock mode ingestion rate
    std::int64_t tail_steps = 0;      // extra steps after the last frame
    std::size_t warmup_frames = 1;    // training starts once this many frames arrived

    void validate() const;
};

struct FrameLoss {
    std::size_t frame = 0;
    double min_l1 = std::nan("");  // lowest in-batch L1 while training; NaN if never sampled
    double final_l1 = 0.0;         // L1 of the final model, random background
};

template <typename S>
struct OnlineResult {
    AvatarModel<S> model;
    ColorInitState color_state;
    std::vector<StepRecord> log;
    std::vector<FrameLoss> frames;  // streamed frames in arrival order
    std::size_t frames_ingested = 0;
    bool complete = true;  // false when the stream ended before warmup
};

/// Mean of final - min L1 over the leading `fraction` of streamed frames that
/// were sampled at least once.
double forgetting_gap(const std::vector<FrameLoss>& frames, double fraction = 0.25);

template <typename S>
OnlineResult<S> run_online(const SequenceDataset& dataset, const std::vector<std::size_t>& stream,
                           const OnlineConfig& config, ThreadPool& pool);

}  // namespace gsavatar
