#pragma once

#include "gsavatar/renderer.hpp"

#include <atomic>
#include <condition_variable>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace gsavatar {

/// Fixed-size fork-join pool. parallel_for blocks the caller (which also
/// works) until every index has run; indices are claimed dynamically, so
/// callers must write each result to a slot owned by its index.
class ThreadPool {
public:
    explicit ThreadPool(unsigned workers = 1);
    ~ThreadPool();
    ThreadPool(const ThreadPool&) = delete;
    ThreadPool& operator=(const ThreadPool&) = delete;

    unsigned size() const { return workers_; }
    void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn);

private:
    struct Job {
        const std::function<void(std::size_t)>* fn = nullptr;
        std::size_t count = 0;
        std::atomic<std::size_t> next{0};
        std::atomic<std::size_t> done{0};
        std::exception_ptr error;
        std::mutex error_mutex;
    };

    void worker_loop();
    void drain(Job& job);

    unsigned workers_;
    std::vector<std::thread> threads_;
    std::mutex mutex_;
    std::condition_variable wake_;
    std::condition_variable finished_;
    Job* job_ = nullptr;
    std::size_t generation_ = 0;
    std::size_t active_ = 0;
    bool stop_ = false;
};

/// Batch scheduling variants compared in the training-scheme ablation.
enum class BatchScheme {
    Sequential,     // one item at a time on the calling thread
    NaiveParallel,  // per item: parallel preprocess, sync, parallel rasterize, sync
    TwoStage,       // all items preprocess in parallel, one sync, all rasterize in parallel
};

const char* to_string(BatchScheme scheme);

/// Runs per-item two-stage work on a pool and counts inter-stage barriers.
class StageScheduler {
public:
    explicit StageScheduler(ThreadPool& pool) : pool_(pool) {}

    ThreadPool& pool() { return pool_; }

    /// stage1(i) for all items, one barrier, then stage2(i) for all items.
    void run_two_stage(std::size_t items, const std::function<void(std::size_t)>& stage1,
                       const std::function<void(std::size_t)>& stage2);

    /// Records one synchronization point.
    void barrier() { ++barriers_; }

    std::size_t barrier_count() const { return barriers_; }
    std::size_t batch_count() const { return batches_; }
    void count_batch() { ++batches_; }
    void reset_counters() { barriers_ = 0; batches_ = 0; }

private:
    ThreadPool& pool_;
    std::size_t barriers_ = 0;
    std::size_t batches_ = 0;
};

template <typename S>
struct BatchItem {
    const GaussianSet<S>* world;
    const Camera* camera;
    Vec3<S> background;
};

template <typename S>
struct BatchOutput {
    SplatList<S> splats;
    Image<S> image;
    RenderAux<S> aux;
};

/// Renders every item with the chosen scheme. Outputs are bitwise identical
/// across schemes and worker counts.
template <typename S>
std::vector<BatchOutput<S>> render_batch(const std::vector<BatchItem<S>>& items, StageScheduler& scheduler,
                                         BatchScheme scheme = BatchScheme::TwoStage);

struct Throughput {
    double frames_per_second = 0.0;
    double seconds = 0.0;
    std::size_t barriers = 0;
    std::size_t batches = 0;
};

/// Renders the same batch `batches` times with `scheme` and reports wall time.
template <typename S>
Throughput measure_throughput(const std::vector<BatchItem<S>>& items, StageScheduler& scheduler, BatchScheme scheme,
                              std::size_t batches);

}  // namespace gsavatar
