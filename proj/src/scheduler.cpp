#include "gsavatar/scheduler.hpp"

#include <algorithm>
#include <chrono>

namespace gsavatar {

ThreadPool::ThreadPool(unsigned workers) : workers_(std::max(1u, workers)) {
    for (unsigned i = 1; i < workers_; ++i) threads_.emplace_back([this] { worker_loop(); });
}

ThreadPool::~ThreadPool() {
    {
        std::lock_guard lock(mutex_);
        stop_ = true;
    }
    wake_.notify_all();
    for (auto& t : threads_) t.join();
}

void ThreadPool::drain(Job& job) {
    for (;;) {
        const std::size_t i = job.next.fetch_add(1);
        if (i >= job.count) break;
        try {
            (*job.fn)(i);
        } catch (...) {
            std::lock_guard lock(job.error_mutex);
            if (!job.error) job.error = std::current_exception();
        }
        job.done.fetch_add(1);
    }
}

void ThreadPool::worker_loop() {
    std::size_t seen = 0;
    for (;;) {
        Job* job = nullptr;
        {
            std::unique_lock lock(mutex_);
            wake_.wait(lock, [&] { return stop_ || (job_ != nullptr && generation_ != seen); });
            if (stop_) return;
            seen = generation_;
            job = job_;
            ++active_;
        }
        drain(*job);
        {
            std::lock_guard lock(mutex_);
            --active_;
        }
        finished_.notify_all();
    }
}

void ThreadPool::parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn) {
    if (count == 0) return;
    if (threads_.empty() || count == 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    Job job;
    job.fn = &fn;
    job.count = count;
    {
        std::lock_guard lock(mutex_);
        job_ = &job;
        ++generation_;
    }
    wake_.notify_all();
    drain(job);
    {
        std::unique_lock lock(mutex_);
        finished_.wait(lock, [&] { return job.done.load() == count && active_ == 0; });
        job_ = nullptr;
    }
    if (job.error) std::rethrow_exception(job.error);
}

const char* to_string(BatchScheme scheme) {
    switch (scheme) {
        case BatchScheme::Sequential: return "sequential";
        case BatchScheme::NaiveParallel: return "naive-parallel";
        case BatchScheme::TwoStage: return "two-stage";
    }
    return "unknown";
}

void StageScheduler::run_two_stage(std::size_t items, const std::function<void(std::size_t)>& stage1,
                                   const std::function<void(std::size_t)>& stage2) {
    pool_.parallel_for(items, stage1);
    barrier();
    pool_.parallel_for(items, stage2);
    count_batch();
}

namespace {

template <typename S>
SplatList<S> preprocess_parallel(const GaussianSet<S>& world, const Camera& camera, ThreadPool& pool) {
    constexpr Index chunk = 512;
    const Index n = world.size();
    const std::size_t chunks = static_cast<std::size_t>((n + chunk - 1) / chunk);
    std::vector<std::vector<ProjectedSplat<S>>> parts(chunks);
    pool.parallel_for(chunks, [&](std::size_t c) {
        const Index begin = static_cast<Index>(c) * chunk, end = std::min(n, begin + chunk);
        ProjectedSplat<S> s;
        for (Index i = begin; i < end; ++i) {
            if (project_gaussian(world, camera, i, s)) parts[c].push_back(s);
        }
    });
    SplatList<S> out;
    out.gaussian_count = n;
    for (auto& p : parts) out.splats.insert(out.splats.end(), p.begin(), p.end());
    return out;
}

}  // namespace

template <typename S>
std::vector<BatchOutput<S>> render_batch(const std::vector<BatchItem<S>>& items, StageScheduler& scheduler,
                                         BatchScheme scheme) {
    if (items.empty()) throw ConfigError("render_batch needs at least one item");
    std::vector<BatchOutput<S>> out(items.size());
    auto stage2 = [&](std::size_t i) {
        auto r = rasterize(out[i].splats, *items[i].camera, items[i].background);
        out[i].image = std::move(r.image);
        out[i].aux = std::move(r.aux);
    };
    switch (scheme) {
        case BatchScheme::Sequential:
            for (std::size_t i = 0; i < items.size(); ++i) {
                out[i].splats = preprocess(*items[i].world, *items[i].camera);
                stage2(i);
            }
            scheduler.count_batch();
            break;
        case BatchScheme::NaiveParallel:
            for (std::size_t i = 0; i < items.size(); ++i) {
                out[i].splats = preprocess_parallel(*items[i].world, *items[i].camera, scheduler.pool());
                scheduler.barrier();
                auto r = rasterize(out[i].splats, *items[i].camera, items[i].background, &scheduler.pool());
                out[i].image = std::move(r.image);
                out[i].aux = std::move(r.aux);
                scheduler.barrier();
            }
            scheduler.count_batch();
            break;
        case BatchScheme::TwoStage:
            scheduler.run_two_stage(
                items.size(), [&](std::size_t i) { out[i].splats = preprocess(*items[i].world, *items[i].camera); },
                stage2);
            break;
    }
    return out;
}

template <typename S>
Throughput measure_throughput(const std::vector<BatchItem<S>>& items, StageScheduler& scheduler, BatchScheme scheme,
                              std::size_t batches) {
    scheduler.reset_counters();
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t b = 0; b < batches; ++b) render_batch(items, scheduler, scheme);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {static_cast<double>(batches * items.size()) / seconds, seconds, scheduler.barrier_count(),
            scheduler.batch_count()};
}

template Throughput measure_throughput(const std::vector<BatchItem<float>>&, StageScheduler&, BatchScheme, std::size_t);
template Throughput measure_throughput(const std::vector<BatchItem<double>>&, StageScheduler&, BatchScheme, std::size_t);
template std::vector<BatchOutput<float>> render_batch(const std::vector<BatchItem<float>>&, StageScheduler&, BatchScheme);
template std::vector<BatchOutput<double>> render_batch(const std::vector<BatchItem<double>>&, StageScheduler&, BatchScheme);

}  // namespace gsavatar
