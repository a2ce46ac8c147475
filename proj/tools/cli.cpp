#include "cli.hpp"

#include "gsavatar/io.hpp"
#include "gsavatar/online.hpp"
#include "gsavatar/synth.hpp"
#include "gsavatar/trainer.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <optional>
#include <ostream>
#include <sstream>

namespace gsavatar {

namespace {

using json = nlohmann::json;

struct Globals {
    std::uint64_t seed = 0;
    unsigned threads = 1;
    std::string config;
};

json read_config(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream in(path);
    if (!in) throw IoError(path + ": config file not found");
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw IoError(path + ": malformed JSON (" + e.what() + ")");
    }
}

template <typename T>
void take(const json& j, const char* key, T& value) {
    if (j.contains(key)) value = j.at(key).get<T>();
}

void apply_train_json(const json& j, TrainConfig& c) {
    take(j, "batch_size", c.batch_size);
    take(j, "steps", c.steps);
    take(j, "blendshapes", c.blendshapes);
    take(j, "hidden", c.hidden);
    take(j, "uv_resolution", c.uv_resolution);
    take(j, "color_threshold", c.color_threshold);
    take(j, "color_init", c.color_init);
    take(j, "reduce", c.reduce);
    take(j, "initial_scale", c.initial_scale);
    take(j, "initial_opacity", c.initial_opacity);
    if (j.contains("lr")) {
        const json& lr = j.at("lr");
        take(lr, "position", c.lr.position);
        take(lr, "opacity", c.lr.opacity);
        take(lr, "scale", c.lr.scale);
        take(lr, "rotation", c.lr.rotation);
        take(lr, "color", c.lr.color);
        take(lr, "delta_position_factor", c.lr.delta_position_factor);
        take(lr, "delta_rotation_factor", c.lr.delta_rotation_factor);
        take(lr, "delta_color_factor", c.lr.delta_color_factor);
        take(lr, "mlp", c.lr.mlp);
    }
}

void apply_online_json(const json& j, OnlineConfig& c) {
    if (!j.contains("online")) return;
    const json& o = j.at("online");
    take(o, "local_capacity", c.local_capacity);
    take(o, "global_capacity", c.global_capacity);
    take(o, "eta", c.eta);
    take(o, "steps_per_frame", c.steps_per_frame);
    take(o, "tail_steps", c.tail_steps);
    take(o, "fps", c.fps);
    take(o, "warmup_frames", c.warmup_frames);
}

json train_to_json(const TrainConfig& c) {
    return {{"batch_size", c.batch_size},
            {"steps", c.steps},
            {"blendshapes", c.blendshapes},
            {"hidden", c.hidden},
            {"uv_resolution", c.uv_resolution},
            {"color_threshold", c.color_threshold},
            {"color_init", c.color_init},
            {"reduce", c.reduce},
            {"initial_scale", c.initial_scale},
            {"initial_opacity", c.initial_opacity},
            {"seed", c.seed},
            {"lr",
             {{"position", c.lr.position},
              {"opacity", c.lr.opacity},
              {"scale", c.lr.scale},
              {"rotation", c.lr.rotation},
              {"color", c.lr.color},
              {"delta_position_factor", c.lr.delta_position_factor},
              {"delta_rotation_factor", c.lr.delta_rotation_factor},
              {"delta_color_factor", c.lr.delta_color_factor},
              {"mlp", c.lr.mlp}}}};
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw IoError(path.string() + ": cannot open for writing");
    out << text;
}

// Plain fixed-width table.
class Table {
public:
    explicit Table(std::vector<std::string> header) { rows_.push_back(std::move(header)); }
    void add(std::vector<std::string> row) { rows_.push_back(std::move(row)); }

    std::string str() const {
        std::vector<std::size_t> width(rows_[0].size(), 0);
        for (const auto& r : rows_) {
            for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
        }
        std::ostringstream s;
        for (std::size_t i = 0; i < rows_.size(); ++i) {
            s << '|';
            for (std::size_t c = 0; c < rows_[i].size(); ++c) s << ' ' << std::setw(static_cast<int>(width[c])) << rows_[i][c] << " |";
            s << '\n';
            if (i == 0) {
                s << '|';
                for (auto w : width) s << std::string(w + 2, '-') << '|';
                s << '\n';
            }
        }
        return s.str();
    }

private:
    std::vector<std::vector<std::string>> rows_;
};

std::string fmt(double v, int precision = 3) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(precision) << v;
    return s.str();
}

std::vector<std::size_t> train_frames(const SequenceDataset& ds, bool all_frames) {
    if (all_frames) return HoldoutSplit{ds.size(), 0}.train_indices();
    return holdout_split(ds.size()).train_indices();
}

struct TrainFlags {
    std::optional<std::int64_t> steps;
    std::optional<Index> batch, blendshapes;
    std::optional<int> uv_res;
    bool no_color_init = false, no_reduce = false;

    void add(CLI::App* app) {
        app->add_option("--steps", steps, "Optimizer steps");
        app->add_option("--batch", batch, "Batch size B");
        app->add_option("--blendshapes,-K", blendshapes, "Number of reduced blendshapes K");
        app->add_option("--uv-res", uv_res, "UV sampling resolution (default: the dataset's)");
        app->add_flag("--no-color-init", no_color_init, "Disable one-time color initialization");
        app->add_flag("--no-reduce", no_reduce, "Drive blendshapes by theta[0:K] instead of the MLP");
    }

    TrainConfig build(const json& cfg, std::uint64_t seed) const {
        TrainConfig c;
        apply_train_json(cfg, c);
        if (steps) c.steps = *steps;
        if (batch) c.batch_size = *batch;
        if (blendshapes) c.blendshapes = *blendshapes;
        if (uv_res) c.uv_resolution = *uv_res;
        if (no_color_init) c.color_init = false;
        if (no_reduce) c.reduce = false;
        c.seed = seed;
        return c;
    }
};

struct OnlineFlags {
    std::optional<std::int64_t> steps_per_frame, tail_steps;
    std::optional<std::size_t> local, global;
    std::optional<double> eta, fps;
    bool no_global = false, no_local = false, wall_clock = false;

    void add(CLI::App* app) {
        app->add_option("--steps-per-frame", steps_per_frame, "Optimizer steps per arriving frame");
        app->add_option("--tail-steps", tail_steps, "Extra steps after the stream ends");
        app->add_option("--local", local, "Local FIFO capacity");
        app->add_option("--global", global, "Global reservoir capacity");
        app->add_option("--eta", eta, "Fraction of each batch drawn from the local pool");
        app->add_option("--fps", fps, "Ingestion rate in wall-clock mode");
        app->add_flag("--no-global", no_global, "Disable the global reservoir");
        app->add_flag("--no-local", no_local, "Sample only from the global reservoir once it has frames");
        app->add_flag("--wall-clock", wall_clock, "Ingest frames in real time instead of fixed steps per frame");
    }

    OnlineConfig build(const json& cfg, const TrainConfig& train) const {
        OnlineConfig c;
        c.train = train;
        apply_online_json(cfg, c);
        if (steps_per_frame) c.steps_per_frame = *steps_per_frame;
        if (tail_steps) c.tail_steps = *tail_steps;
        if (local) c.local_capacity = *local;
        if (global) c.global_capacity = *global;
        if (eta) c.eta = *eta;
        if (fps) c.fps = *fps;
        if (no_global) c.use_global = false;
        if (no_local) c.use_local = false;
        if (wall_clock) c.mode = StreamMode::WallClock;
        return c;
    }
};

json online_to_json(const OnlineConfig& c) {
    return {{"train", train_to_json(c.train)},
            {"local_capacity", c.local_capacity},
            {"global_capacity", c.global_capacity},
            {"eta", c.eta},
            {"use_local", c.use_local},
            {"use_global", c.use_global},
            {"mode", c.mode == StreamMode::Deterministic ? "deterministic" : "wall-clock"},
            {"steps_per_frame", c.steps_per_frame},
            {"tail_steps", c.tail_steps},
            {"fps", c.fps}};
}

EvalReport eval_holdout(const AvatarModel<float>& model, const SequenceDataset& ds, ThreadPool& pool) {
    return evaluate(model, ds, holdout_split(ds.size()).test_indices(), pool);
}

// Splats laid out on the dataset rig at roughly `count` Gaussians, for the
// batching benchmark.
std::vector<GaussianSet<float>> benchmark_worlds(const SequenceDataset& ds, Index count, std::size_t items,
                                                 std::uint64_t seed) {
    const int res = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(count))));
    TrainConfig c;
    c.uv_resolution = res;
    c.blendshapes = 1;
    c.seed = seed;
    AvatarModel<float> model = make_initial_model<float>(ds, c);
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> normal(0.0f, 1.0f);
    model.base.color = model.base.color.unaryExpr([&](float) { return normal(rng); });
    std::vector<GaussianSet<float>> worlds;
    for (std::size_t i = 0; i < items; ++i) {
        const VecX<double>& theta = ds.theta[i % ds.size()];
        const GaussianFrames frames = gaussian_frames(ds.rig, rig_evaluate(ds.rig, theta), model.bindings);
        worlds.push_back(forward_geometry(model, theta, frames, ds.camera).world);
    }
    return worlds;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Reduced Gaussian blendshape head avatars: synthesis, training, streaming, evaluation"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--seed", g.seed, "Random seed")->capture_default_str();
    app.add_option("--threads", g.threads, "Worker threads")->capture_default_str()->check(CLI::Range(1u, 1024u));
    app.add_option("--config", g.config, "JSON file with training/online settings");

    // synth
    auto* synth = app.add_subcommand("synth", "Generate a synthetic sequence dataset");
    SynthConfig sc;
    std::string synth_out;
    synth->add_option("--out,-o", synth_out, "Output directory")->required();
    synth->add_option("--frames", sc.frames, "Frame count")->capture_default_str();
    synth->add_option("--size", sc.size, "Image width and height")->capture_default_str();
    synth->add_option("--uv-res", sc.uv_resolution, "UV resolution of the ground-truth avatar")->capture_default_str();
    synth->add_option("--true-k", sc.true_blendshapes, "Ground-truth blendshape count (1-4)")->capture_default_str();
    synth->add_option("--trajectory", sc.trajectory, "sinusoid or static")->capture_default_str();

    // train
    auto* train = app.add_subcommand("train", "Offline training");
    std::string data, out_dir;
    bool all_frames = false;
    TrainFlags tf;
    train->add_option("--data,-d", data, "Sequence directory")->required();
    train->add_option("--out,-o", out_dir, "Run directory")->required();
    train->add_flag("--all-frames", all_frames, "Train on every frame instead of holding out the tail");
    tf.add(train);

    // stream
    auto* stream = app.add_subcommand("stream", "Online training from the frame stream");
    OnlineFlags of;
    TrainFlags stf;
    stream->add_option("--data,-d", data, "Sequence directory")->required();
    stream->add_option("--out,-o", out_dir, "Run directory")->required();
    stream->add_flag("--all-frames", all_frames, "Stream every frame instead of holding out the tail");
    stf.add(stream);
    of.add(stream);

    // render
    auto* render = app.add_subcommand("render", "Render a trained model to PNG frames");
    std::string model_path, theta_file;
    std::optional<Index> sweep_param;
    std::size_t count = 30, base_frame = 0;
    bool novel_view = false;
    double orbit_degrees = 60.0;
    render->add_option("--model,-m", model_path, "Model file")->required();
    render->add_option("--data,-d", data, "Sequence directory (rig and camera)")->required();
    render->add_option("--out,-o", out_dir, "Output directory")->required();
    auto* theta_opt = render->add_option("--theta", theta_file, "JSON array of parameter vectors");
    auto* sweep_opt = render->add_option("--sweep", sweep_param, "Sweep this parameter index from -1 to 1");
    theta_opt->excludes(sweep_opt);
    render->add_option("--count", count, "Frames in a sweep or orbit")->capture_default_str();
    render->add_option("--frame", base_frame, "Dataset frame whose parameters seed sweeps and orbits")
        ->capture_default_str();
    render->add_flag("--novel-view", novel_view, "Orbit the camera around the head");
    render->add_option("--orbit-degrees", orbit_degrees, "Total orbit angle")->capture_default_str();

    // eval
    auto* eval = app.add_subcommand("eval", "PSNR/SSIM on the held-out tail of a sequence");
    std::string table_path;
    eval->add_option("--model,-m", model_path, "Model file")->required();
    eval->add_option("--data,-d", data, "Sequence directory")->required();
    eval->add_option("--out,-o", table_path, "Metrics table file (default: next to the model)");

    // ablate
    auto* ablate = app.add_subcommand("ablate", "Run an ablation grid and print a summary table");
    std::string experiment;
    std::size_t batches = 20, seeds = 3;
    Index gaussians = 5000;
    std::vector<Index> k_values{8};
    std::vector<std::size_t> pool_sizes{30, 60, 120};
    double loss_target = 0.05;
    TrainFlags atf;
    OnlineFlags aof;
    ablate->add_option("--experiment,-e", experiment, "batching, sampling, color-init, reducing or pool-size")
        ->required()
        ->check(CLI::IsMember({"batching", "sampling", "color-init", "reducing", "pool-size"}));
    ablate->add_option("--data,-d", data, "Sequence directory")->required();
    ablate->add_option("--out,-o", table_path, "Summary table file");
    ablate->add_option("--batches", batches, "Batches per scheme (batching)")->capture_default_str();
    ablate->add_option("--gaussians", gaussians, "Approximate Gaussian count (batching)")->capture_default_str();
    ablate->add_option("--seeds", seeds, "Seeds per configuration")->capture_default_str();
    ablate->add_option("--k", k_values, "Blendshape counts (reducing)");
    ablate->add_option("--global-sizes", pool_sizes, "Global pool capacities (pool-size)");
    ablate->add_option("--loss-target", loss_target, "L1 target (color-init)")->capture_default_str();
    atf.add(ablate);
    aof.add(ablate);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    }

    try {
        const json cfg = read_config(g.config);
        ThreadPool pool(g.threads);

        if (*synth) {
            SynthOutput s = synth_generate(sc, g.seed, &pool);
            save_sequence(synth_out, s.dataset);
            ColorInitState visited(s.truth.size());
            visited.visited.assign(visited.visited.size(), true);
            save_model(fs::path(synth_out) / "ground_truth.bin", s.truth, visited);
            out << "wrote " << s.dataset.size() << " frames, " << s.truth.size() << " Gaussians to " << synth_out
                << '\n';
            return 0;
        }

        if (*train) {
            const SequenceDataset ds = load_sequence(data);
            const TrainConfig c = tf.build(cfg, g.seed);
            const auto frames = train_frames(ds, all_frames);
            const auto r = train_offline<float>(ds, frames, c, pool);
            fs::create_directories(out_dir);
            save_model(fs::path(out_dir) / "model.bin", r.model, r.color_state);
            write_metrics_log(fs::path(out_dir) / "metrics.jsonl", r.log);
            write_text(fs::path(out_dir) / "manifest.json",
                       json{{"command", "train"},
                            {"data", data},
                            {"train_frames", frames.size()},
                            {"threads", g.threads},
                            {"eval_background", ds.background},
                            {"config", train_to_json(c)}}
                               .dump(1) +
                           "\n");
            out << "trained " << r.steps_run << " steps, final loss " << fmt(r.log.empty() ? 0.0 : r.log.back().loss, 5)
                << ", e_orth " << fmt(orthogonality_metric(r.model), 4) << '\n';
            return 0;
        }

        if (*stream) {
            const SequenceDataset ds = load_sequence(data);
            const OnlineConfig c = of.build(cfg, stf.build(cfg, g.seed));
            const auto frames = train_frames(ds, all_frames);
            const auto r = run_online<float>(ds, frames, c, pool);
            fs::create_directories(out_dir);
            save_model(fs::path(out_dir) / "model.bin", r.model, r.color_state);
            write_metrics_log(fs::path(out_dir) / "metrics.jsonl", r.log);
            write_forgetting_report(fs::path(out_dir) / "forgetting.jsonl", r.frames);
            write_text(fs::path(out_dir) / "manifest.json",
                       json{{"command", "stream"},
                            {"data", data},
                            {"stream_frames", frames.size()},
                            {"threads", g.threads},
                            {"eval_background", ds.background},
                            {"config", online_to_json(c)}}
                               .dump(1) +
                           "\n");
            if (!r.complete) err << "stream ended before warmup; partial results written\n";
            out << "streamed " << r.frames_ingested << " frames, " << r.log.size() << " steps, forgetting gap "
                << fmt(forgetting_gap(r.frames), 5) << '\n';
            return 0;
        }

        if (*render) {
            const SequenceDataset ds = load_sequence(data);
            const ModelFile mf = load_model(model_path);
            if (mf.model.mlp.input_dim() != ds.param_dim()) throw ConfigError("model input dimension does not match the rig");
            std::vector<VecX<double>> thetas;
            std::vector<Camera> cameras;
            const VecX<double> seed_theta = ds.theta.at(base_frame);
            if (!theta_file.empty()) {
                thetas = read_theta_file(theta_file, ds.param_dim());
            } else if (sweep_param) {
                if (*sweep_param < 0 || *sweep_param >= ds.param_dim()) throw ConfigError("--sweep index out of range");
                for (std::size_t i = 0; i < count; ++i) {
                    VecX<double> t = seed_theta;
                    t[*sweep_param] = count > 1 ? -1.0 + 2.0 * static_cast<double>(i) / (count - 1) : 0.0;
                    thetas.push_back(t);
                }
            } else {
                thetas.assign(novel_view ? count : 1, seed_theta);
            }
            for (std::size_t i = 0; i < thetas.size(); ++i) {
                Camera cam = ds.camera;
                if (novel_view) {
                    const double span = orbit_degrees * std::numbers::pi / 180.0;
                    const double a = thetas.size() > 1 ? -0.5 * span + span * static_cast<double>(i) / (thetas.size() - 1) : 0.0;
                    // Orbit about the world y axis through the origin.
                    cam.rotation = ds.camera.rotation * axis_angle_matrix(Vec3<double>(0.0, a, 0.0)).transpose();
                }
                cameras.push_back(cam);
            }
            fs::create_directories(out_dir);
            pool.parallel_for(thetas.size(), [&](std::size_t i) {
                const auto img = render_frame(mf.model, ds.rig, thetas[i], cameras[i], Vec3<float>::Zero().eval());
                std::ostringstream name;
                name << std::setw(6) << std::setfill('0') << i << ".png";
                write_png(fs::path(out_dir) / name.str(), to_rgba(img));
            });
            out << "rendered " << thetas.size() << " frames to " << out_dir << '\n';
            return 0;
        }

        if (*eval) {
            const SequenceDataset ds = load_sequence(data);
            const ModelFile mf = load_model(model_path);
            const EvalReport r = eval_holdout(mf.model, ds, pool);
            Table t({"frame", "PSNR", "SSIM"});
            for (const auto& f : r.frames) t.add({std::to_string(f.frame), fmt(f.psnr, 2), fmt(f.ssim, 4)});
            t.add({"mean", fmt(r.mean_psnr, 2), fmt(r.mean_ssim, 4)});
            const fs::path path = table_path.empty() ? fs::path(model_path).parent_path() / "eval.md" : fs::path(table_path);
            write_text(path, t.str());
            out << "held-out frames " << r.frames.size() << ": PSNR " << fmt(r.mean_psnr, 2) << " dB, SSIM "
                << fmt(r.mean_ssim, 4) << " (table: " << path.string() << ")\n";
            return 0;
        }

        if (*ablate) {
            const SequenceDataset ds = load_sequence(data);
            const TrainConfig base = atf.build(cfg, g.seed);
            const auto frames = train_frames(ds, false);
            std::string table;

            if (experiment == "batching") {
                const auto worlds = benchmark_worlds(ds, gaussians, static_cast<std::size_t>(base.batch_size), g.seed);
                std::vector<BatchItem<float>> items;
                for (const auto& w : worlds) items.push_back({&w, &ds.camera, Vec3<float>::Constant(0.5f)});
                StageScheduler sched(pool);
                Table t({"scheme", "workers", "frames/s", "barriers/batch", "speedup"});
                double sequential = 0.0;
                for (BatchScheme s : {BatchScheme::Sequential, BatchScheme::NaiveParallel, BatchScheme::TwoStage}) {
                    const Throughput r = measure_throughput(items, sched, s, batches);
                    if (s == BatchScheme::Sequential) sequential = r.frames_per_second;
                    t.add({to_string(s), std::to_string(pool.size()), fmt(r.frames_per_second, 1),
                           fmt(static_cast<double>(r.barriers) / static_cast<double>(r.batches), 1),
                           fmt(r.frames_per_second / sequential, 2)});
                }
                table = "N = " + std::to_string(worlds[0].size()) + " Gaussians, B = " + std::to_string(items.size()) +
                        ", " + std::to_string(ds.camera.width) + "x" + std::to_string(ds.camera.height) + "\n" + t.str();
            } else if (experiment == "sampling") {
                Table t({"variant", "seed", "held-out PSNR", "forgetting gap"});
                for (std::size_t s = 0; s < seeds; ++s) {
                    for (int v = 0; v < 3; ++v) {
                        OnlineConfig c = aof.build(cfg, base);
                        c.train.seed = g.seed + s;
                        if (v == 1) c.use_global = false;
                        if (v == 2) c.use_local = false;
                        const auto r = run_online<float>(ds, frames, c, pool);
                        t.add({v == 0 ? "full" : (v == 1 ? "w/o global" : "w/o local"), std::to_string(c.train.seed),
                               fmt(eval_holdout(r.model, ds, pool).mean_psnr, 2), fmt(forgetting_gap(r.frames), 5)});
                    }
                }
                table = t.str();
            } else if (experiment == "pool-size") {
                Table t({"local", "global", "held-out PSNR", "forgetting gap"});
                for (std::size_t gsize : pool_sizes) {
                    OnlineConfig c = aof.build(cfg, base);
                    c.global_capacity = gsize;
                    const auto r = run_online<float>(ds, frames, c, pool);
                    t.add({std::to_string(c.local_capacity), std::to_string(gsize),
                           fmt(eval_holdout(r.model, ds, pool).mean_psnr, 2), fmt(forgetting_gap(r.frames), 5)});
                }
                table = t.str();
            } else if (experiment == "color-init") {
                Table t({"seed", "steps (color init)", "steps (no color init)"});
                for (std::size_t s = 0; s < seeds; ++s) {
                    std::string cells[2];
                    for (int v = 0; v < 2; ++v) {
                        TrainConfig c = base;
                        c.seed = g.seed + s;
                        c.color_init = v == 0;
                        c.stop_at_loss = loss_target;
                        const auto r = train_offline<float>(ds, frames, c, pool);
                        const auto n = steps_to_reach(r.log, loss_target);
                        cells[v] = n < 0 ? "not reached" : std::to_string(n);
                    }
                    t.add({std::to_string(g.seed + s), cells[0], cells[1]});
                }
                table = "L1 target " + fmt(loss_target, 3) + " (10-step mean)\n" + t.str();
            } else {
                Table t({"K", "reduced PSNR", "identity-slice PSNR"});
                for (Index k : k_values) {
                    std::string cells[2];
                    for (int v = 0; v < 2; ++v) {
                        TrainConfig c = base;
                        c.blendshapes = k;
                        c.reduce = v == 0;
                        const auto r = train_offline<float>(ds, frames, c, pool);
                        cells[v] = fmt(eval_holdout(r.model, ds, pool).mean_psnr, 2);
                    }
                    t.add({std::to_string(k), cells[0], cells[1]});
                }
                table = t.str();
            }
            out << table;
            if (!table_path.empty()) write_text(table_path, table);
            return 0;
        }
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

}  // namespace gsavatar
