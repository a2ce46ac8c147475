#include "gsavatar/io.hpp"

#include "json.hpp"
#include <png.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace gsavatar {

using json = nlohmann::json;

static_assert(std::endian::native == std::endian::little, "model files are written in native little-endian order");

RgbaImage read_png(const fs::path& path) {
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str())) {
        throw IoError(path.string() + ": cannot read PNG (" + img.message + ")");
    }
    img.format = PNG_FORMAT_RGBA;
    std::vector<png_byte> buffer(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, buffer.data(), 0, nullptr)) {
        png_image_free(&img);
        throw IoError(path.string() + ": cannot decode PNG (" + img.message + ")");
    }
    RgbaImage out{static_cast<int>(img.width), static_cast<int>(img.height),
                  RowMatX4<float>(static_cast<Index>(img.width) * img.height, 4)};
    for (Index i = 0; i < out.pixels.size(); ++i) out.pixels.data()[i] = static_cast<float>(buffer[i]) / 255.0f;
    return out;
}

RgbaImage quantize(const RgbaImage& image) {
    RgbaImage out = image;
    out.pixels = image.pixels.unaryExpr(
        [](float v) { return std::round(std::clamp(v, 0.0f, 1.0f) * 255.0f) / 255.0f; });
    return out;
}

void write_png(const fs::path& path, const RgbaImage& image) {
    std::vector<png_byte> buffer(static_cast<std::size_t>(image.pixels.size()));
    for (Index i = 0; i < image.pixels.size(); ++i) {
        buffer[i] = static_cast<png_byte>(std::lround(std::clamp(image.pixels.data()[i], 0.0f, 1.0f) * 255.0f));
    }
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(image.width);
    img.height = static_cast<png_uint_32>(image.height);
    img.format = PNG_FORMAT_RGBA;
    if (!png_image_write_to_file(&img, path.c_str(), 0, buffer.data(), 0, nullptr)) {
        throw IoError(path.string() + ": cannot write PNG (" + img.message + ")");
    }
}

namespace {

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError(path.string() + ": file not found");
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw IoError(path.string() + ": malformed JSON (" + e.what() + ")");
    }
}

void write_json(const fs::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw IoError(path.string() + ": cannot open for writing");
    out << j.dump(1) << '\n';
}

template <typename M>
json rows_to_json(const M& m) {
    json rows = json::array();
    for (Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

// Field access that reports file and field name on failure.
struct Reader {
    const fs::path& file;

    const json& at(const json& j, const std::string& key) const {
        if (!j.is_object() || !j.contains(key)) throw IoError(file.string() + ": missing field '" + key + "'");
        return j.at(key);
    }

    template <typename T>
    T get(const json& j, const std::string& field) const {
        try {
            return j.get<T>();
        } catch (const json::exception&) {
            throw IoError(file.string() + ": field '" + field + "' has the wrong type");
        }
    }

    template <typename M>
    M matrix(const json& j, const std::string& field, Index cols) const {
        if (!j.is_array()) throw IoError(file.string() + ": field '" + field + "' is not an array");
        M m(static_cast<Index>(j.size()), cols);
        for (std::size_t r = 0; r < j.size(); ++r) {
            const json& row = j[r];
            if (!row.is_array() || static_cast<Index>(row.size()) != cols) {
                throw IoError(file.string() + ": " + field + "[" + std::to_string(r) + "] must have " +
                              std::to_string(cols) + " values");
            }
            for (Index c = 0; c < cols; ++c) {
                m(static_cast<Index>(r), c) =
                    get<typename M::Scalar>(row[static_cast<std::size_t>(c)], field + "[" + std::to_string(r) + "]");
            }
        }
        return m;
    }
};

json camera_to_json(const Camera& c) {
    return {{"fx", c.fx},
            {"fy", c.fy},
            {"cx", c.cx},
            {"cy", c.cy},
            {"width", c.width},
            {"height", c.height},
            {"rotation", rows_to_json(c.rotation)},
            {"translation", {c.translation.x(), c.translation.y(), c.translation.z()}}};
}

Camera camera_from_json(const json& j, const Reader& r) {
    Camera c;
    c.fx = r.get<double>(r.at(j, "fx"), "camera.fx");
    c.fy = r.get<double>(r.at(j, "fy"), "camera.fy");
    c.cx = r.get<double>(r.at(j, "cx"), "camera.cx");
    c.cy = r.get<double>(r.at(j, "cy"), "camera.cy");
    c.width = r.get<int>(r.at(j, "width"), "camera.width");
    c.height = r.get<int>(r.at(j, "height"), "camera.height");
    c.rotation = r.matrix<RowMatX<double>>(r.at(j, "rotation"), "camera.rotation", 3);
    if (c.rotation.rows() != 3) throw IoError(r.file.string() + ": camera.rotation must be 3x3");
    const auto t = r.get<std::vector<double>>(r.at(j, "translation"), "camera.translation");
    if (t.size() != 3) throw IoError(r.file.string() + ": camera.translation must have 3 values");
    c.translation = Vec3<double>(t[0], t[1], t[2]);
    try {
        c.validate();
    } catch (const ConfigError& e) {
        throw IoError(r.file.string() + ": invalid camera (" + e.what() + ")");
    }
    return c;
}

json rig_to_json(const ParametricHeadRig& rig) {
    json bases = json::array();
    for (const auto& b : rig.expr_bases) bases.push_back(rows_to_json(b));
    return {{"vertices", rows_to_json(rig.base_vertices)},
            {"faces", rows_to_json(rig.faces)},
            {"uv", rows_to_json(rig.uv)},
            {"expr_bases", bases},
            {"pose_dim", rig.pose_dim}};
}

ParametricHeadRig rig_from_json(const json& j, const Reader& r) {
    ParametricHeadRig rig;
    rig.base_vertices = r.matrix<RowMatX3<double>>(r.at(j, "vertices"), "vertices", 3);
    rig.faces = r.matrix<FaceArray>(r.at(j, "faces"), "faces", 3);
    rig.uv = r.matrix<UvArray>(r.at(j, "uv"), "uv", 2);
    const json& bases = r.at(j, "expr_bases");
    if (!bases.is_array()) throw IoError(r.file.string() + ": field 'expr_bases' is not an array");
    for (std::size_t e = 0; e < bases.size(); ++e) {
        rig.expr_bases.push_back(
            r.matrix<RowMatX3<double>>(bases[e], "expr_bases[" + std::to_string(e) + "]", 3));
    }
    rig.pose_dim = r.get<Index>(r.at(j, "pose_dim"), "pose_dim");
    if (rig.pose_dim != 3) throw IoError(r.file.string() + ": pose_dim must be 3");
    try {
        rig.validate();
    } catch (const std::exception& e) {
        throw IoError(r.file.string() + ": invalid rig (" + e.what() + ")");
    }
    return rig;
}

std::string frame_name(std::size_t i) {
    std::ostringstream s;
    s << std::setw(6) << std::setfill('0') << i << ".png";
    return s.str();
}

}  // namespace

void save_sequence(const fs::path& dir, const SequenceDataset& dataset) {
    dataset.validate();
    fs::create_directories(dir / "frames");
    json theta = json::array();
    for (const auto& t : dataset.theta) theta.push_back(std::vector<double>(t.data(), t.data() + t.size()));
    const json params = {{"camera", camera_to_json(dataset.camera)},
                         {"theta", theta},
                         {"frame_count", dataset.size()},
                         {"rig", "rig.json"},
                         {"background", dataset.background},
                         {"uv_resolution", dataset.uv_resolution}};
    write_json(dir / "params.json", params);
    write_json(dir / "rig.json", rig_to_json(dataset.rig));
    for (std::size_t i = 0; i < dataset.size(); ++i) write_png(dir / "frames" / frame_name(i), dataset.frames[i]);
}

SequenceDataset load_sequence(const fs::path& dir) {
    const fs::path params_path = dir / "params.json";
    const json params = read_json(params_path);
    const Reader pr{params_path};

    SequenceDataset ds;
    ds.camera = camera_from_json(pr.at(params, "camera"), pr);
    const auto rig_name = pr.get<std::string>(pr.at(params, "rig"), "rig");
    const fs::path rig_path = dir / rig_name;
    ds.rig = rig_from_json(read_json(rig_path), Reader{rig_path});
    ds.background = pr.get<std::string>(pr.at(params, "background"), "background");
    if (ds.background != "black") throw IoError(params_path.string() + ": only the 'black' background is supported");
    ds.uv_resolution = pr.get<int>(pr.at(params, "uv_resolution"), "uv_resolution");
    if (ds.uv_resolution < 1) throw IoError(params_path.string() + ": uv_resolution must be >= 1");

    const json& theta = pr.at(params, "theta");
    if (!theta.is_array()) throw IoError(params_path.string() + ": field 'theta' is not an array");
    const Index h = ds.rig.param_dim();
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const auto values = pr.get<std::vector<double>>(theta[i], "theta[" + std::to_string(i) + "]");
        if (static_cast<Index>(values.size()) != h) {
            throw IoError(params_path.string() + ": theta[" + std::to_string(i) + "] has " +
                          std::to_string(values.size()) + " values, expected " + std::to_string(h));
        }
        ds.theta.push_back(Eigen::Map<const VecX<double>>(values.data(), h));
    }
    const auto count = pr.get<std::size_t>(pr.at(params, "frame_count"), "frame_count");
    if (count != ds.theta.size()) {
        throw IoError(params_path.string() + ": frame_count " + std::to_string(count) + " but " +
                      std::to_string(ds.theta.size()) + " theta entries");
    }
    for (std::size_t i = 0; i < count; ++i) {
        const fs::path frame = dir / "frames" / frame_name(i);
        if (!fs::exists(frame)) throw IoError(frame.string() + ": frame file missing");
        ds.frames.push_back(read_png(frame));
        if (ds.frames.back().width != ds.camera.width || ds.frames.back().height != ds.camera.height) {
            throw IoError(frame.string() + ": image size does not match camera width/height");
        }
    }
    return ds;
}

namespace {

constexpr char kMagic[4] = {'R', 'G', 'B', 'A'};
constexpr std::uint32_t kVersion = 1;

class Writer {
public:
    template <typename T>
    void put(const T& v) {
        const auto* p = reinterpret_cast<const char*>(&v);
        bytes_.insert(bytes_.end(), p, p + sizeof(T));
    }

    template <typename M>
    void floats(const M& m) {
        for (Index i = 0; i < m.size(); ++i) put(static_cast<float>(m.data()[i]));
    }

    const std::vector<char>& bytes() const { return bytes_; }

private:
    std::vector<char> bytes_;
};

class ByteReader {
public:
    ByteReader(std::vector<char> bytes, const fs::path& path) : bytes_(std::move(bytes)), path_(path) {}

    template <typename T>
    T take() {
        if (pos_ + sizeof(T) > bytes_.size()) throw IoError(path_.string() + ": unexpected end of file");
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    template <typename M>
    void floats(M& m) {
        for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<typename M::Scalar>(take<float>());
    }

    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    std::vector<char> bytes_;
    const fs::path& path_;
    std::size_t pos_ = 0;
};

std::uint64_t model_bytes(std::uint64_t n, std::uint64_t k, std::uint64_t h, std::uint64_t hidden) {
    const std::uint64_t base = n * (3 + 4 + 3 + 1 + 3);
    const std::uint64_t deltas = k * n * (3 + 4 + 3);
    const std::uint64_t mlp = hidden * h + hidden + hidden * hidden + hidden + k * hidden + k;
    return 4 + 5 * 4 + 4 * (base + deltas + mlp) + 4 * n + 4 * n * 3 + (n + 7) / 8;
}

}  // namespace

void save_model(const fs::path& path, const AvatarModel<float>& model, const ColorInitState& state) {
    model.validate();
    const Index n = model.size();
    if (static_cast<Index>(state.visited.size()) != n) throw ConfigError("save_model: visited flags do not match N");
    Writer w;
    for (char c : kMagic) w.put(c);
    w.put(kVersion);
    w.put(static_cast<std::uint32_t>(n));
    w.put(static_cast<std::uint32_t>(model.blendshape_count()));
    w.put(static_cast<std::uint32_t>(model.mlp.input_dim()));
    w.put(static_cast<std::uint32_t>(model.mlp.hidden_dim()));
    const auto& b = model.base;
    w.floats(b.position);
    w.floats(b.rotation);
    w.floats(b.scale);
    w.floats(b.opacity);
    w.floats(b.color);
    for (const auto& d : model.deltas) {
        w.floats(d.position);
        w.floats(d.rotation);
        w.floats(d.color);
    }
    const auto& m = model.mlp;
    w.floats(m.w1);
    w.floats(m.b1);
    w.floats(m.w2);
    w.floats(m.b2);
    w.floats(m.w3);
    w.floats(m.b3);
    for (auto t : model.bindings.triangle) w.put(t);
    w.floats(model.bindings.barycentric);
    for (Index byte = 0; byte < (n + 7) / 8; ++byte) {
        std::uint8_t bits = 0;
        for (int bit = 0; bit < 8 && byte * 8 + bit < n; ++bit) {
            if (state.visited[static_cast<std::size_t>(byte * 8 + bit)]) bits |= static_cast<std::uint8_t>(1u << bit);
        }
        w.put(bits);
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(path.string() + ": cannot open for writing");
    out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
    if (!out) throw IoError(path.string() + ": write failed");
}

ModelFile load_model(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(path.string() + ": file not found");
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    ByteReader r(std::move(bytes), path);

    for (char c : kMagic) {
        if (r.take<char>() != c) throw IoError(path.string() + ": bad magic, not a model file");
    }
    const auto version = r.take<std::uint32_t>();
    if (version != kVersion) throw IoError(path.string() + ": unsupported version " + std::to_string(version));
    const std::uint64_t n = r.take<std::uint32_t>(), k = r.take<std::uint32_t>(), h = r.take<std::uint32_t>(),
                        hidden = r.take<std::uint32_t>();
    if (n == 0 || k == 0 || h == 0 || hidden == 0) throw IoError(path.string() + ": N, K, H and hidden must be >= 1");
    constexpr std::uint64_t limit = 1u << 26;
    if (n > limit || k > limit || h > limit || hidden > limit) throw IoError(path.string() + ": header sizes out of range");
    const std::uint64_t expected = model_bytes(n, k, h, hidden);
    const std::uint64_t actual = r.remaining() + 24;
    if (actual != expected) {
        throw IoError(path.string() + ": length " + std::to_string(actual) + " bytes, header implies " +
                      std::to_string(expected));
    }

    ModelFile f;
    auto& m = f.model;
    const auto N = static_cast<Index>(n), K = static_cast<Index>(k), H = static_cast<Index>(h),
               W = static_cast<Index>(hidden);
    m.base = GaussianSet<float>::zeros(N);
    r.floats(m.base.position);
    r.floats(m.base.rotation);
    r.floats(m.base.scale);
    r.floats(m.base.opacity);
    r.floats(m.base.color);
    m.deltas.assign(static_cast<std::size_t>(K), DeltaSet<float>::zeros(N));
    for (auto& d : m.deltas) {
        r.floats(d.position);
        r.floats(d.rotation);
        r.floats(d.color);
    }
    m.mlp = MlpWeights<float>::zeros(H, W, K);
    r.floats(m.mlp.w1);
    r.floats(m.mlp.b1);
    r.floats(m.mlp.w2);
    r.floats(m.mlp.b2);
    r.floats(m.mlp.w3);
    r.floats(m.mlp.b3);
    m.bindings.triangle.resize(static_cast<std::size_t>(N));
    for (auto& t : m.bindings.triangle) t = r.take<std::uint32_t>();
    m.bindings.barycentric = RowMatX3<double>(N, 3);
    r.floats(m.bindings.barycentric);
    f.color_state = ColorInitState(N);
    for (Index byte = 0; byte < (N + 7) / 8; ++byte) {
        const auto bits = r.take<std::uint8_t>();
        for (int bit = 0; bit < 8 && byte * 8 + bit < N; ++bit) {
            f.color_state.visited[static_cast<std::size_t>(byte * 8 + bit)] = (bits >> bit) & 1u;
        }
    }
    try {
        m.validate();
    } catch (const std::exception& e) {
        throw IoError(path.string() + ": invalid model (" + e.what() + ")");
    }
    return f;
}

void write_metrics_log(const fs::path& path, const std::vector<StepRecord>& log) {
    std::ofstream out(path);
    if (!out) throw IoError(path.string() + ": cannot open for writing");
    for (const auto& r : log) out << json{{"step", r.step}, {"loss", r.loss}, {"wall_ms", r.wall_ms}}.dump() << '\n';
}

std::vector<StepRecord> read_metrics_log(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError(path.string() + ": file not found");
    std::vector<StepRecord> log;
    std::string line;
    const Reader r{path};
    for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception&) {
            throw IoError(path.string() + ": line " + std::to_string(lineno) + " is not JSON");
        }
        log.push_back({r.get<std::int64_t>(r.at(j, "step"), "step"), r.get<double>(r.at(j, "loss"), "loss"),
                       r.get<double>(r.at(j, "wall_ms"), "wall_ms")});
    }
    return log;
}

void write_forgetting_report(const fs::path& path, const std::vector<FrameLoss>& frames) {
    std::ofstream out(path);
    if (!out) throw IoError(path.string() + ": cannot open for writing");
    for (const auto& f : frames) {
        json j = {{"frame", f.frame}, {"final_l1", f.final_l1}};
        j["min_l1"] = std::isnan(f.min_l1) ? json(nullptr) : json(f.min_l1);
        out << j.dump() << '\n';
    }
}

std::vector<VecX<double>> read_theta_file(const fs::path& path, Index expected_dim) {
    const json j = read_json(path);
    const Reader r{path};
    if (!j.is_array()) throw IoError(path.string() + ": expected an array of parameter vectors");
    std::vector<VecX<double>> out;
    for (std::size_t i = 0; i < j.size(); ++i) {
        const auto v = r.get<std::vector<double>>(j[i], "[" + std::to_string(i) + "]");
        if (static_cast<Index>(v.size()) != expected_dim) {
            throw IoError(path.string() + ": entry " + std::to_string(i) + " has " + std::to_string(v.size()) +
                          " values, expected " + std::to_string(expected_dim));
        }
        out.push_back(Eigen::Map<const VecX<double>>(v.data(), expected_dim));
    }
    return out;
}

}  // namespace gsavatar
