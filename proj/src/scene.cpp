#include "instgs/scene.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <system_error>

namespace instgs {

static_assert(std::endian::native == std::endian::little,
              "SceneFile codec assumes a little-endian host");

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double logit(double p) { return std::log(p / (1.0 - p)); }

double Gaussian::opacity() const { return sigmoid(opacity_logit); }

void Gaussian::set_opacity(double a) { opacity_logit = logit(a); }

namespace {

std::string record_error(std::size_t index, const std::string& what) {
    return "corrupt record at index " + std::to_string(index) + ": " + what;
}

bool in_unit(double v) { return v >= 0.0 && v <= 1.0; }

void check_gaussian(const Gaussian& g, std::size_t index, int feature_dim) {
    if (!g.position.allFinite()) throw SceneError(record_error(index, "non-finite position"));
    if (g.log_scale.array().isNaN().any()) throw SceneError(record_error(index, "NaN scale"));
    const Eigen::Vector3d s = g.scale();
    if (!s.allFinite() || (s.array() <= 0.0).any()) {
        throw SceneError(record_error(index, "scale must be finite and > 0"));
    }
    if (!g.rotation.allFinite() || std::abs(g.rotation.norm() - 1.0) > 1e-6) {
        throw SceneError(record_error(index, "rotation is not a unit quaternion"));
    }
    if (std::isnan(g.opacity_logit) || !in_unit(g.opacity())) {
        throw SceneError(record_error(index, "opacity outside [0, 1]"));
    }
    if (!g.color.allFinite() || (g.color.array() < 0.0).any() || (g.color.array() > 1.0).any()) {
        throw SceneError(record_error(index, "color outside [0, 1]"));
    }
    if (g.feature.size() != feature_dim) {
        throw SceneError(record_error(index, "feature dimension mismatch"));
    }
    if (!g.feature.allFinite()) throw SceneError(record_error(index, "non-finite feature"));
}

template <typename T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

template <typename T>
T get(const std::string& in, std::size_t& off) {
    T v;
    std::memcpy(&v, in.data() + off, sizeof(T));
    off += sizeof(T);
    return v;
}

void put_f(std::string& out, double v) { put<float>(out, static_cast<float>(v)); }

}  // namespace

void validate(const Scene& scene) {
    if (scene.feature_dim <= 0 || scene.feature_dim > kMaxFeatureDim) {
        throw SceneError("feature_dim must be in [1, " + std::to_string(kMaxFeatureDim) + "]");
    }
    for (std::size_t i = 0; i < scene.gaussians.size(); ++i) {
        check_gaussian(scene.gaussians[i], i, scene.feature_dim);
    }
}

std::size_t scene_record_bytes(int feature_dim) {
    return static_cast<std::size_t>(14 + feature_dim) * sizeof(float);
}

std::string encode_scene(const Scene& scene) {
    if (scene.feature_dim <= 0 || scene.feature_dim > kMaxFeatureDim) {
        throw SceneError("feature_dim out of range");
    }
    std::string out;
    out.reserve(kSceneHeaderBytes + scene.size() * scene_record_bytes(scene.feature_dim));
    out.append(kSceneMagic, 4);
    put<std::uint32_t>(out, kSceneVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(scene.feature_dim));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(scene.size()));
    for (int c = 0; c < 3; ++c) put_f(out, scene.background[c]);

    for (std::size_t i = 0; i < scene.size(); ++i) {
        const Gaussian& g = scene.gaussians[i];
        if (g.feature.size() != scene.feature_dim) {
            throw SceneError(record_error(i, "feature dimension mismatch"));
        }
        const Eigen::Vector3d s = g.scale();
        for (int c = 0; c < 3; ++c) put_f(out, g.position[c]);
        for (int c = 0; c < 3; ++c) put_f(out, s[c]);
        for (int c = 0; c < 4; ++c) put_f(out, g.rotation[c]);
        put_f(out, g.opacity());
        for (int c = 0; c < 3; ++c) put_f(out, g.color[c]);
        for (int c = 0; c < scene.feature_dim; ++c) put_f(out, g.feature[c]);
    }
    return out;
}

Scene decode_scene(const std::string& bytes) {
    if (bytes.size() < kSceneHeaderBytes || std::memcmp(bytes.data(), kSceneMagic, 4) != 0) {
        throw SceneError("unsupported format: bad magic");
    }
    std::size_t off = 4;
    const auto version = get<std::uint32_t>(bytes, off);
    if (version != kSceneVersion) {
        throw SceneError("unsupported format: version " + std::to_string(version));
    }
    const auto dim = get<std::uint32_t>(bytes, off);
    const auto count = get<std::uint32_t>(bytes, off);
    if (dim == 0 || dim > static_cast<std::uint32_t>(kMaxFeatureDim)) {
        throw SceneError("unsupported format: feature_dim " + std::to_string(dim));
    }

    Scene scene;
    scene.feature_dim = static_cast<int>(dim);
    for (int c = 0; c < 3; ++c) scene.background[c] = get<float>(bytes, off);
    if (!scene.background.allFinite()) throw SceneError("corrupt header: background");

    const std::size_t rec = scene_record_bytes(scene.feature_dim);
    scene.gaussians.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        if (off + rec > bytes.size()) throw SceneError(record_error(i, "truncated file"));
        Gaussian g;
        Eigen::Vector3d s;
        for (int c = 0; c < 3; ++c) g.position[c] = get<float>(bytes, off);
        for (int c = 0; c < 3; ++c) s[c] = get<float>(bytes, off);
        for (int c = 0; c < 4; ++c) g.rotation[c] = get<float>(bytes, off);
        const double opacity = get<float>(bytes, off);
        for (int c = 0; c < 3; ++c) g.color[c] = get<float>(bytes, off);
        g.feature.resize(scene.feature_dim);
        for (int c = 0; c < scene.feature_dim; ++c) g.feature[c] = get<float>(bytes, off);

        if (!s.allFinite() || (s.array() <= 0.0).any()) {
            throw SceneError(record_error(i, "scale must be finite and > 0"));
        }
        if (std::isnan(opacity) || !in_unit(opacity)) {
            throw SceneError(record_error(i, "opacity outside [0, 1]"));
        }
        g.set_scale(s);
        g.set_opacity(opacity);
        check_gaussian(g, i, scene.feature_dim);
        scene.gaussians.push_back(std::move(g));
    }
    if (off != bytes.size()) throw SceneError("corrupt file: trailing bytes after last record");
    return scene;
}

void save_scene(const Scene& scene, const std::filesystem::path& path) {
    const std::string bytes = encode_scene(scene);
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw SceneError("cannot open " + tmp.string() + " for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.close();
        if (!out) {
            std::error_code ec;
            std::filesystem::remove(tmp, ec);
            throw SceneError("write failed for " + path.string());
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw SceneError("cannot move scene into place at " + path.string());
    }
}

Scene load_scene(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw SceneError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    try {
        return decode_scene(ss.str());
    } catch (const SceneError& e) {
        throw SceneError(path.string() + ": " + e.what());
    }
}

}  // namespace instgs
