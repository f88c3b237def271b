#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace instgs {

/// Maximum instance-feature dimension; bounds the 2^d ID space.
inline constexpr int kMaxFeatureDim = 16;

/// One anisotropic 3D Gaussian with an instance feature.
///
/// Scale and opacity are stored in unconstrained form (log-scale, logit);
/// use the accessors for physical values. Rotation is a (w, x, y, z)
/// quaternion that the rasterizer normalizes before use.
struct Gaussian {
    Eigen::Vector3d position = Eigen::Vector3d::Zero();
    Eigen::Vector3d log_scale = Eigen::Vector3d::Zero();
    Eigen::Vector4d rotation{1.0, 0.0, 0.0, 0.0};
    double opacity_logit = 0.0;
    Eigen::Vector3d color = Eigen::Vector3d::Zero();
    Eigen::VectorXd feature;

    [[nodiscard]] Eigen::Vector3d scale() const { return log_scale.array().exp(); }
    void set_scale(const Eigen::Vector3d& s) { log_scale = s.array().log(); }

    [[nodiscard]] double opacity() const;
    void set_opacity(double a);
};

struct Scene {
    int feature_dim = 8;
    Eigen::Vector3d background = Eigen::Vector3d::Zero();
    std::vector<Gaussian> gaussians;

    [[nodiscard]] std::size_t size() const { return gaussians.size(); }
    [[nodiscard]] bool empty() const { return gaussians.empty(); }
};

double sigmoid(double x);
double logit(double p);

/// Thrown for unreadable, malformed, or invariant-violating scene content.
class SceneError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Checks every Gaussian invariant: finite values, positive scale, unit
/// quaternion (1e-6), opacity and color in [0, 1], matching feature_dim.
/// Throws SceneError naming the first offending record.
void validate(const Scene& scene);

/// SceneFile ("IGS1") layout, little-endian:
///   char[4] magic, u32 version, u32 feature_dim, u32 count, f32[3] background,
///   then count records of (14 + feature_dim) f32:
///   position[3] scale[3] rotation(w,x,y,z)[4] opacity color[3] feature[d]
inline constexpr char kSceneMagic[4] = {'I', 'G', 'S', '1'};
inline constexpr std::uint32_t kSceneVersion = 1;
inline constexpr std::size_t kSceneHeaderBytes = 28;

[[nodiscard]] std::size_t scene_record_bytes(int feature_dim);

/// Writes via a temporary file plus rename, so readers never see a partial file.
void save_scene(const Scene& scene, const std::filesystem::path& path);
[[nodiscard]] Scene load_scene(const std::filesystem::path& path);

/// In-memory variants of the SceneFile codec.
[[nodiscard]] std::string encode_scene(const Scene& scene);
[[nodiscard]] Scene decode_scene(const std::string& bytes);

}  // namespace instgs
