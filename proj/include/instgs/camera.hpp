#pragma once

#include <Eigen/Core>
#include <json.hpp>

#include <stdexcept>
#include <string>

namespace instgs {

/// Pinhole camera. Camera frame: +x right, +y down, +z forward.
/// Pixel (x, y) samples the image plane at integer coordinates (x, y).
struct Camera {
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;
    int width = 1;
    int height = 1;
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();  // world -> camera
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();
    double near = 0.01;
    double far = 100.0;

    [[nodiscard]] Eigen::Vector3d to_camera(const Eigen::Vector3d& world) const {
        return rotation * world + translation;
    }

    /// Throws std::invalid_argument when intrinsics, resolution, rotation
    /// orthonormality (1e-6) or clip planes are invalid.
    void validate() const;

    /// Camera at `eye` looking toward `target`; `up` is the world up direction.
    static Camera look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                          const Eigen::Vector3d& up, int width, int height, double fov_y_deg);
};

/// Camera JSON error carrying the offending field name.
class CameraFormatError : public std::invalid_argument {
public:
    CameraFormatError(const std::string& field, const std::string& what)
        : std::invalid_argument("camera field '" + field + "': " + what), field_(field) {}
    [[nodiscard]] const std::string& field() const { return field_; }

private:
    std::string field_;
};

/// {"fx","fy","cx","cy","width","height","rotation":[9, row-major],
///  "translation":[3],"near","far"}
[[nodiscard]] nlohmann::json camera_to_json(const Camera& cam);
[[nodiscard]] Camera camera_from_json(const nlohmann::json& j);

}  // namespace instgs
