#include "instgs/camera.hpp"

#include <Eigen/Geometry>

#include <cmath>
#include <numbers>

namespace instgs {

void Camera::validate() const {
    if (!(fx > 0.0) || !(fy > 0.0) || !std::isfinite(cx) || !std::isfinite(cy)) {
        throw std::invalid_argument("camera intrinsics invalid");
    }
    if (width <= 0 || height <= 0) throw std::invalid_argument("camera resolution must be positive");
    if (!rotation.allFinite() || !translation.allFinite()) {
        throw std::invalid_argument("camera pose not finite");
    }
    const double err = (rotation * rotation.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
    if (err > 1e-6) throw std::invalid_argument("camera rotation not orthonormal");
    if (!(near > 0.0) || !(far > near)) throw std::invalid_argument("camera requires 0 < near < far");
}

Camera Camera::look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                       const Eigen::Vector3d& up, int width, int height, double fov_y_deg) {
    const Eigen::Vector3d forward = (target - eye).normalized();
    const Eigen::Vector3d right = forward.cross(up).normalized();
    const Eigen::Vector3d down = forward.cross(right);

    Camera cam;
    cam.width = width;
    cam.height = height;
    cam.fy = 0.5 * height / std::tan(0.5 * fov_y_deg * std::numbers::pi / 180.0);
    cam.fx = cam.fy;
    cam.cx = 0.5 * width;
    cam.cy = 0.5 * height;
    cam.rotation.row(0) = right.transpose();
    cam.rotation.row(1) = down.transpose();
    cam.rotation.row(2) = forward.transpose();
    cam.translation = -cam.rotation * eye;
    return cam;
}

nlohmann::json camera_to_json(const Camera& cam) {
    nlohmann::json rot = nlohmann::json::array();
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) rot.push_back(cam.rotation(r, c));
    return {
        {"fx", cam.fx},          {"fy", cam.fy},
        {"cx", cam.cx},          {"cy", cam.cy},
        {"width", cam.width},    {"height", cam.height},
        {"rotation", rot},
        {"translation", {cam.translation.x(), cam.translation.y(), cam.translation.z()}},
        {"near", cam.near},      {"far", cam.far},
    };
}

namespace {

double number(const nlohmann::json& j, const char* field) {
    if (!j.contains(field)) throw CameraFormatError(field, "missing");
    const auto& v = j.at(field);
    if (!v.is_number()) throw CameraFormatError(field, "expected a number");
    return v.get<double>();
}

int integer(const nlohmann::json& j, const char* field) {
    if (!j.contains(field)) throw CameraFormatError(field, "missing");
    const auto& v = j.at(field);
    if (!v.is_number_integer()) throw CameraFormatError(field, "expected an integer");
    return v.get<int>();
}

void array_of(const nlohmann::json& j, const char* field, std::size_t n, double* out) {
    if (!j.contains(field)) throw CameraFormatError(field, "missing");
    const auto& v = j.at(field);
    if (!v.is_array() || v.size() != n) {
        throw CameraFormatError(field, "expected an array of " + std::to_string(n) + " numbers");
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (!v[i].is_number()) throw CameraFormatError(field, "expected numbers");
        out[i] = v[i].get<double>();
    }
}

}  // namespace

Camera camera_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw CameraFormatError("camera", "expected an object");
    Camera cam;
    cam.fx = number(j, "fx");
    cam.fy = number(j, "fy");
    cam.cx = number(j, "cx");
    cam.cy = number(j, "cy");
    cam.width = integer(j, "width");
    cam.height = integer(j, "height");
    double rot[9];
    array_of(j, "rotation", 9, rot);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) cam.rotation(r, c) = rot[r * 3 + c];
    array_of(j, "translation", 3, cam.translation.data());
    if (j.contains("near")) cam.near = number(j, "near");
    if (j.contains("far")) cam.far = number(j, "far");

    if (!(cam.fx > 0.0)) throw CameraFormatError("fx", "must be positive");
    if (!(cam.fy > 0.0)) throw CameraFormatError("fy", "must be positive");
    if (cam.width <= 0 || cam.width > 8192) throw CameraFormatError("width", "out of range");
    if (cam.height <= 0 || cam.height > 8192) throw CameraFormatError("height", "out of range");
    const double err =
        (cam.rotation * cam.rotation.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
    if (!(err <= 1e-6)) throw CameraFormatError("rotation", "not orthonormal");
    if (!(cam.near > 0.0)) throw CameraFormatError("near", "must be positive");
    if (!(cam.far > cam.near)) throw CameraFormatError("far", "must exceed near");
    return cam;
}

}  // namespace instgs
