#pragma once

#include "instgs/camera.hpp"
#include "instgs/codebook.hpp"
#include "instgs/image.hpp"
#include "instgs/scene.hpp"

#include <Eigen/Core>

#include <optional>

namespace instgs {

/// Added to the projected covariance diagonal before inversion (px^2).
inline constexpr double kCovarianceFloor = 0.3;
/// Pixels where the projected Gaussian weight falls below this are skipped.
inline constexpr double kMinGaussianWeight = 1.0 / 255.0;
/// Compositing stops once transmittance drops below this.
inline constexpr double kMinTransmittance = 1e-4;

struct Projected2D {
    Eigen::Vector2d mean2d;
    Eigen::Matrix2d cov2d;  // includes kCovarianceFloor
    double depth = 0.0;
    double radius = 0.0;
};

/// 3D covariance R S S^T R^T from scale and (normalized) quaternion.
[[nodiscard]] Eigen::Matrix3d gaussian_covariance(const Gaussian& g);
[[nodiscard]] Eigen::Matrix3d quaternion_to_matrix(const Eigen::Vector4d& wxyz);

/// EWA projection. Returns nullopt when the Gaussian is culled: depth <= near,
/// depth > far, or its bounding square lies fully outside the image.
[[nodiscard]] std::optional<Projected2D> project_gaussian(const Gaussian& g, const Camera& cam);

struct RenderOutput {
    ColorImage color;      // H x W x 3
    FeatureImage feature;  // H x W x d, no background term
    Image<double> alpha;   // H x W x 1
};

/// Front-to-back alpha compositing of color and feature with identical weights.
/// Throws std::invalid_argument if a Gaussian's feature size differs from
/// scene.feature_dim.
[[nodiscard]] RenderOutput render(const Scene& scene, const Camera& cam);

/// Upstream gradients of a scalar loss w.r.t. each RenderOutput image. Empty
/// images are treated as zero.
struct RenderAdjoint {
    ColorImage color;
    FeatureImage feature;
    Image<double> alpha;
};

/// Gradients w.r.t. the stored (unconstrained) Gaussian parameters, one row
/// per Gaussian. The same layout doubles as the trainer's parameter block.
struct SceneGradients {
    Eigen::MatrixXd position;   // N x 3
    Eigen::MatrixXd log_scale;  // N x 3
    Eigen::MatrixXd rotation;   // N x 4, raw (unnormalized) quaternion
    Eigen::MatrixXd opacity;    // N x 1, logit
    Eigen::MatrixXd color;      // N x 3
    Eigen::MatrixXd feature;    // N x d

    static SceneGradients zeros(std::size_t n, int feature_dim);
    SceneGradients& operator+=(const SceneGradients& o);
};

/// Reverse-mode pass of render(). Geometry rows are only filled when
/// `geometry` is true (otherwise they stay zero).
[[nodiscard]] SceneGradients render_backward(const Scene& scene, const Camera& cam,
                                             const RenderAdjoint& adjoint, bool geometry = false);

/// Each pixel takes the id of the Gaussian with the largest blending weight;
/// pixels whose accumulated alpha is below 0.5 are kBackground.
[[nodiscard]] IdMap render_id_map(const Scene& scene, const Camera& cam, const Codebook& cb);

}  // namespace instgs
