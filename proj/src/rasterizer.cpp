#include "instgs/rasterizer.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace instgs {

namespace {

constexpr int kTile = 16;

using Mat23 = Eigen::Matrix<double, 2, 3>;
template <int N>
using RowRef = Eigen::Ref<Eigen::Matrix<double, 1, N>, 0, Eigen::InnerStride<>>;

/// Intermediate values of the EWA projection, kept for the backward pass.
struct ProjectionTerms {
    Eigen::Vector3d cam_point;  // (x, y, z) in camera frame
    Mat23 jacobian;             // d(mean2d)/d(cam_point)
    Eigen::Matrix3d rot;        // R(q_hat)
    Eigen::Vector3d scale;
    Eigen::Matrix3d cam_cov;    // W Sigma W^T
    Eigen::Matrix2d cov2d;      // with floor
};

ProjectionTerms projection_terms(const Gaussian& g, const Camera& cam) {
    ProjectionTerms t;
    t.cam_point = cam.to_camera(g.position);
    const double x = t.cam_point.x(), y = t.cam_point.y(), z = t.cam_point.z();
    t.jacobian << cam.fx / z, 0.0, -cam.fx * x / (z * z),
                  0.0, cam.fy / z, -cam.fy * y / (z * z);
    t.rot = quaternion_to_matrix(g.rotation);
    t.scale = g.scale();
    const Eigen::Matrix3d a = t.rot * t.scale.asDiagonal();
    t.cam_cov = cam.rotation * (a * a.transpose()) * cam.rotation.transpose();
    t.cov2d = t.jacobian * t.cam_cov * t.jacobian.transpose();
    t.cov2d(0, 0) += kCovarianceFloor;
    t.cov2d(1, 1) += kCovarianceFloor;
    return t;
}

struct Splat {
    int index = 0;
    Eigen::Vector2d mean;
    Eigen::Matrix2d conic;
    double opacity = 0.0;
    double depth = 0.0;
    int x0 = 0, x1 = -1, y0 = 0, y1 = -1;  // inclusive pixel bounds
};

/// Projected, depth-sorted splats plus per-tile lists (in sorted order).
struct Frame {
    int width = 0;
    int height = 0;
    int tiles_x = 0;
    int tiles_y = 0;
    std::vector<Splat> splats;
    std::vector<std::vector<int>> tiles;

    [[nodiscard]] const std::vector<int>& tile_for(int x, int y) const {
        return tiles[static_cast<std::size_t>(y / kTile) * tiles_x + x / kTile];
    }
};

void check_dims(const Scene& scene) {
    for (std::size_t i = 0; i < scene.size(); ++i) {
        if (scene.gaussians[i].feature.size() != scene.feature_dim) {
            throw std::invalid_argument("Gaussian " + std::to_string(i) +
                                        " feature size does not match scene feature_dim");
        }
    }
}

Frame build_frame(const Scene& scene, const Camera& cam) {
    check_dims(scene);
    Frame f;
    f.width = cam.width;
    f.height = cam.height;
    f.tiles_x = (cam.width + kTile - 1) / kTile;
    f.tiles_y = (cam.height + kTile - 1) / kTile;
    f.tiles.resize(static_cast<std::size_t>(f.tiles_x) * f.tiles_y);

    f.splats.reserve(scene.size());
    for (std::size_t i = 0; i < scene.size(); ++i) {
        const Gaussian& g = scene.gaussians[i];
        const auto proj = project_gaussian(g, cam);
        if (!proj) continue;
        Splat s;
        s.index = static_cast<int>(i);
        s.mean = proj->mean2d;
        s.conic = proj->cov2d.inverse();
        s.opacity = g.opacity();
        s.depth = proj->depth;
        s.x0 = std::max(0, static_cast<int>(std::ceil(s.mean.x() - proj->radius)));
        s.x1 = std::min(cam.width - 1, static_cast<int>(std::floor(s.mean.x() + proj->radius)));
        s.y0 = std::max(0, static_cast<int>(std::ceil(s.mean.y() - proj->radius)));
        s.y1 = std::min(cam.height - 1, static_cast<int>(std::floor(s.mean.y() + proj->radius)));
        if (s.x0 > s.x1 || s.y0 > s.y1) continue;
        f.splats.push_back(s);
    }
    // Front to back; equal depths keep the lower Gaussian index in front.
    std::stable_sort(f.splats.begin(), f.splats.end(),
                     [](const Splat& a, const Splat& b) { return a.depth < b.depth; });

    for (int k = 0; k < static_cast<int>(f.splats.size()); ++k) {
        const Splat& s = f.splats[k];
        for (int ty = s.y0 / kTile; ty <= s.y1 / kTile; ++ty)
            for (int tx = s.x0 / kTile; tx <= s.x1 / kTile; ++tx)
                f.tiles[static_cast<std::size_t>(ty) * f.tiles_x + tx].push_back(k);
    }
    return f;
}

struct Contribution {
    int splat = 0;
    double gauss = 0.0;          // G'(u)
    double alpha = 0.0;          // opacity * G'
    double transmittance = 0.0;  // before this splat
    Eigen::Vector2d offset;      // u - mean
};

/// Walks the splats covering pixel (x, y) front to back and reports each
/// contribution. Returns the final transmittance.
template <typename Fn>
double composite_pixel(const Frame& frame, int x, int y, Fn&& fn) {
    double trans = 1.0;
    const Eigen::Vector2d u(x, y);
    for (int k : frame.tile_for(x, y)) {
        const Splat& s = frame.splats[k];
        if (x < s.x0 || x > s.x1 || y < s.y0 || y > s.y1) continue;
        const Eigen::Vector2d d = u - s.mean;
        const double q = d.dot(s.conic * d);
        const double gauss = std::exp(-0.5 * q);
        if (gauss < kMinGaussianWeight) continue;
        const double alpha = s.opacity * gauss;
        fn(Contribution{k, gauss, alpha, trans, d});
        trans *= (1.0 - alpha);
        if (trans < kMinTransmittance) break;
    }
    return trans;
}

/// Chain rule from (mean2d, cov2d) back to position, log-scale and raw quaternion.
void projection_backward(const Gaussian& g, const Camera& cam, const Eigen::Vector2d& g_mean,
                         const Eigen::Matrix2d& g_cov, RowRef<3> g_pos, RowRef<3> g_logscale,
                         RowRef<4> g_rot) {
    const ProjectionTerms t = projection_terms(g, cam);
    const double x = t.cam_point.x(), y = t.cam_point.y(), z = t.cam_point.z();
    const double fx = cam.fx, fy = cam.fy;

    Eigen::Vector3d g_t;
    g_t.x() = g_mean.x() * fx / z;
    g_t.y() = g_mean.y() * fy / z;
    g_t.z() = -g_mean.x() * fx * x / (z * z) - g_mean.y() * fy * y / (z * z);

    // cov2d = J M J^T (+ floor)
    const Eigen::Matrix3d g_m = t.jacobian.transpose() * g_cov * t.jacobian;
    const Mat23 g_j = (g_cov + g_cov.transpose()) * t.jacobian * t.cam_cov;
    const double z2 = z * z, z3 = z2 * z;
    g_t.x() += g_j(0, 2) * (-fx / z2);
    g_t.y() += g_j(1, 2) * (-fy / z2);
    g_t.z() += g_j(0, 0) * (-fx / z2) + g_j(0, 2) * (2.0 * fx * x / z3) +
               g_j(1, 1) * (-fy / z2) + g_j(1, 2) * (2.0 * fy * y / z3);
    g_pos += (cam.rotation.transpose() * g_t).transpose();

    // M = W Sigma W^T, Sigma = A A^T, A = R S
    const Eigen::Matrix3d g_sigma = cam.rotation.transpose() * g_m * cam.rotation;
    const Eigen::Matrix3d a = t.rot * t.scale.asDiagonal();
    const Eigen::Matrix3d g_a = (g_sigma + g_sigma.transpose()) * a;
    const Eigen::Matrix3d g_r = g_a * t.scale.asDiagonal();
    for (int j = 0; j < 3; ++j) {
        const double g_s = g_a.col(j).dot(t.rot.col(j));
        g_logscale[j] += g_s * t.scale[j];
    }

    const double n = g.rotation.norm();
    const Eigen::Vector4d qh = g.rotation / n;
    const double w = qh[0], qx = qh[1], qy = qh[2], qz = qh[3];
    Eigen::Vector4d g_qh;
    g_qh[0] = 2.0 * (-qz * g_r(0, 1) + qy * g_r(0, 2) + qz * g_r(1, 0) - qx * g_r(1, 2) -
                     qy * g_r(2, 0) + qx * g_r(2, 1));
    g_qh[1] = 2.0 * (qy * g_r(0, 1) + qz * g_r(0, 2) + qy * g_r(1, 0) - 2.0 * qx * g_r(1, 1) -
                     w * g_r(1, 2) + qz * g_r(2, 0) + w * g_r(2, 1) - 2.0 * qx * g_r(2, 2));
    g_qh[2] = 2.0 * (-2.0 * qy * g_r(0, 0) + qx * g_r(0, 1) + w * g_r(0, 2) + qx * g_r(1, 0) +
                     qz * g_r(1, 2) - w * g_r(2, 0) + qz * g_r(2, 1) - 2.0 * qy * g_r(2, 2));
    g_qh[3] = 2.0 * (-2.0 * qz * g_r(0, 0) - w * g_r(0, 1) + qx * g_r(0, 2) + w * g_r(1, 0) -
                     2.0 * qz * g_r(1, 1) + qy * g_r(1, 2) + qx * g_r(2, 0) + qy * g_r(2, 1));
    g_rot += ((g_qh - qh * qh.dot(g_qh)) / n).transpose();
}

}  // namespace

Eigen::Matrix3d quaternion_to_matrix(const Eigen::Vector4d& wxyz) {
    const Eigen::Vector4d q = wxyz.normalized();
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Eigen::Matrix3d r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
         2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
         2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

Eigen::Matrix3d gaussian_covariance(const Gaussian& g) {
    const Eigen::Matrix3d a = quaternion_to_matrix(g.rotation) * g.scale().asDiagonal();
    return a * a.transpose();
}

std::optional<Projected2D> project_gaussian(const Gaussian& g, const Camera& cam) {
    const Eigen::Vector3d p = cam.to_camera(g.position);
    if (!(p.z() > cam.near) || p.z() > cam.far) return std::nullopt;

    const ProjectionTerms t = projection_terms(g, cam);
    Projected2D out;
    out.mean2d = {cam.fx * p.x() / p.z() + cam.cx, cam.fy * p.y() / p.z() + cam.cy};
    out.cov2d = t.cov2d;
    out.depth = p.z();
    const double lambda_max = Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d>(
                                  t.cov2d, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
    // Extent where G' reaches kMinGaussianWeight, plus one pixel of slack.
    out.radius = std::ceil(std::sqrt(-2.0 * std::log(kMinGaussianWeight) * lambda_max)) + 1.0;

    if (!std::isfinite(out.mean2d.x()) || !std::isfinite(out.mean2d.y())) return std::nullopt;
    if (out.mean2d.x() + out.radius < 0.0 || out.mean2d.x() - out.radius > cam.width - 1 ||
        out.mean2d.y() + out.radius < 0.0 || out.mean2d.y() - out.radius > cam.height - 1) {
        return std::nullopt;
    }
    return out;
}

SceneGradients SceneGradients::zeros(std::size_t n, int feature_dim) {
    const auto rows = static_cast<Eigen::Index>(n);
    SceneGradients g;
    g.position = Eigen::MatrixXd::Zero(rows, 3);
    g.log_scale = Eigen::MatrixXd::Zero(rows, 3);
    g.rotation = Eigen::MatrixXd::Zero(rows, 4);
    g.opacity = Eigen::MatrixXd::Zero(rows, 1);
    g.color = Eigen::MatrixXd::Zero(rows, 3);
    g.feature = Eigen::MatrixXd::Zero(rows, feature_dim);
    return g;
}

SceneGradients& SceneGradients::operator+=(const SceneGradients& o) {
    position += o.position;
    log_scale += o.log_scale;
    rotation += o.rotation;
    opacity += o.opacity;
    color += o.color;
    feature += o.feature;
    return *this;
}

RenderOutput render(const Scene& scene, const Camera& cam) {
    const Frame frame = build_frame(scene, cam);
    const int d = scene.feature_dim;
    RenderOutput out{ColorImage(cam.width, cam.height, 3), FeatureImage(cam.width, cam.height, d),
                     Image<double>(cam.width, cam.height, 1)};

    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            const std::size_t p = static_cast<std::size_t>(y) * cam.width + x;
            auto color = out.color.pixel(p);
            auto feat = out.feature.pixel(p);
            const double trans = composite_pixel(frame, x, y, [&](const Contribution& c) {
                const Gaussian& g = scene.gaussians[frame.splats[c.splat].index];
                const double w = c.alpha * c.transmittance;
                for (int k = 0; k < 3; ++k) color[k] += w * g.color[k];
                for (int k = 0; k < d; ++k) feat[k] += w * g.feature[k];
            });
            for (int k = 0; k < 3; ++k) color[k] += trans * scene.background[k];
            out.alpha.data[p] = 1.0 - trans;
        }
    }
    return out;
}

SceneGradients render_backward(const Scene& scene, const Camera& cam, const RenderAdjoint& adjoint,
                               bool geometry) {
    const Frame frame = build_frame(scene, cam);
    const int d = scene.feature_dim;
    const std::size_t n = scene.size();
    SceneGradients grads = SceneGradients::zeros(n, d);

    const bool has_color = !adjoint.color.empty();
    const bool has_feature = !adjoint.feature.empty();
    const bool has_alpha = !adjoint.alpha.empty();
    if ((has_color && (adjoint.color.width != cam.width || adjoint.color.height != cam.height ||
                       adjoint.color.channels != 3)) ||
        (has_feature && (adjoint.feature.width != cam.width ||
                         adjoint.feature.height != cam.height || adjoint.feature.channels != d)) ||
        (has_alpha && (adjoint.alpha.width != cam.width || adjoint.alpha.height != cam.height ||
                       adjoint.alpha.channels != 1))) {
        throw std::invalid_argument("render adjoint shape does not match the render output");
    }
    if (!has_color && !has_feature && !has_alpha) return grads;

    // Per-splat accumulators in screen space.
    std::vector<double> g_opacity(frame.splats.size(), 0.0);
    std::vector<Eigen::Vector2d> g_mean(frame.splats.size(), Eigen::Vector2d::Zero());
    std::vector<Eigen::Matrix2d> g_conic(frame.splats.size(), Eigen::Matrix2d::Zero());

    std::vector<Contribution> contribs;
    Eigen::Vector3d gc = Eigen::Vector3d::Zero();
    Eigen::VectorXd gf = Eigen::VectorXd::Zero(d);
    Eigen::VectorXd tail_f(d);

    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            const std::size_t p = static_cast<std::size_t>(y) * cam.width + x;
            if (has_color) gc = Eigen::Map<const Eigen::Vector3d>(adjoint.color.pixel(p).data());
            if (has_feature) gf = Eigen::Map<const Eigen::VectorXd>(adjoint.feature.pixel(p).data(), d);
            const double ga = has_alpha ? adjoint.alpha.data[p] : 0.0;
            if (gc.isZero(0.0) && gf.isZero(0.0) && ga == 0.0) continue;

            contribs.clear();
            composite_pixel(frame, x, y, [&](const Contribution& c) { contribs.push_back(c); });

            // Tails: what the pixel would show directly behind splat k (not
            // yet scaled by its transmittance). Avoids dividing by (1 - alpha).
            Eigen::Vector3d tail_c = scene.background;
            tail_f.setZero();
            double tail_a = 0.0;
            for (auto it = contribs.rbegin(); it != contribs.rend(); ++it) {
                const Splat& s = frame.splats[it->splat];
                const Gaussian& g = scene.gaussians[s.index];
                const double w = it->alpha * it->transmittance;

                grads.color.row(s.index) += w * gc.transpose();
                grads.feature.row(s.index) += w * gf.transpose();

                const double g_alpha =
                    it->transmittance * (gc.dot(g.color - tail_c) + gf.dot(g.feature - tail_f) +
                                         ga * (1.0 - tail_a));
                g_opacity[it->splat] += g_alpha * it->gauss;
                if (geometry) {
                    // alpha = o * exp(-q/2), q = d^T K d, d = u - mean
                    const double g_q = g_alpha * s.opacity * it->gauss * -0.5;
                    g_mean[it->splat] += g_q * -2.0 * (s.conic * it->offset);
                    g_conic[it->splat] += g_q * (it->offset * it->offset.transpose());
                }

                tail_c = it->alpha * g.color + (1.0 - it->alpha) * tail_c;
                tail_f = it->alpha * g.feature + (1.0 - it->alpha) * tail_f;
                tail_a = it->alpha + (1.0 - it->alpha) * tail_a;
            }
        }
    }

    for (std::size_t k = 0; k < frame.splats.size(); ++k) {
        const Splat& s = frame.splats[k];
        grads.opacity(s.index, 0) += g_opacity[k] * s.opacity * (1.0 - s.opacity);
        if (geometry) {
            // K = V^{-1}  =>  dL/dV = -K dL/dK K
            const Eigen::Matrix2d g_cov = -s.conic * g_conic[k] * s.conic;
            projection_backward(scene.gaussians[s.index], cam, g_mean[k], g_cov,
                                grads.position.row(s.index), grads.log_scale.row(s.index),
                                grads.rotation.row(s.index));
        }
    }
    return grads;
}

IdMap render_id_map(const Scene& scene, const Camera& cam, const Codebook& cb) {
    if (cb.dim() != scene.feature_dim) {
        throw std::invalid_argument("codebook dimension does not match scene feature_dim");
    }
    const Frame frame = build_frame(scene, cam);
    std::vector<std::int32_t> splat_id(frame.splats.size());
    for (std::size_t k = 0; k < frame.splats.size(); ++k) {
        splat_id[k] = cb.quantize(scene.gaussians[frame.splats[k].index].feature);
    }

    IdMap ids(cam.width, cam.height, 1, kBackground);
    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            double best_w = -1.0;
            int best = -1;
            const double trans = composite_pixel(frame, x, y, [&](const Contribution& c) {
                const double w = c.alpha * c.transmittance;
                if (w > best_w) {
                    best_w = w;
                    best = c.splat;
                }
            });
            if (best >= 0 && 1.0 - trans >= 0.5) {
                ids.at(x, y) = splat_id[static_cast<std::size_t>(best)];
            }
        }
    }
    return ids;
}

}  // namespace instgs
