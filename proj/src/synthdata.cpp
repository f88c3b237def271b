#include "instgs/synthdata.hpp"

#include "instgs/codebook.hpp"
#include "instgs/rasterizer.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <random>

namespace instgs {

void SceneSpec::validate() const {
    if (object_count < 1) throw std::invalid_argument("object_count must be >= 1");
    if (!(extent > 0.0)) throw std::invalid_argument("extent must be positive");
    if (gaussians_per_object < 1) throw std::invalid_argument("gaussians_per_object must be >= 1");
    if (ground && ground_resolution < 1) throw std::invalid_argument("ground_resolution must be >= 1");
    if (feature_dim < 1 || feature_dim > kMaxFeatureDim) {
        throw std::invalid_argument("feature_dim must be in [1, 16]");
    }
    if ((std::int64_t{1} << feature_dim) <= object_count) {
        throw std::invalid_argument("feature_dim too small to give every instance its own codeword");
    }
    if (views < 1) throw std::invalid_argument("views must be >= 1");
    if (width < 1 || height < 1) throw std::invalid_argument("resolution must be positive");
    if (!(fov_y_deg > 0.0 && fov_y_deg < 180.0)) throw std::invalid_argument("fov_y_deg out of range");
    if (!(ring_radius > extent)) throw std::invalid_argument("ring_radius must exceed extent");
}

nlohmann::json spec_to_json(const SceneSpec& s) {
    return {
        {"object_count", s.object_count},
        {"ground", s.ground},
        {"extent", s.extent},
        {"gaussians_per_object", s.gaussians_per_object},
        {"ground_resolution", s.ground_resolution},
        {"feature_dim", s.feature_dim},
        {"seed", s.seed},
        {"views", s.views},
        {"width", s.width},
        {"height", s.height},
        {"fov_y_deg", s.fov_y_deg},
        {"ring_radius", s.ring_radius},
        {"ring_height_low", s.ring_height_low},
        {"ring_height_high", s.ring_height_high},
    };
}

SceneSpec spec_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw std::invalid_argument("scene spec must be a JSON object");
    SceneSpec s;
    const nlohmann::json defaults = spec_to_json(s);
    for (const auto& [key, value] : j.items()) {
        if (!defaults.contains(key)) throw std::invalid_argument("unknown scene spec key: " + key);
    }
    const auto read = [&](const char* key, auto& field) {
        if (!j.contains(key)) return;
        try {
            j.at(key).get_to(field);
        } catch (const nlohmann::json::exception&) {
            throw std::invalid_argument(std::string("scene spec key has the wrong type: ") + key);
        }
    };
    read("object_count", s.object_count);
    read("ground", s.ground);
    read("extent", s.extent);
    read("gaussians_per_object", s.gaussians_per_object);
    read("ground_resolution", s.ground_resolution);
    read("feature_dim", s.feature_dim);
    read("seed", s.seed);
    read("views", s.views);
    read("width", s.width);
    read("height", s.height);
    read("fov_y_deg", s.fov_y_deg);
    read("ring_radius", s.ring_radius);
    read("ring_height_low", s.ring_height_low);
    read("ring_height_high", s.ring_height_high);
    s.validate();
    return s;
}

namespace {

using Rng = std::mt19937_64;

struct SurfaceSample {
    Eigen::Vector3d point;
    Eigen::Vector3d normal;
};

Eigen::Vector3d hsv_to_rgb(double h, double s, double v) {
    const double c = v * s;
    const double hp = std::fmod(h * 6.0, 6.0);
    const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    Eigen::Vector3d rgb;
    if (hp < 1) rgb = {c, x, 0};
    else if (hp < 2) rgb = {x, c, 0};
    else if (hp < 3) rgb = {0, c, x};
    else if (hp < 4) rgb = {0, x, c};
    else if (hp < 5) rgb = {x, 0, c};
    else rgb = {c, 0, x};
    return rgb.array() + (v - c);
}

Eigen::Vector3d random_unit(Rng& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::Vector3d v;
    do {
        v = {n(rng), n(rng), n(rng)};
    } while (v.norm() < 1e-9);
    return v.normalized();
}

/// Quaternion (w, x, y, z) whose local z axis is `normal`, spun by `spin` about it.
Eigen::Vector4d disc_orientation(const Eigen::Vector3d& normal, double spin) {
    const Eigen::Vector3d helper =
        std::abs(normal.z()) < 0.9 ? Eigen::Vector3d::UnitZ() : Eigen::Vector3d::UnitX();
    Eigen::Vector3d t1 = helper.cross(normal).normalized();
    Eigen::Vector3d t2 = normal.cross(t1);
    const double c = std::cos(spin), s = std::sin(spin);
    const Eigen::Vector3d a = c * t1 + s * t2;
    const Eigen::Vector3d b = -s * t1 + c * t2;
    Eigen::Matrix3d r;
    r.col(0) = a;
    r.col(1) = b;
    r.col(2) = normal;
    const Eigen::Quaterniond q(r);
    return Eigen::Vector4d(q.w(), q.x(), q.y(), q.z()).normalized();
}

struct ObjectPlacement {
    Eigen::Vector2d center;
    double radius = 0.0;
    bool box = false;
};

std::vector<ObjectPlacement> place_objects(const SceneSpec& spec, Rng& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    constexpr double kMinRadius = 0.35, kMaxRadius = 0.6, kGap = 0.3;
    constexpr int kAttempts = 2000;
    std::vector<ObjectPlacement> placed;
    for (int i = 0; i < spec.object_count; ++i) {
        bool ok = false;
        for (int attempt = 0; attempt < kAttempts && !ok; ++attempt) {
            ObjectPlacement o;
            o.radius = kMinRadius + (kMaxRadius - kMinRadius) * unit(rng);
            const double rad = spec.extent * std::sqrt(unit(rng));
            const double ang = 2.0 * std::numbers::pi * unit(rng);
            o.center = {rad * std::cos(ang), rad * std::sin(ang)};
            o.box = unit(rng) < 0.5;
            ok = std::all_of(placed.begin(), placed.end(), [&](const ObjectPlacement& p) {
                return (p.center - o.center).norm() >= p.radius + o.radius + kGap;
            });
            if (ok) placed.push_back(o);
        }
        if (!ok) {
            throw GenerationError("infeasible spacing: cannot place " +
                                  std::to_string(spec.object_count) + " objects within extent " +
                                  std::to_string(spec.extent));
        }
    }
    return placed;
}

std::vector<SurfaceSample> sample_sphere(const ObjectPlacement& o, int count, Rng& rng,
                                         double& area) {
    const Eigen::Vector3d c(o.center.x(), o.center.y(), o.radius + 0.02);
    area = 4.0 * std::numbers::pi * o.radius * o.radius;
    std::vector<SurfaceSample> out;
    for (int i = 0; i < count; ++i) {
        const Eigen::Vector3d n = random_unit(rng);
        out.push_back({c + o.radius * n, n});
    }
    return out;
}

std::vector<SurfaceSample> sample_box(const ObjectPlacement& o, int count, Rng& rng, double& area) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const Eigen::Vector3d half(o.radius * (0.6 + 0.3 * unit(rng)), o.radius * (0.6 + 0.3 * unit(rng)),
                               o.radius * (0.6 + 0.4 * unit(rng)));
    const double yaw = 2.0 * std::numbers::pi * unit(rng);
    const Eigen::Matrix3d rot = Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()).toRotationMatrix();
    const Eigen::Vector3d c(o.center.x(), o.center.y(), half.z() + 0.02);

    // Faces as (axis, sign) with area 4 * product of the other half extents.
    std::array<double, 6> face_area{};
    for (int f = 0; f < 6; ++f) {
        const int axis = f / 2;
        face_area[f] = 4.0 * half[(axis + 1) % 3] * half[(axis + 2) % 3];
    }
    area = 0.0;
    for (double a : face_area) area += a;
    std::discrete_distribution<int> pick_face(face_area.begin(), face_area.end());

    std::vector<SurfaceSample> out;
    for (int i = 0; i < count; ++i) {
        const int f = pick_face(rng);
        const int axis = f / 2;
        const double sign = (f % 2 == 0) ? 1.0 : -1.0;
        Eigen::Vector3d local;
        for (int a = 0; a < 3; ++a) local[a] = half[a] * (2.0 * unit(rng) - 1.0);
        local[axis] = sign * half[axis];
        Eigen::Vector3d n = Eigen::Vector3d::Zero();
        n[axis] = sign;
        out.push_back({c + rot * local, rot * n});
    }
    return out;
}

Eigen::Vector3d jitter_color(const Eigen::Vector3d& base, Rng& rng) {
    std::uniform_real_distribution<double> j(-0.03, 0.03);
    Eigen::Vector3d c = base;
    for (int k = 0; k < 3; ++k) c[k] = std::clamp(c[k] + j(rng), 0.0, 1.0);
    return c;
}

Gaussian make_gaussian(const SurfaceSample& s, double tangent_sigma, const Eigen::Vector3d& color,
                       int feature_dim, Rng& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_real_distribution<double> feat(-0.01, 0.01);
    std::normal_distribution<double> jitter(0.0, 0.01);
    Gaussian g;
    g.position = s.point + jitter(rng) * s.normal;
    g.set_scale({tangent_sigma, tangent_sigma, 0.25 * tangent_sigma});
    g.rotation = disc_orientation(s.normal, 2.0 * std::numbers::pi * unit(rng));
    g.set_opacity(0.95);
    g.color = jitter_color(color, rng);
    g.feature.resize(feature_dim);
    for (int k = 0; k < feature_dim; ++k) g.feature[k] = feat(rng);
    return g;
}

}  // namespace

Scene with_label_codewords(const Scene& scene, const std::vector<std::int32_t>& labels) {
    if (labels.size() != scene.size()) throw std::invalid_argument("label count mismatch");
    const Codebook cb(scene.feature_dim);
    Scene out = scene;
    for (std::size_t i = 0; i < labels.size(); ++i) out.gaussians[i].feature = cb.codeword(labels[i]);
    return out;
}

IdMap rasterize_labels(const Scene& scene, const std::vector<std::int32_t>& labels,
                       const Camera& cam) {
    return render_id_map(with_label_codewords(scene, labels), cam, Codebook(scene.feature_dim));
}

GroundTruthScene generate_scene(const SceneSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    GroundTruthScene gts;
    gts.scene.feature_dim = spec.feature_dim;
    gts.scene.background = Eigen::Vector3d::Zero();

    const std::vector<ObjectPlacement> objects = place_objects(spec, rng);

    // Evenly spaced hues, randomly rotated, give distinct object colors.
    const double hue0 = unit(rng);
    for (int i = 0; i < spec.object_count; ++i) {
        const ObjectPlacement& o = objects[i];
        double area = 0.0;
        const auto samples = o.box ? sample_box(o, spec.gaussians_per_object, rng, area)
                                   : sample_sphere(o, spec.gaussians_per_object, rng, area);
        const double sigma = 0.6 * std::sqrt(area / spec.gaussians_per_object);
        const Eigen::Vector3d base =
            hsv_to_rgb(std::fmod(hue0 + static_cast<double>(i) / spec.object_count, 1.0), 0.7, 0.9);
        for (const auto& s : samples) {
            gts.scene.gaussians.push_back(make_gaussian(s, sigma, base, spec.feature_dim, rng));
            gts.gt_label.push_back(i + 1);
        }
    }

    if (spec.ground) {
        const double half = spec.extent + 2.0;
        const int res = spec.ground_resolution;
        const double cell = 2.0 * half / res;
        const Eigen::Vector3d ground_color(0.45, 0.43, 0.40);
        for (int gy = 0; gy < res; ++gy) {
            for (int gx = 0; gx < res; ++gx) {
                SurfaceSample s;
                s.point = {-half + cell * (gx + unit(rng)), -half + cell * (gy + unit(rng)), 0.0};
                s.normal = Eigen::Vector3d::UnitZ();
                gts.scene.gaussians.push_back(
                    make_gaussian(s, 0.7 * cell, ground_color, spec.feature_dim, rng));
                gts.gt_label.push_back(kGroundLabel);
            }
        }
    }

    // Snap to float32 so files and memory agree exactly.
    gts.scene = decode_scene(encode_scene(gts.scene));

    const int per_ring = (spec.views + 1) / 2;
    const Eigen::Vector3d target(0.0, 0.0, 0.4);
    for (int v = 0; v < spec.views; ++v) {
        const int ring = v % 2;
        const int k = v / 2;
        const double az = 2.0 * std::numbers::pi * (k + 0.5 * ring) / per_ring;
        const double h = ring == 0 ? spec.ring_height_low : spec.ring_height_high;
        const Eigen::Vector3d eye(spec.ring_radius * std::cos(az), spec.ring_radius * std::sin(az), h);
        gts.cameras.push_back(Camera::look_at(eye, target, Eigen::Vector3d::UnitZ(), spec.width,
                                              spec.height, spec.fov_y_deg));
    }
    for (const Camera& cam : gts.cameras) {
        gts.gt_instance_maps.push_back(rasterize_labels(gts.scene, gts.gt_label, cam));
    }
    return gts;
}

Scene training_initialization(const GroundTruthScene& gts) {
    Scene s = gts.scene;
    for (Gaussian& g : s.gaussians) g.color = Eigen::Vector3d::Constant(0.5);
    return s;
}

MaskSet masks_from_instance_map(const IdMap& instances, std::size_t view,
                                std::uint64_t permutation_seed) {
    std::map<std::int32_t, std::vector<std::int32_t>> regions;
    for (std::size_t p = 0; p < instances.pixel_count(); ++p) {
        if (instances.data[p] != kBackground) {
            regions[instances.data[p]].push_back(static_cast<std::int32_t>(p));
        }
    }
    std::vector<std::vector<std::int32_t>> masks;
    masks.reserve(regions.size());
    for (auto& [label, pixels] : regions) masks.push_back(std::move(pixels));

    std::seed_seq seq{static_cast<std::uint32_t>(permutation_seed),
                      static_cast<std::uint32_t>(permutation_seed >> 32),
                      static_cast<std::uint32_t>(view), 0x6d61736bu};
    Rng rng(seq);
    std::shuffle(masks.begin(), masks.end(), rng);
    return MaskSet(instances.width, instances.height, std::move(masks));
}

MaskSet generate_masks(const GroundTruthScene& gts, std::size_t view, std::uint64_t permutation_seed) {
    if (view >= gts.gt_instance_maps.size()) throw std::out_of_range("view index out of range");
    return masks_from_instance_map(gts.gt_instance_maps[view], view, permutation_seed);
}

}  // namespace instgs
