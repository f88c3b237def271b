#pragma once

#include "instgs/camera.hpp"
#include "instgs/image.hpp"
#include "instgs/losses.hpp"
#include "instgs/scene.hpp"

#include <json.hpp>

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace instgs {

/// Procedural scene plus the camera rig that observes it.
struct SceneSpec {
    int object_count = 8;
    bool ground = true;
    double extent = 3.0;  // object centers lie within this radius (m)
    int gaussians_per_object = 200;
    int ground_resolution = 30;  // ground is a ground_resolution^2 jittered grid
    int feature_dim = 8;
    std::uint64_t seed = 7;

    int views = 24;  // split over two rings
    int width = 96;
    int height = 96;
    double fov_y_deg = 60.0;
    double ring_radius = 7.0;
    double ring_height_low = 2.5;
    double ring_height_high = 4.5;

    /// Throws std::invalid_argument for out-of-range fields.
    void validate() const;
};

[[nodiscard]] nlohmann::json spec_to_json(const SceneSpec& spec);
/// Missing keys keep their defaults; unknown keys are rejected.
[[nodiscard]] SceneSpec spec_from_json(const nlohmann::json& j);

class GenerationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr std::int32_t kGroundLabel = 0;

struct GroundTruthScene {
    Scene scene;                          // GT colors, small random features
    std::vector<std::int32_t> gt_label;   // per Gaussian; 0 = ground, 1..object_count
    std::vector<Camera> cameras;
    std::vector<IdMap> gt_instance_maps;  // per view; kBackground where uncovered
};

/// Deterministic in spec.seed. All stored values are float32-representable,
/// so the scene survives a SceneFile round trip unchanged.
[[nodiscard]] GroundTruthScene generate_scene(const SceneSpec& spec);

/// Copy of `scene` whose features are the codewords of `labels`.
[[nodiscard]] Scene with_label_codewords(const Scene& scene, const std::vector<std::int32_t>& labels);

/// ID map of the scene with label codewords as features; since label ids
/// are < 2^d the map values are the labels themselves.
[[nodiscard]] IdMap rasterize_labels(const Scene& scene, const std::vector<std::int32_t>& labels,
                                     const Camera& cam);

/// Training initialization: GT geometry, uniform gray colors, the generated
/// random features.
[[nodiscard]] Scene training_initialization(const GroundTruthScene& gts);

/// Simulated per-frame segmentation: one mask per instance visible in the
/// view, with local order shuffled by (permutation_seed, view).
[[nodiscard]] MaskSet generate_masks(const GroundTruthScene& gts, std::size_t view,
                                     std::uint64_t permutation_seed);
[[nodiscard]] MaskSet masks_from_instance_map(const IdMap& instances, std::size_t view,
                                              std::uint64_t permutation_seed);

}  // namespace instgs
