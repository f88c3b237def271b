#pragma once

#include "instgs/camera.hpp"
#include "instgs/image.hpp"
#include "instgs/losses.hpp"
#include "instgs/scene.hpp"
#include "instgs/synthdata.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <vector>

namespace instgs {

// Fixture directory layout:
//   fixture.json        spec, per-view camera + split + relative file paths
//   init_scene.igs      training initialization (gray colors, random features)
//   gt_scene.igs        GT colors, features = codewords of the GT labels
//   gt_labels.json      per-Gaussian GT labels (evaluation only)
//   images/NNN.png      rendered GT color image per view
//   gt/NNN.png          GT instance map, palette-colored
//   masks/NNN.json      per-view MaskSet, run-length encoded

inline constexpr const char* kFixtureFormat = "instgs-fixture-1";

/// Every 4th camera (index % 4 == 3) is held out for evaluation.
[[nodiscard]] inline bool is_heldout_view(std::size_t index) { return index % 4 == 3; }

/// {"width", "height", "masks": [{"index": k, "rle": [start, length, ...]}]}
/// Runs index the row-major flattened image; local indices start at 1.
[[nodiscard]] nlohmann::json masks_to_json(const MaskSet& masks);
[[nodiscard]] MaskSet masks_from_json(const nlohmann::json& j);

void write_fixture(const GroundTruthScene& gts, const SceneSpec& spec,
                   const std::filesystem::path& dir, std::uint64_t permutation_seed);

/// What the trainer may see: cameras, images and per-frame masks of the
/// training split. Never reads GT labels or GT instance maps.
struct TrainingView {
    std::size_t index = 0;
    Camera camera;
    ColorImage image;
    MaskSet masks;
};

[[nodiscard]] std::vector<TrainingView> load_training_views(const std::filesystem::path& dir);
[[nodiscard]] Scene load_initial_scene(const std::filesystem::path& dir);

/// Held-out cameras with their GT instance maps plus the per-Gaussian labels.
struct EvalData {
    std::vector<std::size_t> indices;
    std::vector<Camera> cameras;
    std::vector<IdMap> gt_maps;
    std::vector<std::int32_t> gt_labels;
};

[[nodiscard]] EvalData load_eval_data(const std::filesystem::path& dir);

/// All fixture cameras in view order, as listed in fixture.json.
[[nodiscard]] nlohmann::json load_fixture_views(const std::filesystem::path& dir);

}  // namespace instgs
