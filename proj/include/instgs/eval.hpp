#pragma once

#include "instgs/codebook.hpp"
#include "instgs/fixture.hpp"
#include "instgs/image.hpp"
#include "instgs/scene.hpp"

#include <Eigen/Core>
#include <json.hpp>

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace instgs {

/// Pixel co-occurrence of GT labels and predicted IDs, summed over views.
/// BACKGROUND is excluded from both label sets and from all areas.
struct OverlapCounts {
    std::vector<std::int32_t> gt_labels;  // sorted
    std::vector<std::int32_t> pred_ids;   // sorted
    Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic> intersection;  // gt × pred
    std::vector<std::int64_t> gt_area;
    std::vector<std::int64_t> pred_area;

    [[nodiscard]] double iou(std::size_t g, std::size_t p) const;
};

/// Throws std::invalid_argument when the view lists or map shapes disagree.
[[nodiscard]] OverlapCounts count_overlaps(const std::vector<IdMap>& pred, const std::vector<IdMap>& gt);

/// Minimum-cost assignment for a rows ≤ cols cost matrix; result[r] is the
/// column given to row r.
[[nodiscard]] std::vector<int> hungarian_min_cost(const Eigen::MatrixXd& cost);

struct Matching {
    std::map<std::int32_t, std::optional<std::int32_t>> gt_to_pred;
    double total_iou = 0.0;
};

/// Maximum total-IoU one-to-one matching over all views. Pairs with zero
/// overlap are left unmatched.
[[nodiscard]] Matching match_ids(const std::vector<IdMap>& pred, const std::vector<IdMap>& gt);

struct LabelScore {
    std::int32_t label = 0;
    std::optional<std::int32_t> matched;
    double iou = 0.0;
    double accuracy = 0.0;
};

struct SegmentationScores {
    double miou = 0.0;
    double macc = 0.0;
    std::vector<LabelScore> per_label;
};

/// Unweighted means over the GT labels present in `gt` (0 when there are none).
[[nodiscard]] SegmentationScores compute_miou_macc(const std::vector<IdMap>& pred,
                                                   const std::vector<IdMap>& gt, const Matching& matching);

/// Throws std::invalid_argument when label count and scene size differ.
[[nodiscard]] double purity_3d(const Scene& scene, const std::vector<std::int32_t>& gt_label,
                               const Codebook& cb);

/// Per GT instance: share of its pixels carrying its most frequent
/// non-background predicted ID (ties to the lower ID), averaged over
/// instances. Throws std::invalid_argument for fewer than two views.
[[nodiscard]] double cross_view_consistency(const std::vector<IdMap>& pred, const std::vector<IdMap>& gt);

struct EvalReport {
    double miou = 0.0;
    double macc = 0.0;
    std::vector<LabelScore> per_instance;
    double purity_3d = 0.0;
    double consistency = 0.0;
    std::size_t views_evaluated = 0;

    [[nodiscard]] nlohmann::json to_json() const;
    [[nodiscard]] std::string table() const;
};

/// Renders ID maps at the held-out cameras and scores them. The scene's
/// feature dimension must match the fixture.
[[nodiscard]] EvalReport evaluate(const Scene& scene, const EvalData& data);

}  // namespace instgs
