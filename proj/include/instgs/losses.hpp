#pragma once

#include "instgs/codebook.hpp"
#include "instgs/image.hpp"
#include "instgs/scene.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <vector>

namespace instgs {

/// Per-frame instance masks. Mask i (0-based here, local index i + 1 in
/// fixtures) holds the flat pixel indices it covers. Masks are pairwise
/// disjoint and non-empty; indices carry no meaning across frames.
class MaskSet {
public:
    MaskSet() = default;

    /// Takes disjoint, non-empty pixel lists. Throws std::invalid_argument otherwise.
    MaskSet(int width, int height, std::vector<std::vector<std::int32_t>> masks);

    /// Builds a set from binary H x W masks that may overlap. A pixel claimed
    /// by several masks stays only in the smallest of them (ties: lower index).
    /// Masks that end up empty after resolution are dropped; masks that are
    /// empty on input are rejected.
    static MaskSet from_binary(int width, int height,
                               const std::vector<std::vector<std::uint8_t>>& binary);

    [[nodiscard]] int width() const { return width_; }
    [[nodiscard]] int height() const { return height_; }
    [[nodiscard]] std::size_t size() const { return masks_.size(); }
    [[nodiscard]] const std::vector<std::int32_t>& mask(std::size_t i) const { return masks_[i]; }
    [[nodiscard]] const std::vector<std::vector<std::int32_t>>& masks() const { return masks_; }

    /// H x W map: mask index (0-based) per pixel, -1 outside every mask.
    [[nodiscard]] IdMap label_map() const;

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<std::vector<std::int32_t>> masks_;
};

struct ImageLoss {
    double value = 0.0;
    Image<double> grad;  // same shape as the input image
};

/// Intra-mask variance around each prototype plus inverse squared distance
/// between prototypes. The inter term is 0 for fewer than two masks and each
/// squared distance is floored at kInterMaskEpsilon.
inline constexpr double kInterMaskEpsilon = 1e-8;
[[nodiscard]] ImageLoss contrastive_loss(const FeatureImage& features, const MaskSet& masks);

/// Voxel grid with edge `voxel_size` whose origin is moved by `shift`.
struct VoxelPartition {
    double voxel_size = 0.5;
    Eigen::Vector3d shift = Eigen::Vector3d::Zero();

    [[nodiscard]] std::array<std::int64_t, 3> key(const Eigen::Vector3d& p) const;
};

struct FeatureLoss {
    double value = 0.0;
    Eigen::MatrixXd grad;  // N x d, w.r.t. Gaussian features
};

/// Mean over occupied voxels of the mean squared deviation of member
/// features from the voxel mean.
[[nodiscard]] FeatureLoss voxel_consistency_loss(const Scene& scene, const VoxelPartition& part);

struct PseudoTarget {
    FeatureImage target;              // codewords on valid pixels, 0 elsewhere
    std::vector<std::uint8_t> valid;  // Omega: union of mask pixels
    std::vector<std::int32_t> winners;  // winning id per mask
};

/// Majority vote of quantized ids inside each mask (ties: lowest id); every
/// pixel of the mask takes the winner's codeword.
[[nodiscard]] PseudoTarget pseudo_labels(const FeatureImage& features, const MaskSet& masks,
                                         const Codebook& cb);

/// Mean squared distance to the detached pseudo target over valid pixels.
/// Zero (with zero gradient) when no pixel is valid.
[[nodiscard]] ImageLoss pseudo_loss(const FeatureImage& features, const PseudoTarget& pseudo);

/// Mean absolute error over all pixels and channels.
[[nodiscard]] ImageLoss photometric_loss(const ColorImage& rendered, const ColorImage& target);

}  // namespace instgs
