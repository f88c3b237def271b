#include "instgs/losses.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

namespace instgs {

MaskSet::MaskSet(int width, int height, std::vector<std::vector<std::int32_t>> masks)
    : width_(width), height_(height), masks_(std::move(masks)) {
    if (width < 0 || height < 0) throw std::invalid_argument("mask set dimensions negative");
    const std::int64_t pixels = std::int64_t{width} * height;
    std::vector<std::uint8_t> seen(static_cast<std::size_t>(pixels), 0);
    for (std::size_t i = 0; i < masks_.size(); ++i) {
        if (masks_[i].empty()) {
            throw std::invalid_argument("mask " + std::to_string(i + 1) + " is empty");
        }
        for (std::int32_t p : masks_[i]) {
            if (p < 0 || p >= pixels) {
                throw std::invalid_argument("mask " + std::to_string(i + 1) + " pixel out of range");
            }
            if (seen[p]) throw std::invalid_argument("masks overlap at pixel " + std::to_string(p));
            seen[p] = 1;
        }
    }
}

MaskSet MaskSet::from_binary(int width, int height,
                             const std::vector<std::vector<std::uint8_t>>& binary) {
    const auto pixels = static_cast<std::size_t>(width) * height;
    std::vector<std::size_t> area(binary.size(), 0);
    for (std::size_t i = 0; i < binary.size(); ++i) {
        if (binary[i].size() != pixels) throw std::invalid_argument("binary mask size mismatch");
        area[i] = static_cast<std::size_t>(std::count_if(binary[i].begin(), binary[i].end(),
                                                         [](std::uint8_t v) { return v != 0; }));
        if (area[i] == 0) throw std::invalid_argument("mask " + std::to_string(i + 1) + " is empty");
    }
    std::vector<std::vector<std::int32_t>> lists(binary.size());
    for (std::size_t p = 0; p < pixels; ++p) {
        std::size_t owner = binary.size();
        for (std::size_t i = 0; i < binary.size(); ++i) {
            if (binary[i][p] && (owner == binary.size() || area[i] < area[owner])) owner = i;
        }
        if (owner != binary.size()) lists[owner].push_back(static_cast<std::int32_t>(p));
    }
    std::erase_if(lists, [](const auto& l) { return l.empty(); });
    return MaskSet(width, height, std::move(lists));
}

IdMap MaskSet::label_map() const {
    IdMap map(width_, height_, 1, -1);
    for (std::size_t i = 0; i < masks_.size(); ++i)
        for (std::int32_t p : masks_[i]) map.data[p] = static_cast<std::int32_t>(i);
    return map;
}

namespace {

void check_mask_shape(const FeatureImage& f, const MaskSet& masks) {
    if (f.width != masks.width() || f.height != masks.height()) {
        throw std::invalid_argument("mask set shape does not match feature image");
    }
}

}  // namespace

ImageLoss contrastive_loss(const FeatureImage& features, const MaskSet& masks) {
    check_mask_shape(features, masks);
    const std::size_t n = masks.size();
    if (n == 0) throw std::invalid_argument("contrastive loss needs at least one mask");
    const int d = features.channels;

    ImageLoss out{0.0, Image<double>(features.width, features.height, d)};

    std::vector<Eigen::VectorXd> proto(n, Eigen::VectorXd::Zero(d));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::int32_t p : masks.mask(i))
            proto[i] += Eigen::Map<const Eigen::VectorXd>(features.pixel(p).data(), d);
        proto[i] /= static_cast<double>(masks.mask(i).size());
    }

    // Intra: the prototype term of the gradient cancels because sum(f_u - mean) = 0.
    double intra = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& m = masks.mask(i);
        const double scale = 1.0 / (static_cast<double>(n) * static_cast<double>(m.size()));
        double sum = 0.0;
        for (std::int32_t p : m) {
            const Eigen::VectorXd r =
                Eigen::Map<const Eigen::VectorXd>(features.pixel(p).data(), d) - proto[i];
            sum += r.squaredNorm();
            Eigen::Map<Eigen::VectorXd>(out.grad.pixel(p).data(), d) += 2.0 * scale * r;
        }
        intra += sum / static_cast<double>(m.size());
    }
    intra /= static_cast<double>(n);

    double inter = 0.0;
    if (n >= 2) {
        const double norm = 1.0 / (static_cast<double>(n) * static_cast<double>(n - 1));
        std::vector<Eigen::VectorXd> g_proto(n, Eigen::VectorXd::Zero(d));
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
                const Eigen::VectorXd diff = proto[i] - proto[j];
                const double dist2 = diff.squaredNorm();
                // (i, j) and (j, i) are both in the sum.
                if (dist2 > kInterMaskEpsilon) {
                    inter += 2.0 / dist2;
                    const Eigen::VectorXd g = norm * (-4.0 / (dist2 * dist2)) * diff;
                    g_proto[i] += g;
                    g_proto[j] -= g;
                } else {
                    inter += 2.0 / kInterMaskEpsilon;
                }
            }
        }
        inter *= norm;
        for (std::size_t i = 0; i < n; ++i) {
            const Eigen::VectorXd g = g_proto[i] / static_cast<double>(masks.mask(i).size());
            for (std::int32_t p : masks.mask(i))
                Eigen::Map<Eigen::VectorXd>(out.grad.pixel(p).data(), d) += g;
        }
    }
    out.value = intra + inter;
    return out;
}

std::array<std::int64_t, 3> VoxelPartition::key(const Eigen::Vector3d& p) const {
    std::array<std::int64_t, 3> k{};
    for (int a = 0; a < 3; ++a) {
        k[a] = static_cast<std::int64_t>(std::floor((p[a] - shift[a]) / voxel_size));
    }
    return k;
}

FeatureLoss voxel_consistency_loss(const Scene& scene, const VoxelPartition& part) {
    if (!(part.voxel_size > 0.0)) throw std::invalid_argument("voxel_size must be positive");
    const int d = scene.feature_dim;
    const auto n = static_cast<Eigen::Index>(scene.size());
    FeatureLoss out{0.0, Eigen::MatrixXd::Zero(n, d)};
    if (n == 0) return out;

    std::map<std::array<std::int64_t, 3>, std::vector<Eigen::Index>> voxels;
    for (Eigen::Index i = 0; i < n; ++i) voxels[part.key(scene.gaussians[i].position)].push_back(i);

    const double inv_v = 1.0 / static_cast<double>(voxels.size());
    for (const auto& [key, members] : voxels) {
        Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
        for (Eigen::Index i : members) mean += scene.gaussians[i].feature;
        const double inv_g = 1.0 / static_cast<double>(members.size());
        mean *= inv_g;
        double sum = 0.0;
        for (Eigen::Index i : members) {
            const Eigen::VectorXd r = scene.gaussians[i].feature - mean;
            sum += r.squaredNorm();
            out.grad.row(i) = (2.0 * inv_v * inv_g) * r.transpose();
        }
        out.value += sum * inv_g;
    }
    out.value *= inv_v;
    return out;
}

PseudoTarget pseudo_labels(const FeatureImage& features, const MaskSet& masks, const Codebook& cb) {
    check_mask_shape(features, masks);
    if (features.channels != cb.dim()) {
        throw std::invalid_argument("feature channels do not match codebook dimension");
    }
    const int d = features.channels;
    PseudoTarget out{FeatureImage(features.width, features.height, d),
                     std::vector<std::uint8_t>(features.pixel_count(), 0), {}};
    out.winners.reserve(masks.size());
    for (const auto& m : masks.masks()) {
        std::map<std::int32_t, std::size_t> votes;
        for (std::int32_t p : m) ++votes[cb.quantize(features.pixel(p))];
        // std::map iterates ids in ascending order, so strict > keeps the lowest id on ties.
        std::int32_t winner = votes.begin()->first;
        std::size_t best = 0;
        for (const auto& [id, count] : votes) {
            if (count > best) {
                best = count;
                winner = id;
            }
        }
        out.winners.push_back(winner);
        const Eigen::VectorXd code = cb.codeword(winner);
        for (std::int32_t p : m) {
            Eigen::Map<Eigen::VectorXd>(out.target.pixel(p).data(), d) = code;
            out.valid[p] = 1;
        }
    }
    return out;
}

ImageLoss pseudo_loss(const FeatureImage& features, const PseudoTarget& pseudo) {
    if (!features.same_shape(pseudo.target) || pseudo.valid.size() != features.pixel_count()) {
        throw std::invalid_argument("pseudo target shape does not match feature image");
    }
    const int d = features.channels;
    ImageLoss out{0.0, Image<double>(features.width, features.height, d)};
    const auto omega = static_cast<std::size_t>(std::count(pseudo.valid.begin(), pseudo.valid.end(), 1));
    if (omega == 0) return out;
    const double inv = 1.0 / static_cast<double>(omega);
    for (std::size_t p = 0; p < features.pixel_count(); ++p) {
        if (!pseudo.valid[p]) continue;
        const Eigen::VectorXd r = Eigen::Map<const Eigen::VectorXd>(features.pixel(p).data(), d) -
                                  Eigen::Map<const Eigen::VectorXd>(pseudo.target.pixel(p).data(), d);
        out.value += r.squaredNorm();
        Eigen::Map<Eigen::VectorXd>(out.grad.pixel(p).data(), d) = 2.0 * inv * r;
    }
    out.value *= inv;
    return out;
}

ImageLoss photometric_loss(const ColorImage& rendered, const ColorImage& target) {
    if (!rendered.same_shape(target)) {
        throw std::invalid_argument("photometric loss: image shapes differ");
    }
    ImageLoss out{0.0, Image<double>(rendered.width, rendered.height, rendered.channels)};
    if (rendered.data.empty()) return out;
    const double inv = 1.0 / static_cast<double>(rendered.data.size());
    for (std::size_t i = 0; i < rendered.data.size(); ++i) {
        const double r = rendered.data[i] - target.data[i];
        out.value += std::abs(r);
        out.grad.data[i] = r > 0.0 ? inv : (r < 0.0 ? -inv : 0.0);
    }
    out.value *= inv;
    return out;
}

}  // namespace instgs
