#include "instgs/codebook.hpp"

#include "instgs/scene.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace instgs {

Codebook::Codebook(int dim) : dim_(dim) {
    if (dim <= 0 || dim > kMaxFeatureDim) {
        throw std::invalid_argument("codebook dimension must be in [1, 16], got " +
                                    std::to_string(dim));
    }
}

Eigen::VectorXd Codebook::codeword(std::int64_t id) const {
    if (!valid_id(id)) throw std::domain_error("codebook id out of range: " + std::to_string(id));
    Eigen::VectorXd c(dim_);
    for (int k = 0; k < dim_; ++k) c[k] = ((id >> k) & 1) ? 1.0 : -1.0;
    return c;
}

std::int32_t Codebook::quantize(std::span<const double> f) const {
    if (f.size() != static_cast<std::size_t>(dim_)) {
        throw std::domain_error("feature size does not match codebook dimension");
    }
    std::int32_t id = 0;
    for (int k = 0; k < dim_; ++k) {
        if (std::isnan(f[k])) throw std::domain_error("NaN in feature vector");
        // |tanh(f) - 1|^2 < |tanh(f) + 1|^2  <=>  tanh(f) > 0
        if (std::tanh(f[k]) > 0.0) id |= (1 << k);
    }
    return id;
}

IdMap quantize_image(const Codebook& cb, const FeatureImage& features, const Image<double>& alpha) {
    if (features.channels != cb.dim()) {
        throw std::invalid_argument("feature image channels do not match codebook dimension");
    }
    if (alpha.width != features.width || alpha.height != features.height || alpha.channels != 1) {
        throw std::invalid_argument("alpha shape does not match feature image");
    }
    IdMap ids(features.width, features.height, 1, kBackground);
    for (std::size_t p = 0; p < features.pixel_count(); ++p) {
        if (alpha.data[p] >= 0.5) ids.data[p] = cb.quantize(features.pixel(p));
    }
    return ids;
}

InstancePalette::InstancePalette(int dim) : dim_(dim) {
    if (dim <= 0 || dim > kMaxFeatureDim) {
        throw std::invalid_argument("palette dimension must be in [1, 16]");
    }
}

Rgb8 InstancePalette::id_to_color(std::int32_t id) const {
    if (id != kBackground && (id < 0 || id >= (1 << dim_))) {
        throw std::domain_error("palette id out of range: " + std::to_string(id));
    }
    const std::uint32_t k = static_cast<std::uint32_t>(id + 1);
    Rgb8 rgb{0, 0, 0};
    for (int j = 0; j < 24; ++j) {
        if ((k >> j) & 1u) rgb[j % 3] |= static_cast<std::uint8_t>(1u << (7 - j / 3));
    }
    return rgb;
}

std::optional<std::int32_t> InstancePalette::color_to_id(const Rgb8& rgb) const {
    std::uint32_t k = 0;
    for (int j = 0; j < 24; ++j) {
        if ((rgb[j % 3] >> (7 - j / 3)) & 1u) k |= (1u << j);
    }
    if (k > (1u << dim_)) return std::nullopt;
    return static_cast<std::int32_t>(k) - 1;
}

nlohmann::json InstancePalette::to_json() const {
    nlohmann::json entries = nlohmann::json::array();
    const auto entry = [&](std::int32_t id) {
        const Rgb8 c = id_to_color(id);
        nlohmann::json e;
        e["id"] = id == kBackground ? nlohmann::json(nullptr) : nlohmann::json(id);
        e["rgb"] = {c[0], c[1], c[2]};
        return e;
    };
    entries.push_back(entry(kBackground));
    for (std::int32_t id = 0; id < (1 << dim_); ++id) entries.push_back(entry(id));
    return entries;
}

}  // namespace instgs
