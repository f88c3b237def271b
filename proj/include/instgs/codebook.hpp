#pragma once

#include "instgs/image.hpp"

#include <Eigen/Core>
#include <json.hpp>

#include <array>
#include <cstdint>
#include <optional>
#include <span>

namespace instgs {

/// Static binary codebook {-1, +1}^d with 2^d entries. Nothing is stored:
/// codeword(i)[k] = +1 iff bit k of i is set (bit 0 = feature component 0).
class Codebook {
public:
    explicit Codebook(int dim);

    [[nodiscard]] int dim() const { return dim_; }
    [[nodiscard]] std::int64_t size() const { return std::int64_t{1} << dim_; }

    /// Throws std::domain_error for ids outside [0, 2^d).
    [[nodiscard]] Eigen::VectorXd codeword(std::int64_t id) const;

    /// Nearest codeword to tanh(f) in L2. Because tanh(f) lies in (-1, 1)^d the
    /// argmin decomposes per coordinate; exact zeros resolve to -1, which makes
    /// ties go to the lowest id. Throws std::domain_error on NaN or size mismatch.
    [[nodiscard]] std::int32_t quantize(std::span<const double> f) const;
    [[nodiscard]] std::int32_t quantize(const Eigen::VectorXd& f) const {
        return quantize(std::span<const double>(f.data(), static_cast<std::size_t>(f.size())));
    }

    [[nodiscard]] bool valid_id(std::int64_t id) const { return id >= 0 && id < size(); }

private:
    int dim_;
};

/// Per-pixel quantization; pixels with alpha < 0.5 become kBackground.
[[nodiscard]] IdMap quantize_image(const Codebook& cb, const FeatureImage& features,
                                   const Image<double>& alpha);

using Rgb8 = std::array<std::uint8_t, 3>;

/// Frozen ID <-> 8-bit RGB bijection.
///
/// k = id + 1 (k = 0 is kBackground). Bit j of k is written to channel j % 3
/// at bit position 7 - j / 3, so the first ids get the brightest, most
/// separated colors and BACKGROUND is pure black. All 24 bits are used, so
/// every 8-bit color decodes to some k; colors whose k exceeds 2^d are not
/// in the palette.
class InstancePalette {
public:
    explicit InstancePalette(int dim);

    [[nodiscard]] int dim() const { return dim_; }
    [[nodiscard]] Rgb8 id_to_color(std::int32_t id) const;
    [[nodiscard]] std::optional<std::int32_t> color_to_id(const Rgb8& rgb) const;

    /// [{"id": null, "rgb": [0,0,0]}, {"id": 0, "rgb": [...]}, ...] : 2^d + 1 entries.
    [[nodiscard]] nlohmann::json to_json() const;

private:
    int dim_;
};

}  // namespace instgs
