#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace instgs {

/// Sentinel used in ID maps and ground-truth instance maps for uncovered pixels.
inline constexpr std::int32_t kBackground = -1;

/// Dense row-major H x W x C buffer. Pixel (x, y) channel c lives at
/// ((y * width + x) * channels + c).
template <typename T>
struct Image {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<T> data;

    Image() = default;
    Image(int w, int h, int c, T fill = T{})
        : width(w), height(h), channels(c),
          data(static_cast<std::size_t>(w) * h * c, fill) {
        if (w < 0 || h < 0 || c < 0) {
            throw std::invalid_argument("image dimensions must be non-negative");
        }
    }

    [[nodiscard]] bool empty() const { return data.empty(); }
    [[nodiscard]] std::size_t pixel_count() const {
        return static_cast<std::size_t>(width) * height;
    }
    [[nodiscard]] bool same_shape(const Image& o) const {
        return width == o.width && height == o.height && channels == o.channels;
    }

    T& at(int x, int y, int c = 0) {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    const T& at(int x, int y, int c = 0) const {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }

    std::span<T> pixel(std::size_t flat) {
        return {data.data() + flat * channels, static_cast<std::size_t>(channels)};
    }
    std::span<const T> pixel(std::size_t flat) const {
        return {data.data() + flat * channels, static_cast<std::size_t>(channels)};
    }

    bool operator==(const Image&) const = default;
};

using FeatureImage = Image<double>;
using ColorImage = Image<double>;

/// Single-channel integer map; used for predicted ID maps and GT instance maps.
using IdMap = Image<std::int32_t>;

}  // namespace instgs
