#pragma once

#include "instgs/codebook.hpp"
#include "instgs/image.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

namespace instgs {

using Rgb8Image = Image<std::uint8_t>;  // H x W x 3

class ImageIoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// 8-bit RGB PNG codec. Encoding settings are fixed, so equal pixels give
/// byte-identical files.
[[nodiscard]] std::string encode_png(const Rgb8Image& img);
[[nodiscard]] Rgb8Image decode_png(const std::string& bytes);

void write_png(const Rgb8Image& img, const std::filesystem::path& path);
[[nodiscard]] Rgb8Image read_png(const std::filesystem::path& path);

/// [0, 1] doubles to 8-bit with clamping and round-to-nearest.
[[nodiscard]] Rgb8Image to_rgb8(const ColorImage& img);
[[nodiscard]] ColorImage from_rgb8(const Rgb8Image& img);

/// Palette coloring of an id map (kBackground -> black) and its inverse.
/// palette_to_ids throws ImageIoError on a color outside the palette.
[[nodiscard]] Rgb8Image colorize_ids(const IdMap& ids, const InstancePalette& palette);
[[nodiscard]] IdMap palette_to_ids(const Rgb8Image& img, const InstancePalette& palette);

void write_file(const std::filesystem::path& path, const std::string& bytes);
[[nodiscard]] std::string read_file(const std::filesystem::path& path);

}  // namespace instgs
