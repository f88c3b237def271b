#include "instgs/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace instgs {

namespace {

struct ReadCursor {
    const std::string* bytes;
    std::size_t offset;
};

// libpng reports errors by longjmp; the message is parked here until the
// setjmp site turns it into an exception.
thread_local char g_png_message[256];

[[noreturn]] void png_error_fn(png_structp png, png_const_charp msg) {
    std::snprintf(g_png_message, sizeof(g_png_message), "%s", msg);
    png_longjmp(png, 1);
}

void png_warning_fn(png_structp, png_const_charp) {}

void write_to_string(png_structp png, png_bytep data, png_size_t length) {
    auto* out = static_cast<std::string*>(png_get_io_ptr(png));
    out->append(reinterpret_cast<const char*>(data), length);
}

void flush_noop(png_structp) {}

void read_from_string(png_structp png, png_bytep data, png_size_t length) {
    auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
    if (cur->offset + length > cur->bytes->size()) png_error(png, "truncated data");
    std::memcpy(data, cur->bytes->data() + cur->offset, length);
    cur->offset += length;
}

}  // namespace

std::string encode_png(const Rgb8Image& img) {
    if (img.channels != 3 || img.width <= 0 || img.height <= 0) {
        throw ImageIoError("encode_png expects a non-empty RGB image");
    }
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn,
                                              png_warning_fn);
    if (!png) throw ImageIoError("png: cannot create write struct");
    png_infop info = png_create_info_struct(png);
    std::string out;
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw ImageIoError("png: cannot create info struct");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw ImageIoError(std::string("png: ") + g_png_message);
    }
    {
        png_set_write_fn(png, &out, write_to_string, flush_noop);
        png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
                     static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_RGB,
                     PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_set_compression_level(png, 6);
        png_set_filter(png, PNG_FILTER_TYPE_BASE, PNG_FILTER_NONE);
        png_write_info(png, info);
        for (int y = 0; y < img.height; ++y) {
            auto row = const_cast<png_bytep>(img.data.data() + static_cast<std::size_t>(y) * img.width * 3);
            png_write_row(png, row);
        }
        png_write_end(png, nullptr);
    }
    png_destroy_write_struct(&png, &info);
    return out;
}

Rgb8Image decode_png(const std::string& bytes) {
    if (bytes.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) != 0) {
        throw ImageIoError("not a PNG file");
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn,
                                             png_warning_fn);
    if (!png) throw ImageIoError("png: cannot create read struct");
    png_infop info = png_create_info_struct(png);
    ReadCursor cursor{&bytes, 0};
    Rgb8Image img;
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw ImageIoError("png: cannot create info struct");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ImageIoError(std::string("png: ") + g_png_message);
    }
    png_uint_32 width = 0;
    png_uint_32 height = 0;
    {
        png_set_read_fn(png, &cursor, read_from_string);
        png_read_info(png, info);
        width = png_get_image_width(png, info);
        height = png_get_image_height(png, info);
        const auto color_type = png_get_color_type(png, info);
        const auto depth = png_get_bit_depth(png, info);
        if (depth == 16) png_set_strip_16(png);
        if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
        if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA) {
            if (depth < 8) png_set_expand_gray_1_2_4_to_8(png);
            png_set_gray_to_rgb(png);
        }
        if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
        png_read_update_info(png, info);
        if (png_get_rowbytes(png, info) != static_cast<png_size_t>(width) * 3) {
            png_error(png, "unsupported pixel layout");
        }
    }
    img = Rgb8Image(static_cast<int>(width), static_cast<int>(height), 3);
    for (png_uint_32 y = 0; y < height; ++y) {
        png_read_row(png, img.data.data() + static_cast<std::size_t>(y) * width * 3, nullptr);
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ImageIoError("cannot open " + path.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ImageIoError("write failed: " + path.string());
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ImageIoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_png(const Rgb8Image& img, const std::filesystem::path& path) {
    write_file(path, encode_png(img));
}

Rgb8Image read_png(const std::filesystem::path& path) {
    try {
        return decode_png(read_file(path));
    } catch (const ImageIoError& e) {
        throw ImageIoError(path.string() + ": " + e.what());
    }
}

Rgb8Image to_rgb8(const ColorImage& img) {
    if (img.channels != 3) throw ImageIoError("to_rgb8 expects 3 channels");
    Rgb8Image out(img.width, img.height, 3);
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        const double v = std::clamp(img.data[i], 0.0, 1.0);
        out.data[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
    return out;
}

ColorImage from_rgb8(const Rgb8Image& img) {
    ColorImage out(img.width, img.height, img.channels);
    for (std::size_t i = 0; i < img.data.size(); ++i) out.data[i] = img.data[i] / 255.0;
    return out;
}

Rgb8Image colorize_ids(const IdMap& ids, const InstancePalette& palette) {
    Rgb8Image out(ids.width, ids.height, 3);
    for (std::size_t p = 0; p < ids.pixel_count(); ++p) {
        const Rgb8 c = palette.id_to_color(ids.data[p]);
        std::copy(c.begin(), c.end(), out.data.begin() + static_cast<std::ptrdiff_t>(p * 3));
    }
    return out;
}

IdMap palette_to_ids(const Rgb8Image& img, const InstancePalette& palette) {
    if (img.channels != 3) throw ImageIoError("palette_to_ids expects an RGB image");
    IdMap ids(img.width, img.height, 1);
    for (std::size_t p = 0; p < ids.pixel_count(); ++p) {
        const Rgb8 c{img.data[p * 3], img.data[p * 3 + 1], img.data[p * 3 + 2]};
        const auto id = palette.color_to_id(c);
        if (!id) throw ImageIoError("pixel " + std::to_string(p) + " is not a palette color");
        ids.data[p] = *id;
    }
    return ids;
}

}  // namespace instgs
