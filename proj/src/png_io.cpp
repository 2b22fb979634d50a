#include "matdiff/png16.hpp"

#include <png.h>

#include <cstdio>
#include <stdexcept>
#include <vector>

namespace matdiff {

namespace {

uint16_t quantize16(float v) {
    v = std::min(1.0f, std::max(0.0f, v));
    return (uint16_t)std::lround((double)v * 65535.0);
}

struct FileCloser {
    std::FILE* f;
    ~FileCloser() {
        if (f) std::fclose(f);
    }
};

} // namespace

void write_png16(const std::filesystem::path& path, const Grid& g) {
    if (g.channels != 1 && g.channels != 3)
        throw std::runtime_error("write_png16: need 1 or 3 channels");
    std::filesystem::create_directories(path.parent_path());
    std::FILE* f = std::fopen(path.string().c_str(), "wb");
    if (!f) throw std::runtime_error("cannot open for write: " + path.string());
    FileCloser closer{f};

    png_structp png =
        png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("png write failed: " + path.string());
    }
    png_init_io(png, f);
    png_set_compression_level(png, 6);
    png_set_filter(png, 0, PNG_FILTER_NONE);
    int color = g.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
    png_set_IHDR(png, info, g.width, g.height, 16, color, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<uint16_t> row((size_t)g.width * g.channels);
    std::vector<uint8_t> bytes(row.size() * 2);
    for (int y = 0; y < g.height; ++y) {
        for (int x = 0; x < g.width; ++x)
            for (int c = 0; c < g.channels; ++c)
                row[(size_t)x * g.channels + c] = quantize16(g.at(c, y, x));
        for (size_t i = 0; i < row.size(); ++i) {
            bytes[2 * i] = (uint8_t)(row[i] >> 8); // network byte order
            bytes[2 * i + 1] = (uint8_t)(row[i] & 0xff);
        }
        png_write_row(png, bytes.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Grid read_png16(const std::filesystem::path& path) {
    std::FILE* f = std::fopen(path.string().c_str(), "rb");
    if (!f) throw std::runtime_error("cannot open for read: " + path.string());
    FileCloser closer{f};

    png_structp png =
        png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("png read failed: " + path.string());
    }
    png_init_io(png, f);
    png_read_info(png, info);

    int width = png_get_image_width(png, info);
    int height = png_get_image_height(png, info);
    int bit_depth = png_get_bit_depth(png, info);
    int color = png_get_color_type(png, info);

    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (bit_depth < 8) png_set_expand(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    bit_depth = png_get_bit_depth(png, info);
    int channels = png_get_channels(png, info);
    if (channels != 1 && channels != 3)
        throw std::runtime_error("read_png16: unsupported channel count in " +
                                 path.string());

    Grid g(channels, height, width);
    std::vector<uint8_t> row(png_get_rowbytes(png, info));
    float scale = bit_depth == 16 ? 1.0f / 65535.0f : 1.0f / 255.0f;
    for (int y = 0; y < height; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int x = 0; x < width; ++x)
            for (int c = 0; c < channels; ++c) {
                uint32_t v;
                if (bit_depth == 16) {
                    size_t i = ((size_t)x * channels + c) * 2;
                    v = ((uint32_t)row[i] << 8) | row[i + 1];
                } else {
                    v = row[(size_t)x * channels + c];
                }
                g.at(c, y, x) = (float)v * scale;
            }
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return g;
}

} // namespace matdiff
