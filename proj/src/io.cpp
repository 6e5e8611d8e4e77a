#include "extremal/io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

namespace extremal {

namespace {

void write_u32_le(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32_le(std::istream& is, const std::string& path) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw InvalidInput("truncated FT1 file: " + path);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

} // namespace

void save_ft1(const std::string& path, const Tensor& t) {
    t.require_finite("save_ft1 " + path);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw InvalidInput("cannot open for writing: " + path);
    os.write("FT1\0", 4);
    write_u32_le(os, static_cast<std::uint32_t>(t.rank()));
    for (int e : t.shape()) write_u32_le(os, static_cast<std::uint32_t>(e));
    for (float v : t.data()) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        write_u32_le(os, bits);
    }
    if (!os) throw InvalidInput("write failed: " + path);
}

Tensor load_ft1(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw InvalidInput("cannot open FT1 file: " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "FT1\0", 4) != 0) {
        throw InvalidInput("bad FT1 magic in " + path);
    }
    const std::uint32_t rank = read_u32_le(is, path);
    if (rank == 0 || rank > 8) throw InvalidInput("unreasonable FT1 rank in " + path);
    std::vector<int> shape(rank);
    std::int64_t n = 1;
    for (auto& e : shape) {
        const std::uint32_t x = read_u32_le(is, path);
        if (x == 0 || x > (1u << 24)) throw InvalidInput("unreasonable FT1 extent in " + path);
        e = static_cast<int>(x);
        n *= e;
    }
    std::vector<float> data(static_cast<std::size_t>(n));
    for (auto& v : data) {
        const std::uint32_t bits = read_u32_le(is, path);
        std::memcpy(&v, &bits, 4);
    }
    Tensor t(std::move(shape), std::move(data));
    if (!t.all_finite()) throw InvalidInput("non-finite values in FT1 file " + path);
    return t;
}

void save_png_gray(const std::string& path, const Tensor& mask_hw) {
    if (mask_hw.rank() != 2) throw InvalidInput("save_png_gray expects HxW, got " + mask_hw.shape_string());
    const int h = mask_hw.extent(0), w = mask_hw.extent(1);

    std::FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw InvalidInput("cannot open for writing: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
        std::fclose(fp);
        throw InvalidInput("libpng write failure for " + path);
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<unsigned char> row(static_cast<std::size_t>(w));
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const float v = std::min(std::max(mask_hw.at(y, x), 0.0f), 1.0f);
            row[static_cast<std::size_t>(x)] = static_cast<unsigned char>(std::lround(v * 255.0f));
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

Tensor load_png(const std::string& path) {
    std::FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw InvalidInput("cannot open PNG file: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        std::fclose(fp);
        throw InvalidInput("libpng read failure for " + path);
    }
    png_init_io(png, fp);
    png_read_info(png, info);

    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    const int h = static_cast<int>(png_get_image_height(png, info));
    const int w = static_cast<int>(png_get_image_width(png, info));
    const int channels = static_cast<int>(png_get_channels(png, info));
    if (channels != 1 && channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw InvalidInput("unsupported PNG channel count in " + path);
    }

    std::vector<unsigned char> pixels(static_cast<std::size_t>(h) * w * channels);
    std::vector<png_bytep> rows(static_cast<std::size_t>(h));
    for (int y = 0; y < h; ++y) rows[static_cast<std::size_t>(y)] = pixels.data() + static_cast<std::size_t>(y) * w * channels;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);

    Tensor out({channels, h, w});
    for (int c = 0; c < channels; ++c) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                out.at(c, y, x) = pixels[(static_cast<std::size_t>(y) * w + x) * channels + c] / 255.0f;
            }
        }
    }
    return out;
}

Tensor load_png_gray(const std::string& path) {
    Tensor chw = load_png(path);
    if (chw.extent(0) != 1) throw InvalidInput("expected grayscale PNG: " + path);
    const int h = chw.extent(1), w = chw.extent(2);
    Tensor out({h, w});
    out.data() = chw.data();
    return out;
}

void write_text_file(const std::string& path, const std::string& contents) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw InvalidInput("cannot open for writing: " + path);
    os << contents;
    if (!os) throw InvalidInput("write failed: " + path);
}

std::string read_text_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw InvalidInput("cannot open file: " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

void save_csv(const std::string& path, const std::string& header,
              const std::vector<std::vector<std::string>>& rows) {
    std::ostringstream os;
    os << header << "\n";
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) os << ",";
            os << row[i];
        }
        os << "\n";
    }
    write_text_file(path, os.str());
}

std::string format_float(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

} // namespace extremal
