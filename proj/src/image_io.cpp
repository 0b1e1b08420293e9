// Copyright (c) 2026 The chart2dsl authors
// SPDX-License-Identifier: Apache-2.0

#include "c2d/image_io.hpp"

#include <png.h>

#include <array>
#include <csetjmp>
#include <cstring>
#include <fstream>
#include <iterator>

#include "c2d/errors.hpp"

namespace c2d {

namespace {

// libpng reports errors through longjmp, so the setjmp frames below only hold
// raw pointers and trivially destructible locals.

struct ReadCursor {
    const std::vector<std::uint8_t>* bytes;
    std::size_t pos;
};

void write_fn(png_structp png, png_bytep data, png_size_t len) {
    auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
    out->insert(out->end(), data, data + len);
}

void read_fn(png_structp png, png_bytep data, png_size_t len) {
    auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
    if (cur->pos + len > cur->bytes->size()) {
        png_error(png, "truncated stream");
    }
    std::memcpy(data, cur->bytes->data() + cur->pos, len);
    cur->pos += len;
}

void warning_fn(png_structp, png_const_charp) {}
[[noreturn]] void error_fn(png_structp png, png_const_charp) { png_longjmp(png, 1); }

bool write_rows(png_structp png, png_infop info, const Raster* r) {
    if (setjmp(png_jmpbuf(png))) {
        return false;
    }
    png_set_IHDR(png, info, static_cast<png_uint_32>(r->width), static_cast<png_uint_32>(r->height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < r->height; ++y) {
        png_write_row(png, r->rgb.data() + static_cast<std::size_t>(y * r->width) * 3);
    }
    png_write_end(png, nullptr);
    return true;
}

bool read_header(png_structp png, png_infop info, int* w, int* h) {
    if (setjmp(png_jmpbuf(png))) {
        return false;
    }
    png_read_info(png, info);
    *w = static_cast<int>(png_get_image_width(png, info));
    *h = static_cast<int>(png_get_image_height(png, info));
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_palette_to_rgb(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    return png_get_rowbytes(png, info) == static_cast<std::size_t>(*w) * 3;
}

bool read_rows(png_structp png, std::uint8_t* dst, int w, int h) {
    if (setjmp(png_jmpbuf(png))) {
        return false;
    }
    for (int y = 0; y < h; ++y) {
        png_read_row(png, dst + static_cast<std::size_t>(y * w) * 3, nullptr);
    }
    png_read_end(png, nullptr);
    return true;
}

}  // namespace

std::vector<std::uint8_t> encode_png(const Raster& r) {
    std::vector<std::uint8_t> out;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, error_fn, warning_fn);
    require(png != nullptr, "png: cannot create writer");
    png_infop info = png_create_info_struct(png);
    png_set_write_fn(png, &out, write_fn, nullptr);
    const bool ok = info != nullptr && write_rows(png, info, &r);
    png_destroy_write_struct(&png, &info);
    if (!ok) {
        throw std::runtime_error("png: encoding failed");
    }
    return out;
}

Raster decode_png(const std::vector<std::uint8_t>& bytes) {
    require(bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0, "png: bad signature");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, error_fn, warning_fn);
    require(png != nullptr, "png: cannot create reader");
    png_infop info = png_create_info_struct(png);
    ReadCursor cur{&bytes, 0};
    png_set_read_fn(png, &cur, read_fn);
    int w = 0;
    int h = 0;
    bool ok = info != nullptr && read_header(png, info, &w, &h) && w > 0 && h > 0;
    Raster r;
    if (ok) {
        r = Raster(w, h);
        ok = read_rows(png, r.rgb.data(), w, h);
    }
    png_destroy_read_struct(&png, &info, nullptr);
    require(ok, "png: malformed or unsupported stream");
    for (std::size_t i = 0; i < r.mask.size(); ++i) {
        const Rgb px{r.rgb[3 * i], r.rgb[3 * i + 1], r.rgb[3 * i + 2]};
        r.mask[i] = px == kBackground ? 0 : 1;
    }
    return r;
}

void write_png(const std::string& path, const Raster& r) {
    const auto bytes = encode_png(r);
    std::ofstream f(path, std::ios::binary);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) {
        throw std::runtime_error("cannot write " + path);
    }
}

Raster read_png(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(static_cast<bool>(f), "cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_png(bytes);
}

namespace {
constexpr char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 2 < bytes.size(); i += 3) {
        const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
        out += kB64[(v >> 18) & 63];
        out += kB64[(v >> 12) & 63];
        out += kB64[(v >> 6) & 63];
        out += kB64[v & 63];
    }
    if (i < bytes.size()) {
        std::uint32_t v = bytes[i] << 16;
        if (i + 1 < bytes.size()) {
            v |= bytes[i + 1] << 8;
        }
        out += kB64[(v >> 18) & 63];
        out += kB64[(v >> 12) & 63];
        out += i + 1 < bytes.size() ? kB64[(v >> 6) & 63] : '=';
        out += '=';
    }
    return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
    std::array<int, 256> lut{};
    lut.fill(-1);
    for (int k = 0; k < 64; ++k) {
        lut[static_cast<unsigned char>(kB64[k])] = k;
    }
    std::vector<std::uint8_t> out;
    std::uint32_t acc = 0;
    int bits = 0;
    for (char ch : text) {
        if (ch == '=') {
            break;
        }
        const int v = lut[static_cast<unsigned char>(ch)];
        require(v >= 0, "base64: invalid character");
        acc = (acc << 6) | static_cast<std::uint32_t>(v);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<std::uint8_t>((acc >> bits) & 0xFF));
        }
    }
    return out;
}

}  // namespace c2d
