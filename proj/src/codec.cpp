#include "fundus/codec.hpp"

#include "fundus/error.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdlib>
#include <cstdio>
#include <cstring>
#include <string>

#include <jpeglib.h>

namespace fundus {

namespace {

bool is_png(std::span<const std::uint8_t> b) {
    static constexpr std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    return b.size() >= 8 && std::memcmp(b.data(), sig, 8) == 0;
}

bool is_jpeg(std::span<const std::uint8_t> b) {
    return b.size() >= 3 && b[0] == 0xFF && b[1] == 0xD8 && b[2] == 0xFF;
}

// ---------------------------------------------------------------------------
// PNG
// ---------------------------------------------------------------------------

struct PngReadSource {
    std::span<const std::uint8_t> bytes;
    std::size_t offset = 0;
};

void png_read_from_span(png_structp png, png_bytep out, png_size_t len) {
    auto* src = static_cast<PngReadSource*>(png_get_io_ptr(png));
    if (src->offset + len > src->bytes.size()) {
        png_error(png, "unexpected end of PNG data");
    }
    std::memcpy(out, src->bytes.data() + src->offset, len);
    src->offset += len;
}

void png_write_to_vector(png_structp png, png_bytep data, png_size_t len) {
    auto* out = static_cast<Bytes*>(png_get_io_ptr(png));
    out->insert(out->end(), data, data + len);
}

void png_flush_noop(png_structp) {}

void png_warning_silent(png_structp, png_const_charp) {}

RasterImage decode_png(std::span<const std::uint8_t> bytes) {
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_warning_silent);
    if (!png) throw DecodeError("png: cannot allocate reader");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw DecodeError("png: cannot allocate info");
    }

    PngReadSource src{bytes, 0};
    png_uint_32 width = 0;
    png_uint_32 height = 0;
    // Row storage lives outside the setjmp scope so a longjmp never skips its destructor.
    std::vector<std::uint8_t> rgb;
    std::vector<png_bytep> rows;

    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DecodeError("png: malformed or truncated payload");
    }

    png_set_read_fn(png, &src, png_read_from_span);
    png_read_info(png, info);
    int bit_depth = 0;
    int color_type = 0;
    png_get_IHDR(png, info, &width, &height, &bit_depth, &color_type, nullptr, nullptr, nullptr);

    if (bit_depth == 16) png_set_strip_16(png);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color_type & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
    png_set_interlace_handling(png);
    png_read_update_info(png, info);

    if (width == 0 || height == 0) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw InvalidInput("png: zero-dimension image");
    }
    const std::size_t stride = png_get_rowbytes(png, info);
    if (stride != static_cast<std::size_t>(width) * 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DecodeError("png: unsupported pixel layout");
    }
    rgb.resize(stride * height);
    rows.resize(height);
    for (png_uint_32 y = 0; y < height; ++y) rows[y] = rgb.data() + y * stride;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    RasterImage img(static_cast<int>(width), static_cast<int>(height));
    for (std::size_t i = 0; i < img.pixel_count(); ++i) {
        img.plane(0)[i] = rgb[3 * i];
        img.plane(1)[i] = rgb[3 * i + 1];
        img.plane(2)[i] = rgb[3 * i + 2];
    }
    return img;
}

Bytes write_png(int width, int height, int bit_depth, int color_type, const std::vector<png_bytep>& rows) {
    Bytes out;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_warning_silent);
    if (!png) throw Error("png: cannot allocate writer");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw Error("png: cannot allocate info");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error("png: encoding failed");
    }
    png_set_write_fn(png, &out, png_write_to_vector, png_flush_noop);
    png_set_compression_level(png, 6);
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth,
                 color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, const_cast<png_bytepp>(rows.data()));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return out;
}

// ---------------------------------------------------------------------------
// JPEG
// ---------------------------------------------------------------------------

struct JpegErrorManager {
    jpeg_error_mgr base;
    std::jmp_buf jump;
    char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
    (*cinfo->err->format_message)(cinfo, err->message);
    std::longjmp(err->jump, 1);
}

void jpeg_output_silent(j_common_ptr) {}

RasterImage decode_jpeg(std::span<const std::uint8_t> bytes) {
    jpeg_decompress_struct cinfo{};
    JpegErrorManager err{};
    cinfo.err = jpeg_std_error(&err.base);
    err.base.error_exit = jpeg_error_exit;
    err.base.output_message = jpeg_output_silent;
    std::vector<std::uint8_t> rgb;

    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw DecodeError(std::string("jpeg: ") + err.message);
    }
    jpeg_create_decompress(&cinfo);
    jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);

    const auto width = cinfo.output_width;
    const auto height = cinfo.output_height;
    if (width == 0 || height == 0 || cinfo.output_components != 3) {
        jpeg_destroy_decompress(&cinfo);
        throw DecodeError("jpeg: unsupported layout");
    }
    rgb.resize(static_cast<std::size_t>(width) * height * 3);
    while (cinfo.output_scanline < height) {
        JSAMPROW row = rgb.data() + static_cast<std::size_t>(cinfo.output_scanline) * width * 3;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    // libjpeg pads truncated streams with gray and only warns; treat that as malformed.
    const bool truncated = err.base.num_warnings > 0;
    jpeg_destroy_decompress(&cinfo);
    if (truncated) throw DecodeError("jpeg: truncated or corrupt payload");

    RasterImage img(static_cast<int>(width), static_cast<int>(height));
    for (std::size_t i = 0; i < img.pixel_count(); ++i) {
        img.plane(0)[i] = rgb[3 * i];
        img.plane(1)[i] = rgb[3 * i + 1];
        img.plane(2)[i] = rgb[3 * i + 2];
    }
    return img;
}

} // namespace

RasterImage decode_image(std::span<const std::uint8_t> bytes) {
    if (is_png(bytes)) return decode_png(bytes);
    if (is_jpeg(bytes)) return decode_jpeg(bytes);
    throw DecodeError("payload is neither PNG nor JPEG");
}

Bytes encode_png(const RasterImage& img) {
    const auto w = static_cast<std::size_t>(img.width());
    std::vector<std::uint8_t> rgb(img.pixel_count() * 3);
    for (std::size_t i = 0; i < img.pixel_count(); ++i) {
        rgb[3 * i] = img.plane(0)[i];
        rgb[3 * i + 1] = img.plane(1)[i];
        rgb[3 * i + 2] = img.plane(2)[i];
    }
    std::vector<png_bytep> rows(static_cast<std::size_t>(img.height()));
    for (std::size_t y = 0; y < rows.size(); ++y) rows[y] = rgb.data() + y * w * 3;
    return write_png(img.width(), img.height(), 8, PNG_COLOR_TYPE_RGB, rows);
}

Bytes encode_png16(const GrayImage& img) {
    const auto w = static_cast<std::size_t>(img.width());
    std::vector<std::uint8_t> buf(img.pixel_count() * 2);
    for (std::size_t i = 0; i < img.pixel_count(); ++i) {
        const auto v = static_cast<std::uint16_t>(std::lround(std::clamp(img[i], 0.0f, 1.0f) * 65535.0f));
        buf[2 * i] = static_cast<std::uint8_t>(v >> 8);
        buf[2 * i + 1] = static_cast<std::uint8_t>(v & 0xFF);
    }
    std::vector<png_bytep> rows(static_cast<std::size_t>(img.height()));
    for (std::size_t y = 0; y < rows.size(); ++y) rows[y] = buf.data() + y * w * 2;
    return write_png(img.width(), img.height(), 16, PNG_COLOR_TYPE_GRAY, rows);
}

Bytes encode_png_mask(const Mask& mask) {
    const auto w = static_cast<std::size_t>(mask.width());
    const std::size_t stride = (w + 7) / 8;
    std::vector<std::uint8_t> buf(stride * static_cast<std::size_t>(mask.height()), 0);
    for (int y = 0; y < mask.height(); ++y) {
        for (int x = 0; x < mask.width(); ++x) {
            if (mask.at(x, y)) {
                buf[static_cast<std::size_t>(y) * stride + static_cast<std::size_t>(x) / 8] |=
                    static_cast<std::uint8_t>(0x80u >> (x % 8));
            }
        }
    }
    std::vector<png_bytep> rows(static_cast<std::size_t>(mask.height()));
    for (std::size_t y = 0; y < rows.size(); ++y) rows[y] = buf.data() + y * stride;
    return write_png(mask.width(), mask.height(), 1, PNG_COLOR_TYPE_GRAY, rows);
}

Bytes encode_jpeg(const RasterImage& img, int quality) {
    jpeg_compress_struct cinfo{};
    JpegErrorManager err{};
    cinfo.err = jpeg_std_error(&err.base);
    err.base.error_exit = jpeg_error_exit;
    unsigned char* mem = nullptr;
    unsigned long mem_size = 0;
    std::vector<std::uint8_t> row(static_cast<std::size_t>(img.width()) * 3);

    if (setjmp(err.jump)) {
        jpeg_destroy_compress(&cinfo);
        std::free(mem);
        throw Error(std::string("jpeg: ") + err.message);
    }
    jpeg_create_compress(&cinfo);
    jpeg_mem_dest(&cinfo, &mem, &mem_size);
    cinfo.image_width = static_cast<JDIMENSION>(img.width());
    cinfo.image_height = static_cast<JDIMENSION>(img.height());
    cinfo.input_components = 3;
    cinfo.in_color_space = JCS_RGB;
    jpeg_set_defaults(&cinfo);
    jpeg_set_quality(&cinfo, quality, TRUE);
    jpeg_start_compress(&cinfo, TRUE);
    while (cinfo.next_scanline < cinfo.image_height) {
        const int y = static_cast<int>(cinfo.next_scanline);
        for (int x = 0; x < img.width(); ++x) {
            const auto i = img.index(x, y);
            row[3 * static_cast<std::size_t>(x)] = img.plane(0)[i];
            row[3 * static_cast<std::size_t>(x) + 1] = img.plane(1)[i];
            row[3 * static_cast<std::size_t>(x) + 2] = img.plane(2)[i];
        }
        JSAMPROW r = row.data();
        jpeg_write_scanlines(&cinfo, &r, 1);
    }
    jpeg_finish_compress(&cinfo);
    jpeg_destroy_compress(&cinfo);
    Bytes out(mem, mem + mem_size);
    std::free(mem);
    return out;
}

} // namespace fundus
