#include "mmfs/image_io.hpp"

#include "mmfs/errors.hpp"

#include <png.h>

#include <cstdio>
#include <csetjmp>
#include <cstring>
#include <fstream>
#include <iterator>

#include <jpeglib.h>

namespace mmfs {

namespace F = torch::nn::functional;

torch::Tensor to_uint8_hwc(const torch::Tensor& image) {
    auto x = image.dim() == 4 ? image.squeeze(0) : image;
    if (x.dim() != 3 || x.size(0) != 3) throw InvalidArgument("to_uint8_hwc: expected a single RGB image");
    x = x.detach().to(torch::kFloat).clamp(-1.0, 1.0);
    x = ((x + 1.0) * 127.5).round().to(torch::kUInt8);
    return x.permute({1, 2, 0}).contiguous();
}

torch::Tensor from_uint8_hwc(const torch::Tensor& pixels) {
    if (pixels.dim() != 3 || pixels.size(2) != 3 || pixels.scalar_type() != torch::kUInt8) {
        throw InvalidArgument("from_uint8_hwc: expected uint8 [H, W, 3]");
    }
    return (pixels.permute({2, 0, 1}).to(torch::kFloat) / 127.5 - 1.0).unsqueeze(0).contiguous();
}

// ---------------------------------------------------------------------------
// PNG

namespace {

void png_append(png_structp png, png_bytep data, png_size_t length) {
    auto* out = static_cast<std::vector<unsigned char>*>(png_get_io_ptr(png));
    out->insert(out->end(), data, data + length);
}

struct PngReader {
    const unsigned char* data;
    size_t size;
    size_t offset = 0;
};

void png_consume(png_structp png, png_bytep out, png_size_t length) {
    auto* r = static_cast<PngReader*>(png_get_io_ptr(png));
    if (r->offset + length > r->size) png_error(png, "truncated PNG stream");
    std::memcpy(out, r->data + r->offset, length);
    r->offset += length;
}

// libpng reports to stderr by default; failures surface as FormatError instead.
void png_quiet_error(png_structp png, png_const_charp) { png_longjmp(png, 1); }
void png_quiet_warning(png_structp, png_const_charp) {}

torch::Tensor decode_png(const std::vector<unsigned char>& bytes) {
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_quiet_error, png_quiet_warning);
    if (!png) throw FormatError("png: cannot allocate reader");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw FormatError("png: cannot allocate info");
    }
    PngReader reader{bytes.data(), bytes.size()};
    torch::Tensor pixels;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("png: undecodable image");
    }
    png_set_read_fn(png, &reader, png_consume);
    png_read_info(png, info);
    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_gray_to_rgb(png);
    png_set_interlace_handling(png);
    png_read_update_info(png, info);
    const auto width = png_get_image_width(png, info);
    const auto height = png_get_image_height(png, info);
    if (png_get_rowbytes(png, info) != width * 3) png_error(png, "unexpected row layout");
    pixels = torch::empty({static_cast<int64_t>(height), static_cast<int64_t>(width), 3}, torch::kUInt8);
    rows.resize(height);
    for (png_uint_32 y = 0; y < height; ++y) rows[y] = pixels.data_ptr<uint8_t>() + static_cast<size_t>(y) * width * 3;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return from_uint8_hwc(pixels);
}

// ---------------------------------------------------------------------------
// JPEG (read only)

struct JpegError {
    jpeg_error_mgr mgr;
    std::jmp_buf jump;
};

void jpeg_fail(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegError*>(cinfo->err);
    std::longjmp(err->jump, 1);
}

torch::Tensor decode_jpeg(const std::vector<unsigned char>& bytes) {
    jpeg_decompress_struct cinfo;
    JpegError err;
    cinfo.err = jpeg_std_error(&err.mgr);
    err.mgr.error_exit = jpeg_fail;
    torch::Tensor pixels;
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw FormatError("jpeg: undecodable image");
    }
    jpeg_create_decompress(&cinfo);
    jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);
    pixels = torch::empty({cinfo.output_height, cinfo.output_width, 3}, torch::kUInt8);
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = pixels.data_ptr<uint8_t>() + static_cast<size_t>(cinfo.output_scanline) * cinfo.output_width * 3;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return from_uint8_hwc(pixels);
}

} // namespace

std::vector<unsigned char> encode_png(const torch::Tensor& image) {
    auto pixels = to_uint8_hwc(image);
    const auto height = static_cast<png_uint_32>(pixels.size(0));
    const auto width = static_cast<png_uint_32>(pixels.size(1));
    std::vector<unsigned char> out;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("png: cannot allocate writer");
    png_infop info = png_create_info_struct(png);
    if (!info || setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("png: encoding failed");
    }
    png_set_write_fn(png, &out, png_append, nullptr);
    png_set_IHDR(png, info, width, height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (png_uint_32 y = 0; y < height; ++y) {
        png_write_row(png, pixels.data_ptr<uint8_t>() + static_cast<size_t>(y) * width * 3);
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return out;
}

void write_png(const std::filesystem::path& path, const torch::Tensor& image) {
    auto bytes = encode_png(image);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("cannot write " + path.string());
}

torch::Tensor decode_image(const std::vector<unsigned char>& bytes) {
    static const unsigned char png_sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
    if (bytes.size() >= 8 && std::memcmp(bytes.data(), png_sig, 8) == 0) return decode_png(bytes);
    if (bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 && bytes[2] == 0xFF) return decode_jpeg(bytes);
    throw FormatError("image is neither PNG nor JPEG");
}

torch::Tensor read_image(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidArgument("cannot open image " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_image(bytes);
}

torch::Tensor center_crop_resize(const torch::Tensor& images, int64_t side) {
    if (images.dim() != 4) throw InvalidArgument("center_crop_resize: expected [N, C, H, W]");
    const auto h = images.size(2), w = images.size(3);
    const auto s = std::min(h, w);
    auto x = images.narrow(2, (h - s) / 2, s).narrow(3, (w - s) / 2, s);
    if (s == side) return x.contiguous();
    return F::interpolate(x, F::InterpolateFuncOptions()
                                 .size(std::vector<int64_t>{side, side})
                                 .mode(torch::kBilinear)
                                 .align_corners(false)
                                 .antialias(s > side));
}

torch::Tensor load_image(const std::filesystem::path& path, int64_t side) {
    return center_crop_resize(read_image(path), side);
}

torch::Tensor image_strip(const torch::Tensor& images) {
    if (images.dim() != 4) throw InvalidArgument("image_strip: expected [N, 3, H, W]");
    return torch::cat(images.unbind(0), 2).unsqueeze(0);
}

} // namespace mmfs
