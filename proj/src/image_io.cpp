#include "metaseal/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <memory>

#include <jpeglib.h>

namespace metaseal {

Image quantize_u8(const Image& img) {
  Image out(img.h, img.w, img.c);
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    int q = static_cast<int>(std::lround(clamp01(img.data[i]) * 255.0f));
    out.data[i] = static_cast<float>(q) / 255.0f;
  }
  return out;
}

std::vector<std::uint8_t> to_u8(const Image& img) {
  std::vector<std::uint8_t> out(static_cast<std::size_t>(img.h) * img.w * img.c);
  std::size_t idx = 0;
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      for (int ch = 0; ch < img.c; ++ch)
        out[idx++] = static_cast<std::uint8_t>(
            std::lround(clamp01(img.at(ch, y, x)) * 255.0f));
  return out;
}

Image from_u8(const std::uint8_t* data, int h, int w, int c) {
  Image out(h, w, c);
  std::size_t idx = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch)
        out.at(ch, y, x) = static_cast<float>(data[idx++]) / 255.0f;
  return out;
}

bool has_extension(const std::string& path, const char* ext) {
  auto dot = path.find_last_of('.');
  if (dot == std::string::npos) return false;
  std::string got = path.substr(dot + 1);
  std::transform(got.begin(), got.end(), got.begin(),
                 [](unsigned char ch) { return std::tolower(ch); });
  return got == ext;
}

bool is_lossless_raster_path(const std::string& path) {
  return has_extension(path, "png");
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

Image expand_channels(const std::vector<std::uint8_t>& raw, int h, int w,
                      int channels) {
  if (channels == 3) return from_u8(raw.data(), h, w, 3);
  Image out(h, w, 3);
  std::size_t idx = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float v = static_cast<float>(raw[idx++]) / 255.0f;
      out.at(0, y, x) = v;
      out.at(1, y, x) = v;
      out.at(2, y, x) = v;
    }
  return out;
}

Image load_png_file(std::FILE* fp, const std::string& path) {
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw Error("image_io", "png reader allocation failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw Error("image_io", "png info allocation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error("image_io", "failed to decode png: " + path);
  }
  png_init_io(png, fp);
  png_read_info(png, info);

  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);

  int w = static_cast<int>(png_get_image_width(png, info));
  int h = static_cast<int>(png_get_image_height(png, info));
  int channels = static_cast<int>(png_get_channels(png, info));
  if (channels != 1 && channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error("image_io", "unsupported png channel layout");
  }

  std::vector<std::uint8_t> raw(static_cast<std::size_t>(h) * w * channels);
  std::vector<png_bytep> rows(h);
  for (int y = 0; y < h; ++y)
    rows[y] = raw.data() + static_cast<std::size_t>(y) * w * channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return expand_channels(raw, h, w, channels);
}

struct JpegErrorMgr {
  jpeg_error_mgr pub;
  std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* mgr = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
  std::longjmp(mgr->jump, 1);
}

Image decode_jpeg_stream(jpeg_decompress_struct& cinfo) {
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  int w = static_cast<int>(cinfo.output_width);
  int h = static_cast<int>(cinfo.output_height);
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(h) * w * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row =
        raw.data() + static_cast<std::size_t>(cinfo.output_scanline) * w * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  return from_u8(raw.data(), h, w, 3);
}

}  // namespace

Image load_image(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw Error("image_io", "cannot open image: " + path);

  std::uint8_t sig[8] = {0};
  std::size_t got = std::fread(sig, 1, sizeof(sig), fp.get());
  std::rewind(fp.get());
  if (got >= 8 && png_sig_cmp(sig, 0, 8) == 0) {
    return load_png_file(fp.get(), path);
  }
  if (got >= 2 && sig[0] == 0xff && sig[1] == 0xd8) {
    jpeg_decompress_struct cinfo;
    JpegErrorMgr err;
    cinfo.err = jpeg_std_error(&err.pub);
    err.pub.error_exit = jpeg_error_exit;
    if (setjmp(err.jump)) {
      jpeg_destroy_decompress(&cinfo);
      throw Error("image_io", "failed to decode jpeg: " + path);
    }
    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, fp.get());
    Image img = decode_jpeg_stream(cinfo);
    jpeg_destroy_decompress(&cinfo);
    return img;
  }
  throw Error("image_io", "unrecognized image format: " + path);
}

void save_png(const std::string& path, const Image& img) {
  if (img.c != 1 && img.c != 3)
    throw Error("image_io", "png writer expects 1 or 3 channels");
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw Error("image_io", "cannot open for writing: " + path);

  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw Error("image_io", "png writer allocation failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error("image_io", "png info allocation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("image_io", "failed to encode png: " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, img.w, img.h, 8,
               img.c == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<std::uint8_t> raw = to_u8(img);
  for (int y = 0; y < img.h; ++y) {
    png_write_row(png, raw.data() + static_cast<std::size_t>(y) * img.w * img.c);
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

void save_jpeg(const std::string& path, const Image& img, int quality) {
  if (img.c != 3) throw Error("image_io", "jpeg writer expects 3 channels");
  if (quality < 1 || quality > 100)
    throw Error("image_io", "jpeg quality must be in [1, 100]");
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw Error("image_io", "cannot open for writing: " + path);

  jpeg_compress_struct cinfo;
  JpegErrorMgr err;
  cinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = jpeg_error_exit;
  if (setjmp(err.jump)) {
    jpeg_destroy_compress(&cinfo);
    throw Error("image_io", "failed to encode jpeg: " + path);
  }
  jpeg_create_compress(&cinfo);
  jpeg_stdio_dest(&cinfo, fp.get());
  cinfo.image_width = img.w;
  cinfo.image_height = img.h;
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);

  std::vector<std::uint8_t> raw = to_u8(img);
  while (cinfo.next_scanline < cinfo.image_height) {
    JSAMPROW row =
        raw.data() + static_cast<std::size_t>(cinfo.next_scanline) * img.w * 3;
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);
}

Image jpeg_roundtrip(const Image& img, int quality) {
  if (img.c != 3) throw Error("image_io", "jpeg round trip expects 3 channels");
  if (quality < 1 || quality > 100)
    throw Error("image_io", "jpeg quality must be in [1, 100]");

  jpeg_compress_struct cinfo;
  JpegErrorMgr err;
  cinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = jpeg_error_exit;
  unsigned char* buffer = nullptr;
  unsigned long buffer_size = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_compress(&cinfo);
    if (buffer) std::free(buffer);
    throw Error("image_io", "in-memory jpeg encode failed");
  }
  jpeg_create_compress(&cinfo);
  jpeg_mem_dest(&cinfo, &buffer, &buffer_size);
  cinfo.image_width = img.w;
  cinfo.image_height = img.h;
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  std::vector<std::uint8_t> raw = to_u8(img);
  while (cinfo.next_scanline < cinfo.image_height) {
    JSAMPROW row =
        raw.data() + static_cast<std::size_t>(cinfo.next_scanline) * img.w * 3;
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);

  jpeg_decompress_struct dinfo;
  JpegErrorMgr derr;
  dinfo.err = jpeg_std_error(&derr.pub);
  derr.pub.error_exit = jpeg_error_exit;
  if (setjmp(derr.jump)) {
    jpeg_destroy_decompress(&dinfo);
    std::free(buffer);
    throw Error("image_io", "in-memory jpeg decode failed");
  }
  jpeg_create_decompress(&dinfo);
  jpeg_mem_src(&dinfo, buffer, buffer_size);
  Image out = decode_jpeg_stream(dinfo);
  jpeg_destroy_decompress(&dinfo);
  std::free(buffer);
  return out;
}

}  // namespace metaseal
