#include "wps/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <memory>

// jpeglib.h needs FILE and size_t declared first.
#include <jpeglib.h>

namespace wps {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f != nullptr) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::string& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw Error(ErrorCode::kIOError, "cannot open " + path);
  return f;
}

bool has_png_signature(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) return false;
  unsigned char sig[8];
  return std::fread(sig, 1, 8, f.get()) == 8 && png_sig_cmp(sig, 0, 8) == 0;
}

class PngReader {
 public:
  explicit PngReader(const std::string& path) : file_(open_file(path, "rb")), path_(path) {
    png_ = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    info_ = png_ ? png_create_info_struct(png_) : nullptr;
    if (!png_ || !info_) throw Error(ErrorCode::kIOError, "libpng init failed");
  }
  ~PngReader() { png_destroy_read_struct(&png_, &info_, nullptr); }

  // data receives height * rowbytes bytes after the setup transforms.
  template <typename Setup>
  void read(Setup&& setup, std::vector<unsigned char>& data, int& width, int& height, int& channels) {
    if (setjmp(png_jmpbuf(png_))) throw Error(ErrorCode::kCorruptFile, "cannot decode PNG " + path_);
    png_init_io(png_, file_.get());
    png_read_info(png_, info_);
    setup(png_, info_);
    png_read_update_info(png_, info_);
    width = static_cast<int>(png_get_image_width(png_, info_));
    height = static_cast<int>(png_get_image_height(png_, info_));
    channels = png_get_channels(png_, info_);
    const size_t rowbytes = png_get_rowbytes(png_, info_);
    data.resize(rowbytes * height);
    std::vector<png_bytep> rows(height);
    for (int y = 0; y < height; ++y) rows[y] = data.data() + y * rowbytes;
    png_read_image(png_, rows.data());
    png_read_end(png_, nullptr);
  }

 private:
  FilePtr file_;
  std::string path_;
  png_structp png_ = nullptr;
  png_infop info_ = nullptr;
};

ImageTensor read_png(const std::string& path) {
  PngReader reader(path);
  std::vector<unsigned char> data;
  int width = 0, height = 0, channels = 0;
  reader.read(
      [](png_structp png, png_infop info) {
        const int color = png_get_color_type(png, info);
        if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
        if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
        if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) {
          if (png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
          png_set_gray_to_rgb(png);
        }
        if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
        png_set_strip_alpha(png);
      },
      data, width, height, channels);
  if (channels != 3) throw Error(ErrorCode::kCorruptFile, "unexpected channel count in " + path);
  ImageTensor image(height, width);
  for (size_t i = 0; i < image.pixels.size(); ++i) image.pixels[i] = data[i] / 255.0f;
  return image;
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  std::longjmp(err->jump, 1);
}

ImageTensor read_jpeg(const std::string& path) {
  FilePtr file = open_file(path, "rb");
  jpeg_decompress_struct cinfo;
  JpegErrorManager err;
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  std::vector<unsigned char> data;
  int width = 0, height = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw Error(ErrorCode::kCorruptFile, "cannot decode JPEG " + path);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, file.get());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  width = static_cast<int>(cinfo.output_width);
  height = static_cast<int>(cinfo.output_height);
  data.resize(static_cast<size_t>(width) * height * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = data.data() + static_cast<size_t>(cinfo.output_scanline) * width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  ImageTensor image(height, width);
  for (size_t i = 0; i < image.pixels.size(); ++i) image.pixels[i] = data[i] / 255.0f;
  return image;
}

class PngWriter {
 public:
  explicit PngWriter(const std::string& path) : file_(open_file(path, "wb")), path_(path) {
    png_ = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    info_ = png_ ? png_create_info_struct(png_) : nullptr;
    if (!png_ || !info_) throw Error(ErrorCode::kIOError, "libpng init failed");
  }
  ~PngWriter() { png_destroy_write_struct(&png_, &info_); }

  template <typename Setup>
  void write(Setup&& setup, std::vector<unsigned char>& data, int width, int height, size_t rowbytes) {
    if (setjmp(png_jmpbuf(png_))) throw Error(ErrorCode::kIOError, "cannot write PNG " + path_);
    png_init_io(png_, file_.get());
    setup(png_, info_, width, height);
    png_write_info(png_, info_);
    std::vector<png_bytep> rows(height);
    for (int y = 0; y < height; ++y) rows[y] = data.data() + y * rowbytes;
    png_write_image(png_, rows.data());
    png_write_end(png_, nullptr);
  }

 private:
  FilePtr file_;
  std::string path_;
  png_structp png_ = nullptr;
  png_infop info_ = nullptr;
};

}  // namespace

ImageTensor read_image(const std::string& path) {
  return has_png_signature(path) ? read_png(path) : read_jpeg(path);
}

void write_png_rgb(const std::string& path, const ImageTensor& image) {
  std::vector<unsigned char> data(image.pixels.size());
  for (size_t i = 0; i < data.size(); ++i) {
    data[i] = static_cast<unsigned char>(std::lround(std::clamp(image.pixels[i], 0.0f, 1.0f) * 255.0f));
  }
  PngWriter writer(path);
  writer.write(
      [](png_structp png, png_infop info, int w, int h) {
        png_set_IHDR(png, info, w, h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                     PNG_FILTER_TYPE_DEFAULT);
      },
      data, image.width, image.height, static_cast<size_t>(image.width) * 3);
}

void write_indexed_png(const std::string& path, const SemanticSegmentation& seg, const std::vector<Rgb>& palette) {
  if (palette.empty() || palette.size() > 256) throw Error(ErrorCode::kIOError, "palette must have 1..256 entries");
  std::vector<unsigned char> data(seg.labels.size());
  for (size_t i = 0; i < data.size(); ++i) {
    const int label = seg.labels[i];
    if (label < 0 || label >= static_cast<int>(palette.size())) {
      throw Error(ErrorCode::kIOError, "label " + std::to_string(label) + " has no palette entry");
    }
    data[i] = static_cast<unsigned char>(label);
  }
  std::vector<png_color> colors(palette.size());
  for (size_t i = 0; i < palette.size(); ++i) colors[i] = {palette[i][0], palette[i][1], palette[i][2]};
  PngWriter writer(path);
  writer.write(
      [&colors](png_structp png, png_infop info, int w, int h) {
        png_set_IHDR(png, info, w, h, 8, PNG_COLOR_TYPE_PALETTE, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                     PNG_FILTER_TYPE_DEFAULT);
        png_set_PLTE(png, info, colors.data(), static_cast<int>(colors.size()));
      },
      data, seg.width, seg.height, static_cast<size_t>(seg.width));
}

SemanticSegmentation read_indexed_png(const std::string& path) {
  PngReader reader(path);
  std::vector<unsigned char> data;
  int width = 0, height = 0, channels = 0;
  bool paletted = true;
  reader.read(
      [&paletted](png_structp png, png_infop info) {
        const int color = png_get_color_type(png, info);
        paletted = color == PNG_COLOR_TYPE_PALETTE || color == PNG_COLOR_TYPE_GRAY;
        if (png_get_bit_depth(png, info) < 8) png_set_packing(png);
      },
      data, width, height, channels);
  if (!paletted || channels != 1) throw Error(ErrorCode::kCorruptFile, path + " is not an indexed PNG");
  SemanticSegmentation seg(height, width, 0);
  for (size_t i = 0; i < seg.labels.size(); ++i) seg.labels[i] = data[i];
  return seg;
}

ImageTensor resize_bilinear(const ImageTensor& image, int height, int width) {
  if (image.height == height && image.width == width) return image;
  ImageTensor out(height, width);
  out.original_height = image.original_height;
  out.original_width = image.original_width;
  const double sy = static_cast<double>(image.height) / height;
  const double sx = static_cast<double>(image.width) / width;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, image.height - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, image.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, image.width - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, image.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double top = image.at(y0, x0, c) * (1 - wx) + image.at(y0, x1, c) * wx;
        const double bottom = image.at(y1, x0, c) * (1 - wx) + image.at(y1, x1, c) * wx;
        out.at(y, x, c) = static_cast<float>(top * (1 - wy) + bottom * wy);
      }
    }
  }
  return out;
}

SemanticSegmentation resize_nearest(const SemanticSegmentation& seg, int height, int width) {
  if (seg.height == height && seg.width == width) return seg;
  SemanticSegmentation out(height, width, 0);
  for (int y = 0; y < height; ++y) {
    const int sy = std::min(seg.height - 1, static_cast<int>((y + 0.5) * seg.height / height));
    for (int x = 0; x < width; ++x) {
      const int sx = std::min(seg.width - 1, static_cast<int>((x + 0.5) * seg.width / width));
      out.at(y, x) = seg.at(sy, sx);
    }
  }
  return out;
}

std::vector<Rgb> category_palette(int num_categories) {
  std::vector<Rgb> palette;
  palette.reserve(num_categories + 1);
  for (int c = 0; c < num_categories; ++c) {
    // Golden-angle hue walk keeps neighbouring ids visually distinct.
    const double hue = std::fmod(c * 0.618033988749895, 1.0) * 6.0;
    const int sector = static_cast<int>(hue);
    const double f = hue - sector;
    const double v = 0.95, s = 0.8;
    const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
    double r = 0, g = 0, b = 0;
    switch (sector % 6) {
      case 0: r = v; g = t; b = p; break;
      case 1: r = q; g = v; b = p; break;
      case 2: r = p; g = v; b = t; break;
      case 3: r = p; g = q; b = v; break;
      case 4: r = t; g = p; b = v; break;
      default: r = v; g = p; b = q; break;
    }
    palette.push_back({static_cast<std::uint8_t>(std::lround(r * 255)), static_cast<std::uint8_t>(std::lround(g * 255)),
                       static_cast<std::uint8_t>(std::lround(b * 255))});
  }
  palette.push_back({0, 0, 0});
  return palette;
}

}  // namespace wps
