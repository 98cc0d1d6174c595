/*
 * Copyright (c) 2026, The agestyle Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "agestyle/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <memory>
#include <sstream>
#include <vector>

namespace agestyle {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_error_fn(png_structp, png_const_charp msg) { throw ImageIoError(msg); }
void png_warning_fn(png_structp, png_const_charp) {}

}  // namespace

ImageTensor read_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw ImageIoError("cannot open image " + path.string());
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw ImageIoError("not a PNG file: " + path.string());
  }
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warning_fn);
  if (!png) throw ImageIoError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_read_struct(p, i, nullptr); }
  } guard{&png, &info};

  std::vector<unsigned char> pixels;
  png_uint_32 width = 0;
  png_uint_32 height = 0;
  try {
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    width = png_get_image_width(png, info);
    height = png_get_image_height(png, info);
    const int color = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    if (png_get_channels(png, info) != 3) throw ImageIoError("unsupported PNG layout");
    pixels.resize(std::size_t(width) * height * 3);
    std::vector<png_bytep> rows(height);
    for (png_uint_32 y = 0; y < height; ++y) rows[y] = pixels.data() + std::size_t(y) * width * 3;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
  } catch (const ImageIoError& e) {
    throw ImageIoError("failed to decode " + path.string() + ": " + e.what());
  }

  ImageTensor out(Shape{1, 3, Index(height), Index(width)});
  for (Index y = 0; y < Index(height); ++y)
    for (Index x = 0; x < Index(width); ++x)
      for (Index c = 0; c < 3; ++c)
        out(0, c, y, x) = float(pixels[std::size_t((y * width + x) * 3 + c)]) / 127.5f - 1.0f;
  return out;
}

void write_png(const ImageTensor& image, const std::filesystem::path& path) {
  const Shape& s = image.shape();
  if (s.n != 1 || (s.c != 3 && s.c != 1)) {
    throw ImageIoError("write_png expects (1, 3, H, W) or (1, 1, H, W), got " + s.str());
  }
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw ImageIoError("cannot write image " + path.string());
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warning_fn);
  if (!png) throw ImageIoError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_write_struct(p, i); }
  } guard{&png, &info};

  std::vector<unsigned char> pixels(std::size_t(s.h * s.w * 3));
  for (Index y = 0; y < s.h; ++y)
    for (Index x = 0; x < s.w; ++x)
      for (Index c = 0; c < 3; ++c) {
        const float v = std::clamp(image(0, s.c == 3 ? c : 0, y, x), -1.0f, 1.0f);
        pixels[std::size_t((y * s.w + x) * 3 + c)] =
            static_cast<unsigned char>(std::lround((v + 1.0f) * 127.5f));
      }
  try {
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, png_uint_32(s.w), png_uint_32(s.h), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(std::size_t(s.h));
    for (Index y = 0; y < s.h; ++y) rows[std::size_t(y)] = pixels.data() + y * s.w * 3;
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
  } catch (const ImageIoError& e) {
    throw ImageIoError("failed to encode " + path.string() + ": " + e.what());
  }
  if (std::fflush(fp.get()) != 0) throw ImageIoError("I/O error writing " + path.string());
}

ImageTensor resize_bilinear(const ImageTensor& image, Index height, Index width) {
  const Shape& s = image.shape();
  if (height < 1 || width < 1) throw ShapeError("resize to an empty extent");
  if (s.h == height && s.w == width) return image;
  ImageTensor out(Shape{s.n, s.c, height, width});
  const double sy = double(s.h) / double(height);
  const double sx = double(s.w) / double(width);
  for (Index y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, double(s.h - 1));
    const Index y0 = Index(std::floor(fy));
    const Index y1 = std::min(y0 + 1, s.h - 1);
    const double ty = fy - double(y0);
    for (Index x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, double(s.w - 1));
      const Index x0 = Index(std::floor(fx));
      const Index x1 = std::min(x0 + 1, s.w - 1);
      const double tx = fx - double(x0);
      for (Index n = 0; n < s.n; ++n)
        for (Index c = 0; c < s.c; ++c) {
          const double top = (1 - tx) * image(n, c, y0, x0) + tx * image(n, c, y0, x1);
          const double bot = (1 - tx) * image(n, c, y1, x0) + tx * image(n, c, y1, x1);
          out(n, c, y, x) = float((1 - ty) * top + ty * bot);
        }
    }
  }
  return out;
}

ImageTensor center_crop_resize(const ImageTensor& image, Index size) {
  const Shape& s = image.shape();
  const Index side = std::min(s.h, s.w);
  const Index top = (s.h - side) / 2;
  const Index left = (s.w - side) / 2;
  ImageTensor crop = image;
  if (side != s.h || side != s.w) {
    crop = ImageTensor(Shape{s.n, s.c, side, side});
    for (Index n = 0; n < s.n; ++n)
      for (Index c = 0; c < s.c; ++c)
        for (Index y = 0; y < side; ++y)
          for (Index x = 0; x < side; ++x) crop(n, c, y, x) = image(n, c, y + top, x + left);
  }
  return resize_bilinear(crop, size, size);
}

std::optional<std::filesystem::path> image_cache_dir() {
  const char* env = std::getenv("AGESTYLE_CACHE");
  if (!env || !*env) return std::nullopt;
  return std::filesystem::path(env);
}

namespace {

std::filesystem::path cache_entry(const std::filesystem::path& dir, const std::filesystem::path& src,
                                  Index size) {
  namespace fs = std::filesystem;
  const auto canonical = fs::weakly_canonical(src).string();
  const auto bytes = fs::file_size(src);
  const auto mtime = fs::last_write_time(src).time_since_epoch().count();
  std::uint64_t h = fnv1a(canonical.data(), canonical.size());
  h = fnv1a(&bytes, sizeof(bytes), h);
  h = fnv1a(&mtime, sizeof(mtime), h);
  h = fnv1a(&size, sizeof(size), h);
  std::ostringstream name;
  name << std::hex << h << ".f32";
  return dir / name.str();
}

}  // namespace

ImageTensor load_image(const std::filesystem::path& path, Index size) {
  namespace fs = std::filesystem;
  const auto cache = image_cache_dir();
  fs::path entry;
  if (cache) {
    std::error_code ec;
    fs::create_directories(*cache, ec);
    if (!ec && fs::exists(path)) {
      entry = cache_entry(*cache, path, size);
      std::ifstream in(entry, std::ios::binary);
      if (in) {
        ImageTensor t(Shape{1, 3, size, size});
        in.read(reinterpret_cast<char*>(t.data()), std::streamsize(t.size() * sizeof(float)));
        if (in.gcount() == std::streamsize(t.size() * sizeof(float))) return t;
      }
    }
  }
  ImageTensor img = center_crop_resize(read_png(path), size);
  if (!entry.empty()) {
    // Write-then-rename so concurrent readers never see a partial entry.
    fs::path tmp = entry;
    tmp += ".tmp";
    std::ofstream out(tmp, std::ios::binary);
    out.write(reinterpret_cast<const char*>(img.data()),
              std::streamsize(img.size() * sizeof(float)));
    out.close();
    std::error_code ec;
    if (out) fs::rename(tmp, entry, ec);
  }
  return img;
}

}  // namespace agestyle
