// Copyright 2026 The sf-lens Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "sflens/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>

#include "sflens/error.hpp"

namespace sflens {

double Image::Mean() const {
  if (pixels_.empty()) return 0.0;
  const double sum = std::accumulate(pixels_.begin(), pixels_.end(), 0.0);
  return sum / static_cast<double>(pixels_.size());
}

namespace {

struct ReadCursor {
  const std::vector<std::uint8_t>* bytes;
  std::size_t offset;
};

void ReadFromMemory(png_structp png, png_bytep out, png_size_t length) {
  auto* cursor = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (cursor->offset + length > cursor->bytes->size()) {
    png_error(png, "truncated PNG data");
  }
  std::memcpy(out, cursor->bytes->data() + cursor->offset, length);
  cursor->offset += length;
}

void WriteToMemory(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + length);
}

void FlushNothing(png_structp) {}

[[noreturn]] void PngError(png_structp, png_const_charp msg) {
  throw Error(Errc::kUnsupportedImage, std::string("png: ") + msg);
}

void PngWarning(png_structp, png_const_charp) {}

}  // namespace

Image DecodePng(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) {
    throw Error(Errc::kUnsupportedImage, "not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, PngError, PngWarning);
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* png;
    png_infop* info;
    ~Guard() { png_destroy_read_struct(png, info, nullptr); }
  } guard{&png, &info};

  ReadCursor cursor{&bytes, 0};
  png_set_read_fn(png, &cursor, ReadFromMemory);
  png_read_info(png, info);

  const auto color = png_get_color_type(png, info);
  const auto depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (depth == 16) png_set_swap(png);  // little-endian 16-bit samples
  png_read_update_info(png, info);

  const std::size_t width = png_get_image_width(png, info);
  const std::size_t height = png_get_image_height(png, info);
  const std::size_t channels = png_get_channels(png, info);
  const int out_depth = png_get_bit_depth(png, info);
  const std::size_t row_bytes = png_get_rowbytes(png, info);

  std::vector<std::uint8_t> raw(row_bytes * height);
  std::vector<png_bytep> rows(height);
  for (std::size_t y = 0; y < height; ++y) rows[y] = raw.data() + y * row_bytes;
  png_read_image(png, rows.data());

  Image img(height, width, channels);
  auto& px = img.pixels();
  if (out_depth == 16) {
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t i = 0; i < width * channels; ++i) {
        std::uint16_t v;
        std::memcpy(&v, rows[y] + 2 * i, 2);
        px[y * width * channels + i] = static_cast<float>(v) / 65535.0f;
      }
    }
  } else {
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t i = 0; i < width * channels; ++i) {
        px[y * width * channels + i] = static_cast<float>(rows[y][i]) / 255.0f;
      }
    }
  }
  return img;
}

Image ReadPng(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::kMissingFile, path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), {});
  return DecodePng(bytes);
}

std::vector<std::uint8_t> EncodePng(const Image& image) {
  int color = 0;
  switch (image.channels()) {
    case 1: color = PNG_COLOR_TYPE_GRAY; break;
    case 2: color = PNG_COLOR_TYPE_GRAY_ALPHA; break;
    case 3: color = PNG_COLOR_TYPE_RGB; break;
    case 4: color = PNG_COLOR_TYPE_RGBA; break;
    default:
      throw Error(Errc::kUnsupportedImage,
                  std::to_string(image.channels()) + " channels cannot be encoded");
  }
  if (image.width() == 0 || image.height() == 0) {
    throw Error(Errc::kUnsupportedImage, "empty image");
  }
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, PngError, PngWarning);
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* png;
    png_infop* info;
    ~Guard() { png_destroy_write_struct(png, info); }
  } guard{&png, &info};

  std::vector<std::uint8_t> out;
  png_set_write_fn(png, &out, WriteToMemory, FlushNothing);
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width()),
               static_cast<png_uint_32>(image.height()), 8, color, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = image.width() * image.channels();
  std::vector<std::uint8_t> row(stride);
  for (std::size_t y = 0; y < image.height(); ++y) {
    for (std::size_t i = 0; i < stride; ++i) {
      const float v = std::clamp(image.pixels()[y * stride + i], 0.0f, 1.0f);
      row[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  return out;
}

void WritePng(const Image& image, const std::filesystem::path& path) {
  const auto bytes = EncodePng(image);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::kIoError, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace sflens
