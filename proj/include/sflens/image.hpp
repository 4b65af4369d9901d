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

#ifndef SFLENS_IMAGE_HPP_
#define SFLENS_IMAGE_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace sflens {

/// Interleaved H x W x C float image with values in [0, 1].
class Image {
 public:
  Image() = default;
  Image(std::size_t height, std::size_t width, std::size_t channels, float fill = 0.0f)
      : height_(height), width_(width), channels_(channels),
        pixels_(height * width * channels, fill) {}

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t channels() const { return channels_; }
  std::size_t size() const { return pixels_.size(); }

  float& at(std::size_t y, std::size_t x, std::size_t c) {
    return pixels_[(y * width_ + x) * channels_ + c];
  }
  float at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels_[(y * width_ + x) * channels_ + c];
  }

  std::vector<float>& pixels() { return pixels_; }
  const std::vector<float>& pixels() const { return pixels_; }

  double Mean() const;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t channels_ = 0;
  std::vector<float> pixels_;
};

/// Decodes 8- or 16-bit gray, gray+alpha, RGB or RGBA PNG data.
Image DecodePng(const std::vector<std::uint8_t>& bytes);
Image ReadPng(const std::filesystem::path& path);
/// 8-bit encoding; channel count selects gray/gray+alpha/RGB/RGBA.
std::vector<std::uint8_t> EncodePng(const Image& image);
void WritePng(const Image& image, const std::filesystem::path& path);

}  // namespace sflens

#endif  // SFLENS_IMAGE_HPP_
