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

#pragma once

#include "agestyle/tensor.hpp"

#include <filesystem>
#include <optional>
#include <stdexcept>

namespace agestyle {

/// (1, 3, H, W) image with values in [-1, 1].
using ImageTensor = Tensor<float>;

class ImageIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Decodes an 8-bit PNG (gray, palette and alpha are converted to RGB).
ImageTensor read_png(const std::filesystem::path& path);

/// Encodes as 8-bit RGB; values are clamped to [-1, 1].
void write_png(const ImageTensor& image, const std::filesystem::path& path);

/// Bilinear resampling of every channel plane.
ImageTensor resize_bilinear(const ImageTensor& image, Index height, Index width);

/// Crops the largest centered square, then resizes it to size x size.
ImageTensor center_crop_resize(const ImageTensor& image, Index size);

/// Reads a PNG and brings it to size x size. When the AGESTYLE_CACHE
/// environment variable names a directory, decoded tensors are cached there
/// keyed by path, file size, modification time and target size.
ImageTensor load_image(const std::filesystem::path& path, Index size);

/// Cache directory from AGESTYLE_CACHE, if set and non-empty.
std::optional<std::filesystem::path> image_cache_dir();

}  // namespace agestyle
