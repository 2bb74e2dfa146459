#pragma once

#include <filesystem>

#include "orbitkit/tensor.hpp"

namespace orbitkit {

/// 8-bit RGB PNG from an [H,W,3] image in [0,1] (values are clamped and rounded).
void write_png(const std::filesystem::path& path, const Tensor<float>& image);
/// [H,W,3] image in [0,1]. Gray, palette and alpha inputs are converted to RGB; alpha is dropped.
Tensor<float> read_png(const std::filesystem::path& path);

/// One PNG per frame of a [T,H,W,3] video: <stem>_000.png, <stem>_001.png, ...
void write_png_frames(const std::filesystem::path& dir, const std::string& stem, const Tensor<float>& video);

}  // namespace orbitkit
