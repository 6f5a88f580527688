#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

namespace idgan {

// Pixel convention: tensors hold C×H×W floats in [-1, 1]; files hold 8-bit
// RGB with p = round(255 * (v + 1) / 2).

/// Quantizes a C×H×W image in [-1, 1] to interleaved 8-bit H×W×C bytes.
std::vector<std::uint8_t> quantize_image(const torch::Tensor& image);

/// Inverse of quantize_image for 8-bit H×W×C bytes.
torch::Tensor dequantize_image(const std::vector<std::uint8_t>& bytes, int64_t height,
                               int64_t width, int64_t channels);

/// Writes a C×H×W image (C = 1 or 3) as an 8-bit PNG. Throws Error on failure.
void write_png(const torch::Tensor& image, const std::filesystem::path& path);

/// Decodes an image file, center-crops it to a square, resizes it to
/// resolution×resolution and maps it to a 3×R×R tensor in [-1, 1].
/// Returns nullopt when the file cannot be decoded.
std::optional<torch::Tensor> read_image(const std::filesystem::path& path, int64_t resolution);

/// True for file extensions the folder loader accepts (.png, .jpg, .jpeg).
bool is_image_file(const std::filesystem::path& path);

}  // namespace idgan
