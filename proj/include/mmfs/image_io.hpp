#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mmfs {

// Images inside the library are float tensors [N, 3, H, W] in [-1, 1].
// On disk they are 8-bit RGB, mapped linearly: v8 = round((v + 1) * 127.5).

// [3, H, W] or [1, 3, H, W] -> [H, W, 3] uint8 (values clamped first).
torch::Tensor to_uint8_hwc(const torch::Tensor& image);
// [H, W, 3] uint8 -> [1, 3, H, W] float in [-1, 1].
torch::Tensor from_uint8_hwc(const torch::Tensor& pixels);

std::vector<unsigned char> encode_png(const torch::Tensor& image);
void write_png(const std::filesystem::path& path, const torch::Tensor& image);

// Decodes PNG or JPEG bytes (detected by signature) to [1, 3, H, W].
// Undecodable input raises FormatError.
torch::Tensor decode_image(const std::vector<unsigned char>& bytes);
torch::Tensor read_image(const std::filesystem::path& path);

// Center-crops to a square, then bilinearly resizes to side x side.
torch::Tensor center_crop_resize(const torch::Tensor& images, int64_t side);

// Reads, crops and resizes in one go.
torch::Tensor load_image(const std::filesystem::path& path, int64_t side);

// Horizontal strip of images [N, 3, H, W] -> [1, 3, H, N * W].
torch::Tensor image_strip(const torch::Tensor& images);

} // namespace mmfs
