#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "coopir/image.hpp"

namespace coopir {

// OPIMG1: "OPIMG1", u32 height, u32 width, u32 channels (little-endian), then
// height*width*channels float64 little-endian values, row-major interleaved.
std::string encode_image(const Image& img);
Image decode_image(std::string_view bytes);
void save_image(const Image& img, const std::filesystem::path& path);
Image load_image(const std::filesystem::path& path);

// Binary PPM (P6), 8-bit, q = floor(v*255 + 0.5). Grey images are replicated.
std::string encode_ppm(const Image& img);
void save_ppm(const Image& img, const std::filesystem::path& path);

// Name-keyed float64 arrays shared by the tool (OPPAR1) and policy (OPPOL1)
// checkpoints: 6-byte magic, u32 entry count, then per entry u32 name length,
// name bytes, u32 value count, float64 values. All integers little-endian.
using NamedArrays = std::vector<std::pair<std::string, std::vector<double>>>;
std::string encode_named_arrays(std::string_view magic, const NamedArrays& arrays);
NamedArrays decode_named_arrays(std::string_view magic, std::string_view bytes);

std::string read_file(const std::filesystem::path& path);
// Writes to "<path>.tmp" and renames over the target.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

}  // namespace coopir
