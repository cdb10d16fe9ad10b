#pragma once

#include "rdd/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace rdd {

/// Binary PGM (P5). `pixels` is row-major H x W; maxval may be below 255.
void write_pgm(const std::filesystem::path& path, Index height, Index width, const std::vector<std::uint8_t>& pixels,
               int maxval = 255);
/// Reads a P5 file written by write_pgm.
std::vector<std::uint8_t> read_pgm(const std::filesystem::path& path, Index& height, Index& width, int& maxval);

/// [H, W] map in [0, 1] stored as round(255 * v).
void write_unit_map_pgm(const std::filesystem::path& path, const Tensor& map);
/// [H, W] class ids stored raw with maxval = num_classes - 1.
void write_label_pgm(const std::filesystem::path& path, const LabelMap& labels, int num_classes);
/// [3, H, W] image in [0, 1] as 8-bit RGB PNG.
void write_rgb_png(const std::filesystem::path& path, const Tensor& image);
/// [H, W] map as CSV, one image row per line.
void write_map_csv(const std::filesystem::path& path, const Tensor& map);

}  // namespace rdd
