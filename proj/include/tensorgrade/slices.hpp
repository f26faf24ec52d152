#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tensorgrade/volume.hpp"

namespace tensorgrade {

enum class Axis { X = 0, Y = 1, Z = 2 };

Axis axis_from_string(const std::string& s);

/// 2-D cut of a scalar volume. Rows run along the second remaining axis,
/// columns along the first (for Z: row = y, column = x).
struct Slice {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> values; ///< row-major
};

Slice extract_slice(const Volume& v, Axis axis, std::size_t index);

/// Grey level round(255 |v| / max_abs), 0 everywhere when max_abs is 0.
std::vector<std::uint8_t> to_gray(const Slice& s, double max_abs);

void write_pgm(const std::filesystem::path& path, std::size_t width, std::size_t height,
               std::span<const std::uint8_t> gray);

/// For each index writes `<stem>_<axis><index>.pgm` (magnitude), `.ppm`
/// (red positive / blue negative overlay) and `.csv` (raw values). Intensities
/// are scaled by the maximum |value| of the whole volume so slices compare.
/// Returns the written paths.
std::vector<std::filesystem::path> export_slices(const Volume& v, Axis axis, std::span<const std::size_t> indices,
                                                 const std::filesystem::path& out_dir, const std::string& stem);

} // namespace tensorgrade
