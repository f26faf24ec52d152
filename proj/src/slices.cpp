#include "tensorgrade/slices.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace tensorgrade {

namespace fs = std::filesystem;

Axis axis_from_string(const std::string& s) {
  if (s == "x" || s == "X" || s == "sagittal") return Axis::X;
  if (s == "y" || s == "Y" || s == "coronal") return Axis::Y;
  if (s == "z" || s == "Z" || s == "axial") return Axis::Z;
  throw std::invalid_argument("unknown axis '" + s + "' (expected x, y or z)");
}

Slice extract_slice(const Volume& v, Axis axis, std::size_t index) {
  if (v.channels() != 1) throw std::invalid_argument("extract_slice: volume must be scalar");
  const Dims& d = v.dims();
  const int a = static_cast<int>(axis);
  if (index >= d[a])
    throw std::out_of_range("slice index " + std::to_string(index) + " out of range for axis of size " +
                            std::to_string(d[a]));
  const int u = a == 0 ? 1 : 0;
  const int w = a == 2 ? 1 : 2;
  Slice s;
  s.width = d[u];
  s.height = d[w];
  s.values.resize(s.width * s.height);
  for (std::size_t r = 0; r < s.height; ++r)
    for (std::size_t c = 0; c < s.width; ++c) {
      Index3 p{};
      p[a] = index;
      p[u] = c;
      p[w] = r;
      s.values[r * s.width + c] = v.at(p[0], p[1], p[2]);
    }
  return s;
}

std::vector<std::uint8_t> to_gray(const Slice& s, double max_abs) {
  std::vector<std::uint8_t> g(s.values.size(), 0);
  if (!(max_abs > 0.0)) return g;
  for (std::size_t i = 0; i < g.size(); ++i)
    g[i] = static_cast<std::uint8_t>(std::lround(std::min(1.0, std::abs(s.values[i]) / max_abs) * 255.0));
  return g;
}

void write_pgm(const fs::path& path, std::size_t width, std::size_t height, std::span<const std::uint8_t> gray) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  out << "P5\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(gray.data()), static_cast<std::streamsize>(gray.size()));
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

namespace {

void write_ppm_overlay(const fs::path& path, const Slice& s, std::span<const std::uint8_t> gray) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  out << "P6\n" << s.width << ' ' << s.height << "\n255\n";
  for (std::size_t i = 0; i < gray.size(); ++i) {
    const char px[3] = {static_cast<char>(s.values[i] > 0 ? gray[i] : 0), 0,
                        static_cast<char>(s.values[i] < 0 ? gray[i] : 0)};
    out.write(px, 3);
  }
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

void write_slice_csv(const fs::path& path, const Slice& s) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  char buf[40];
  for (std::size_t r = 0; r < s.height; ++r) {
    for (std::size_t c = 0; c < s.width; ++c) {
      std::snprintf(buf, sizeof buf, "%.9g", s.values[r * s.width + c]);
      if (c) out << ',';
      out << buf;
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

} // namespace

std::vector<fs::path> export_slices(const Volume& v, Axis axis, std::span<const std::size_t> indices,
                                    const fs::path& out_dir, const std::string& stem) {
  if (v.channels() != 1) throw std::invalid_argument("export_slices: volume must be scalar");
  const int a = static_cast<int>(axis);
  for (auto idx : indices)
    if (idx >= v.dims()[a])
      throw std::out_of_range("slice index " + std::to_string(idx) + " out of range for axis of size " +
                              std::to_string(v.dims()[a]));
  double max_abs = 0.0;
  for (double x : v.data()) max_abs = std::max(max_abs, std::abs(x));
  fs::create_directories(out_dir);
  const char axis_name = "xyz"[a];
  std::vector<fs::path> written;
  for (auto idx : indices) {
    const Slice s = extract_slice(v, axis, idx);
    const auto gray = to_gray(s, max_abs);
    const std::string base = stem + "_" + axis_name + std::to_string(idx);
    written.push_back(out_dir / (base + ".pgm"));
    write_pgm(written.back(), s.width, s.height, gray);
    written.push_back(out_dir / (base + ".ppm"));
    write_ppm_overlay(written.back(), s, gray);
    written.push_back(out_dir / (base + ".csv"));
    write_slice_csv(written.back(), s);
  }
  return written;
}

} // namespace tensorgrade
