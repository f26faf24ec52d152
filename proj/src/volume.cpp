#include "tensorgrade/volume.hpp"

#include <algorithm>
#include <cmath>

namespace tensorgrade {

Volume::Volume(Dims dims, Spacing spacing, std::size_t channels, std::vector<double> data)
    : dims_(dims), spacing_(spacing), channels_(channels), data_(std::move(data)) {
  if (channels_ == 0) throw VolumeError("volume: channels must be positive");
  for (int a = 0; a < 3; ++a) {
    if (dims_[a] == 0) throw VolumeError("volume: dims must be positive");
    if (!(spacing_[a] > 0.0) || !std::isfinite(spacing_[a]))
      throw VolumeError("volume: spacing must be finite and strictly positive");
  }
  if (data_.size() != voxel_count() * channels_)
    throw VolumeError("volume: data length " + std::to_string(data_.size()) + " != dims*channels " +
                      std::to_string(voxel_count() * channels_));
  for (double v : data_)
    if (!std::isfinite(v)) throw VolumeError("volume: non-finite value in data");
}

Volume Volume::zeros(Dims dims, Spacing spacing, std::size_t channels) {
  return Volume(dims, spacing, channels,
                std::vector<double>(dims[0] * dims[1] * dims[2] * channels, 0.0));
}

RoiMask::RoiMask(Dims dims, std::vector<std::uint8_t> occupancy) : dims_(dims), bits_(std::move(occupancy)) {
  const std::size_t n = dims_[0] * dims_[1] * dims_[2];
  if (bits_.size() != n) throw VolumeError("mask: occupancy length does not match dims");
  BoundingBox box{{dims_[0], dims_[1], dims_[2]}, {0, 0, 0}};
  for (std::size_t z = 0, i = 0; z < dims_[2]; ++z)
    for (std::size_t y = 0; y < dims_[1]; ++y)
      for (std::size_t x = 0; x < dims_[0]; ++x, ++i) {
        if (!bits_[i]) continue;
        bits_[i] = 1;
        ++count_;
        const Index3 p{x, y, z};
        for (int a = 0; a < 3; ++a) {
          box.lo[a] = std::min(box.lo[a], p[a]);
          box.hi[a] = std::max(box.hi[a], p[a]);
        }
      }
  if (count_ > 0) bbox_ = box;
}

RoiMask RoiMask::from_volume(const Volume& v) {
  if (v.channels() != 1) throw VolumeError("mask: source volume must be scalar");
  std::vector<std::uint8_t> bits(v.voxel_count());
  auto d = v.data();
  for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = d[i] != 0.0 ? 1 : 0;
  return RoiMask(v.dims(), std::move(bits));
}

RoiMask RoiMask::full(Dims dims) {
  return RoiMask(dims, std::vector<std::uint8_t>(dims[0] * dims[1] * dims[2], 1));
}

std::vector<std::size_t> RoiMask::voxels() const {
  std::vector<std::size_t> out;
  out.reserve(count_);
  for (std::size_t i = 0; i < bits_.size(); ++i)
    if (bits_[i]) out.push_back(i);
  return out;
}

Volume RoiMask::to_volume(Spacing spacing) const {
  std::vector<double> d(bits_.begin(), bits_.end());
  return Volume(dims_, spacing, 1, std::move(d));
}

void SubjectMeta::validate() const {
  if (!(age > 0.0) || !std::isfinite(age))
    throw std::invalid_argument("subject " + subject_id + ": age must be positive");
}

Label label_from_int(int v) {
  switch (v) {
  case -1: return Label::Disease;
  case 0: return Label::Unlabeled;
  case 1: return Label::Control;
  default: throw std::invalid_argument("label must be -1, 0 or +1, got " + std::to_string(v));
  }
}

RoiMask union_bbox(std::span<const RoiMask> masks) {
  if (masks.empty()) throw VolumeError("union_bbox: empty mask list");
  const Dims dims = masks.front().dims();
  std::vector<std::uint8_t> bits(dims[0] * dims[1] * dims[2], 0);
  for (const auto& m : masks) {
    if (m.dims() != dims) throw VolumeError("union_bbox: mask dims differ");
    auto occ = m.occupancy();
    for (std::size_t i = 0; i < bits.size(); ++i) bits[i] |= occ[i];
  }
  return RoiMask(dims, std::move(bits));
}

namespace {

void check_box(const Dims& dims, const BoundingBox& box) {
  for (int a = 0; a < 3; ++a)
    if (box.lo[a] > box.hi[a] || box.hi[a] >= dims[a])
      throw VolumeError("crop: box out of range on axis " + std::to_string(a));
}

} // namespace

Volume crop(const Volume& v, const BoundingBox& box) {
  check_box(v.dims(), box);
  const Dims ext = box.extent();
  const std::size_t nc = v.channels();
  std::vector<double> out;
  out.reserve(ext[0] * ext[1] * ext[2] * nc);
  auto src = v.data();
  for (std::size_t z = box.lo[2]; z <= box.hi[2]; ++z)
    for (std::size_t y = box.lo[1]; y <= box.hi[1]; ++y) {
      const std::size_t row = v.linear_index(box.lo[0], y, z) * nc;
      out.insert(out.end(), src.begin() + row, src.begin() + row + ext[0] * nc);
    }
  return Volume(ext, v.spacing(), nc, std::move(out));
}

RoiMask crop(const RoiMask& m, const BoundingBox& box) {
  check_box(m.dims(), box);
  const Dims ext = box.extent();
  const Dims& d = m.dims();
  std::vector<std::uint8_t> out;
  out.reserve(ext[0] * ext[1] * ext[2]);
  auto src = m.occupancy();
  for (std::size_t z = box.lo[2]; z <= box.hi[2]; ++z)
    for (std::size_t y = box.lo[1]; y <= box.hi[1]; ++y) {
      const std::size_t row = box.lo[0] + d[0] * (y + d[1] * z);
      out.insert(out.end(), src.begin() + row, src.begin() + row + ext[0]);
    }
  return RoiMask(ext, std::move(out));
}

} // namespace tensorgrade
