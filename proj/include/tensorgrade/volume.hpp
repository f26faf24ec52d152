#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tensorgrade {

using Dims = std::array<std::size_t, 3>;
using Spacing = std::array<double, 3>;
using Index3 = std::array<std::size_t, 3>;

/// Inclusive voxel box [lo, hi] on each axis.
struct BoundingBox {
  Index3 lo{};
  Index3 hi{};

  Dims extent() const { return {hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1}; }
  bool contains(const Index3& p) const {
    for (int a = 0; a < 3; ++a)
      if (p[a] < lo[a] || p[a] > hi[a]) return false;
    return true;
  }
  bool operator==(const BoundingBox&) const = default;
};

/// Dense 3-D grid with `channels` values per voxel, x-fastest, stored as double.
///
/// Construction validates the length and finiteness invariants. The payload is
/// never mutated afterwards, so a Volume can be shared read-only between workers.
class Volume {
public:
  Volume() = default;
  Volume(Dims dims, Spacing spacing, std::size_t channels, std::vector<double> data);

  /// All-zero volume.
  static Volume zeros(Dims dims, Spacing spacing, std::size_t channels);

  const Dims& dims() const { return dims_; }
  const Spacing& spacing() const { return spacing_; }
  std::size_t channels() const { return channels_; }
  std::size_t voxel_count() const { return dims_[0] * dims_[1] * dims_[2]; }
  std::span<const double> data() const { return data_; }

  std::size_t linear_index(std::size_t x, std::size_t y, std::size_t z) const {
    return x + dims_[0] * (y + dims_[1] * z);
  }
  Index3 voxel_of(std::size_t linear) const {
    return {linear % dims_[0], (linear / dims_[0]) % dims_[1], linear / (dims_[0] * dims_[1])};
  }

  double at(std::size_t x, std::size_t y, std::size_t z, std::size_t c = 0) const {
    return data_[linear_index(x, y, z) * channels_ + c];
  }
  /// The `channels()` values of one voxel.
  std::span<const double> voxel(std::size_t linear) const {
    return std::span<const double>(data_).subspan(linear * channels_, channels_);
  }

  bool same_grid(const Volume& other) const { return dims_ == other.dims_; }

private:
  Dims dims_{0, 0, 0};
  Spacing spacing_{1.0, 1.0, 1.0};
  std::size_t channels_ = 0;
  std::vector<double> data_;
};

/// Binary occupancy grid. The bounding box is recomputed on construction and is
/// always tight; it is empty when no voxel is set.
class RoiMask {
public:
  RoiMask() = default;
  RoiMask(Dims dims, std::vector<std::uint8_t> occupancy);

  /// Nonzero voxels of a scalar volume.
  static RoiMask from_volume(const Volume& v);
  static RoiMask full(Dims dims);

  const Dims& dims() const { return dims_; }
  std::span<const std::uint8_t> occupancy() const { return bits_; }
  bool contains(std::size_t linear) const { return bits_[linear] != 0; }
  std::size_t count() const { return count_; }
  const std::optional<BoundingBox>& bbox() const { return bbox_; }

  /// Linear indices of set voxels in ascending (x-fastest) order.
  std::vector<std::size_t> voxels() const;

  Volume to_volume(Spacing spacing = {1.0, 1.0, 1.0}) const;

  bool operator==(const RoiMask& o) const { return dims_ == o.dims_ && bits_ == o.bits_; }

private:
  Dims dims_{0, 0, 0};
  std::vector<std::uint8_t> bits_;
  std::size_t count_ = 0;
  std::optional<BoundingBox> bbox_;
};

/// Label convention of the template library: manifest disease -1, control +1,
/// unlabeled query 0.
enum class Label : int { Disease = -1, Unlabeled = 0, Control = 1 };

struct SubjectMeta {
  std::string subject_id;
  std::string scan_id;
  double age = 0.0;
  Label label = Label::Unlabeled;

  /// Throws std::invalid_argument on age <= 0 or non-finite age.
  void validate() const;
};

Label label_from_int(int v);
inline int to_int(Label l) { return static_cast<int>(l); }

/// Voxelwise OR of equally sized masks.
RoiMask union_bbox(std::span<const RoiMask> masks);

/// Sub-volume covering `box`; spacing is kept.
Volume crop(const Volume& v, const BoundingBox& box);
RoiMask crop(const RoiMask& m, const BoundingBox& box);

class VolumeError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

} // namespace tensorgrade
