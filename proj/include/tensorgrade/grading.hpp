#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tensorgrade/volume.hpp"

namespace tensorgrade {

/// Floor for the per-voxel bandwidth h_i = min_t d(P_s, P_t). An exact match
/// (d = 0) would otherwise divide by zero; with the floor it takes all weight.
inline constexpr double kBandwidthFloor = 1e-12;

inline constexpr std::size_t kDefaultRadius = 1;
inline constexpr std::size_t kDefaultLeaveOut = 10;

class GradingError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// How per-voxel log-Euclidean distances are combined over a patch.
///  - PerVoxel: sum over patch voxels of ||log Phi_s(n) - log Phi_t(n)||_F.
///  - WholePatch: Frobenius norm of the concatenated patch difference.
enum class DistanceMode { PerVoxel, WholePatch };

DistanceMode distance_mode_from_string(const std::string& s);
std::string to_string(DistanceMode m);

struct TemplateEntry {
  std::shared_ptr<const Volume> log_field;
  SubjectMeta meta;
};

/// Labeled log-tensor fields a subject is graded against. All fields share the
/// ROI grid; labels are Control (+1) or Disease (-1); (subject_id, scan_id)
/// pairs are unique. Entries are read-only and may be shared between libraries.
class TemplateLibrary {
public:
  TemplateLibrary(std::vector<TemplateEntry> entries, RoiMask roi);

  const std::vector<TemplateEntry>& entries() const { return entries_; }
  const RoiMask& roi() const { return roi_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t count(Label label) const;

  /// Library without the entries at the given positions (order preserved).
  TemplateLibrary without(std::span<const std::size_t> positions) const;

  /// Concatenated "subject/scan" identities in order; equal keys mean equal
  /// libraries.
  std::string key() const;

private:
  std::vector<TemplateEntry> entries_;
  RoiMask roi_;
};

/// Age-matched library for `query`: every entry of `query.subject_id` is
/// dropped, then the `n_per_class` closest-in-age candidates of each class are
/// kept (ties: subject_id, then scan_id). The kept entries of each class are
/// sorted by age and the two classes alternate Control/Disease, so contiguous
/// leave-out groups stay balanced and the order does not depend on the query.
/// Throws GradingError if either class has fewer than `n_per_class` eligible
/// candidates.
TemplateLibrary build_library(std::span<const TemplateEntry> pool, const SubjectMeta& query, std::size_t n_per_class,
                              const RoiMask& roi);

/// Every labeled pool entry not belonging to `query.subject_id`, in pool order.
TemplateLibrary library_from_pool(std::span<const TemplateEntry> pool, const SubjectMeta& query, const RoiMask& roi);

/// d(P_s, P_t) over the cube of side 2*radius+1 centred at `center`, clipped to
/// the volume bounds. Voxels are visited z, y, x ascending.
double patch_distance(const Volume& s, const Volume& t, const Index3& center, std::size_t radius,
                      DistanceMode mode = DistanceMode::PerVoxel);

/// Similarity-weighted vote: sum_t w_t y_t / sum_t w_t with
/// w_t = exp(-d_t / h), h = max(min_t d_t, kBandwidthFloor).
double grade_from_distances(std::span<const double> distances, std::span<const double> labels);

double grade_voxel(const Volume& subject, const TemplateLibrary& lib, const Index3& voxel, std::size_t radius,
                   DistanceMode mode = DistanceMode::PerVoxel);

/// Per-voxel grades on the ROI grid. Out-of-mask voxels hold NaN in memory
/// and are written as 0 next to the mask on disk.
class GradingMap {
public:
  GradingMap(RoiMask mask, Spacing spacing, std::vector<double> values);

  const RoiMask& mask() const { return mask_; }
  const Dims& dims() const { return mask_.dims(); }
  const Spacing& spacing() const { return spacing_; }
  std::span<const double> values() const { return values_; }
  double at(std::size_t linear) const { return values_[linear]; }

  /// Values at mask voxels in ascending linear order.
  std::vector<double> in_mask() const;
  /// Mean over mask voxels.
  double mean() const;

  /// Scalar volume with zeros outside the mask.
  Volume to_volume() const;
  static GradingMap from_volume(const Volume& v, const RoiMask& mask);

private:
  RoiMask mask_;
  Spacing spacing_;
  std::vector<double> values_;
};

GradingMap grade_map(const Volume& subject, const TemplateLibrary& lib, std::size_t radius,
                     DistanceMode mode = DistanceMode::PerVoxel, unsigned threads = 1);

/// Leave-k-out grading of the library itself. Templates are split into
/// contiguous groups of `k` in library order; each template is graded against
/// the library minus its own group. Throws GradingError unless 1 <= k < size.
std::vector<GradingMap> grade_templates(const TemplateLibrary& lib, std::size_t radius, std::size_t k,
                                        DistanceMode mode = DistanceMode::PerVoxel, unsigned threads = 1);

} // namespace tensorgrade
