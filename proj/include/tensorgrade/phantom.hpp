#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tensorgrade/manifest.hpp"
#include "tensorgrade/volume.hpp"

namespace tensorgrade {

enum class PhantomClass { Control, PreManifest, Manifest };

std::string to_string(PhantomClass c);

struct AgeRange {
  double lo = 0.0;
  double hi = 0.0;
};

/// Synthetic two-population deformation dataset. Disease is a radial
/// contraction toward `atrophy_center` with Gaussian falloff; every subject
/// also carries smooth random displacement noise.
struct PhantomConfig {
  Dims dims{32, 32, 32};
  Spacing spacing{1.0, 1.0, 1.0};
  std::optional<std::array<double, 3>> atrophy_center; ///< voxel coordinates; default grid centre
  double atrophy_radius_mm = 4.0;
  double atrophy_strength = 0.18; ///< peak contraction of the manifest class, J = (1 - s) I at the centre
  double pre_fraction = 0.5;     ///< pre-manifest strength as a fraction of atrophy_strength
  double noise_amplitude_mm = 0.24;
  double noise_correlation_mm = 0.8;
  double volume_variability = 0.02; ///< relative SD of the natural structure-volume spread
  double roi_radius_factor = 2.0;   ///< ROI sphere radius in atrophy radii
  std::size_t n_control = 60;
  std::size_t n_pre = 30;
  std::size_t n_manifest = 30;
  std::optional<std::size_t> n_control_templates; ///< default: half of the controls
  AgeRange age_control{30.0, 70.0};
  AgeRange age_pre{25.0, 60.0};
  AgeRange age_manifest{45.0, 70.0};
  std::uint64_t seed = 1;

  /// Throws std::invalid_argument when an invariant is violated.
  void validate() const;
  std::array<double, 3> center_voxel() const;
  std::size_t control_templates() const;
  double class_strength(PhantomClass c) const;

  static PhantomConfig from_json(const nlohmann::json& j);
  nlohmann::ordered_json to_json() const;
};

struct PhantomSubject {
  Volume displacement;
  SubjectMeta meta;
  PhantomClass cls = PhantomClass::Control;
};

/// Displacement u (convention: x maps to x - u) for one subject drawn from
/// random stream `stream` of the config seed.
PhantomSubject generate_subject(const PhantomConfig& cfg, PhantomClass cls, std::uint64_t stream,
                                const std::string& subject_id);

/// Noise-free atrophy displacement for a given strength.
Volume atrophy_field(const PhantomConfig& cfg, double strength);

/// Isotropic band-limited noise: white Gaussian noise low-passed in the
/// frequency domain with a Gaussian of `correlation_mm`, scaled to RMS
/// `amplitude_mm` per component.
Volume smooth_noise_field(const PhantomConfig& cfg, std::uint64_t stream);

/// Sphere of roi_radius_factor * atrophy_radius_mm around the atrophy centre.
RoiMask phantom_roi(const PhantomConfig& cfg);

/// Sum over `mask` of det J times the voxel volume (mm^3).
double structure_volume(const Volume& displacement, const RoiMask& mask);

struct PhantomDataset {
  Manifest manifest;
  std::filesystem::path manifest_path;
};

/// Writes every subject (raw format), the ROI mask, a manifest and the config
/// echo under `out_dir`. Subjects are ordered controls, pre-manifest,
/// manifest; the first control_templates() controls and all manifest subjects
/// are templates, the rest are queries.
PhantomDataset generate_population(const PhantomConfig& cfg, const std::filesystem::path& out_dir,
                                   unsigned threads = 1);

} // namespace tensorgrade
