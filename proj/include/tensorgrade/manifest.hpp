#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tensorgrade/volume.hpp"

namespace tensorgrade {

/// One subject scan listed in a dataset or library manifest.
struct ManifestEntry {
  std::filesystem::path path; ///< volume file, relative paths resolve against the manifest directory
  SubjectMeta meta;
  std::string role = "template"; ///< "template" (eligible for libraries) or "query"
  std::string group;             ///< free-form class name, e.g. "cn", "pre", "manifest"
  std::optional<double> volume;  ///< structure volume in mm^3, when known
};

/// JSON manifest:
/// {
///   "roi": ["mask.json", ...],           // optional list of ROI mask volumes
///   "entries": [{"path", "subject_id", "scan_id", "age", "label",
///                "role", "group", "volume"}]
/// }
/// `label` is -1 (manifest disease), +1 (control) or 0 (unlabeled query).
struct Manifest {
  std::filesystem::path base_dir;
  std::vector<std::filesystem::path> roi;
  std::vector<ManifestEntry> entries;

  static Manifest read(const std::filesystem::path& path);
  void write(const std::filesystem::path& path) const;

  /// `p` resolved against `base_dir` unless absolute.
  std::filesystem::path resolve(const std::filesystem::path& p) const;
};

} // namespace tensorgrade
