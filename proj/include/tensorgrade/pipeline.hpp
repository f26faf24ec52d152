#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tensorgrade/classify.hpp"
#include "tensorgrade/grading.hpp"
#include "tensorgrade/manifest.hpp"
#include "tensorgrade/phantom.hpp"
#include "tensorgrade/selection.hpp"
#include "tensorgrade/tensor.hpp"

namespace tensorgrade {

inline constexpr std::size_t kDefaultPerClass = 50;

/// Everything a pipeline run depends on besides its input files.
struct RunConfig {
  std::filesystem::path manifest;           ///< dataset manifest; empty when `phantom` is set
  std::vector<std::filesystem::path> roi;   ///< ROI masks; default: the manifest's list
  std::filesystem::path out_dir = "out";
  std::optional<PhantomConfig> phantom;     ///< generate the dataset first
  std::size_t radius = kDefaultRadius;
  std::vector<std::size_t> radii;           ///< patch-size comparison; empty: just `radius`
  std::size_t n_per_class = kDefaultPerClass;
  double rho = kDefaultRho;
  double lambda = kDefaultLambda;
  double c = kDefaultC;
  std::size_t n_iter = kDefaultIterations;
  double test_fraction = kDefaultTestFraction;
  std::size_t leave_out = kDefaultLeaveOut;
  std::size_t folds = 0;
  DistanceMode distance_mode = DistanceMode::PerVoxel;
  DispSign disp_sign = DispSign::Minus;
  bool nonneg = false;
  std::uint64_t seed = 0;
  unsigned threads = 0;   ///< 0: all hardware threads
  bool cache = true;      ///< keep log-tensor fields under out_dir/cache
  std::vector<std::size_t> slices; ///< axial slices of the coefficient map to export

  /// Unknown keys are rejected so typos do not silently fall back to defaults.
  static RunConfig from_json(const nlohmann::json& j);
  nlohmann::ordered_json to_json() const;
  std::vector<std::size_t> radius_list() const;
};

/// Cropped log-tensor field of one manifest entry plus derived quantities.
struct SubjectData {
  ManifestEntry entry;
  std::shared_ptr<const Volume> log_field;
  double volume = 0.0;
  std::string content_hash;
};

struct RadiusResult {
  std::size_t radius = 0;
  FeatureTable features{{"grading", "volume"}, {}};
  EvaluationReport tensor, volume, combined;
  std::vector<CoefficientMap> coefficients; ///< one per distinct library, first-use order
  std::map<std::string, double> mean_grade; ///< subject_id -> mean in-mask grade
  std::map<std::string, double> literal_grade; ///< signed-denominator g_s, when defined
  /// Templates graded leave-k-out against their own library (first library
  /// that contains them): global grade and mean in-mask grade.
  std::map<std::string, double> template_grade;
  std::map<std::string, double> template_mean_grade;
};

struct PipelineResult {
  BoundingBox roi_box;
  RoiMask roi;
  TensorizeStats tensorize;
  std::size_t cache_hits = 0;
  std::vector<RadiusResult> radii;
  std::filesystem::path manifest_path;
};

/// 64-bit FNV-1a digest of a volume's on-disk bytes, hex encoded.
std::string content_hash(const std::filesystem::path& volume_path);

/// Tensorizes one displacement file, reusing `cache_dir/<key>` when present.
/// The log-tensor values are rounded to float32 either way so cached and fresh
/// runs agree bit for bit.
Volume tensorize_cached(const std::filesystem::path& displacement, DispSign sign, const BoundingBox& box,
                        const std::filesystem::path* cache_dir, TensorizeStats& stats, bool& hit,
                        std::string* hash = nullptr);

/// Full run: dataset, ROI, tensorization, per-query libraries, leave-k-out
/// template grading, elastic net, global grading and repeated CV, for every
/// radius in the config. Writes reports and a run.json provenance record
/// under `cfg.out_dir`.
PipelineResult run_pipeline(const RunConfig& cfg);

} // namespace tensorgrade
