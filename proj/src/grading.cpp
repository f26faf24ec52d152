#include "tensorgrade/grading.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <utility>

#include "tensorgrade/parallel.hpp"
#include "tensorgrade/tensor.hpp"

namespace tensorgrade {

DistanceMode distance_mode_from_string(const std::string& s) {
  if (s == "per-voxel") return DistanceMode::PerVoxel;
  if (s == "whole-patch") return DistanceMode::WholePatch;
  throw GradingError("unknown distance mode '" + s + "' (expected per-voxel or whole-patch)");
}

std::string to_string(DistanceMode m) { return m == DistanceMode::PerVoxel ? "per-voxel" : "whole-patch"; }

TemplateLibrary::TemplateLibrary(std::vector<TemplateEntry> entries, RoiMask roi)
    : entries_(std::move(entries)), roi_(std::move(roi)) {
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& e : entries_) {
    if (!e.log_field) throw GradingError("library: entry " + e.meta.subject_id + " has no field");
    if (e.meta.label != Label::Control && e.meta.label != Label::Disease)
      throw GradingError("library: entry " + e.meta.subject_id + "/" + e.meta.scan_id + " must be labeled +1 or -1");
    if (e.log_field->channels() != 6)
      throw GradingError("library: entry " + e.meta.subject_id + " is not a 6-channel log-tensor field");
    if (e.log_field->dims() != roi_.dims())
      throw GradingError("library: entry " + e.meta.subject_id + " does not match the ROI grid");
    if (!seen.emplace(e.meta.subject_id, e.meta.scan_id).second)
      throw GradingError("library: duplicate entry " + e.meta.subject_id + "/" + e.meta.scan_id);
  }
}

std::size_t TemplateLibrary::count(Label label) const {
  return static_cast<std::size_t>(
      std::count_if(entries_.begin(), entries_.end(), [&](const TemplateEntry& e) { return e.meta.label == label; }));
}

TemplateLibrary TemplateLibrary::without(std::span<const std::size_t> positions) const {
  std::vector<bool> drop(entries_.size(), false);
  for (auto p : positions) {
    if (p >= entries_.size()) throw GradingError("library: position out of range");
    drop[p] = true;
  }
  std::vector<TemplateEntry> kept;
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (!drop[i]) kept.push_back(entries_[i]);
  return TemplateLibrary(std::move(kept), roi_);
}

std::string TemplateLibrary::key() const {
  std::string k;
  for (const auto& e : entries_) {
    k += e.meta.subject_id;
    k += '/';
    k += e.meta.scan_id;
    k += ';';
  }
  return k;
}

TemplateLibrary build_library(std::span<const TemplateEntry> pool, const SubjectMeta& query, std::size_t n_per_class,
                              const RoiMask& roi) {
  std::vector<const TemplateEntry*> classes[2];
  for (const auto& e : pool) {
    if (e.meta.subject_id == query.subject_id) continue;
    if (e.meta.label == Label::Control)
      classes[0].push_back(&e);
    else if (e.meta.label == Label::Disease)
      classes[1].push_back(&e);
  }
  for (int c = 0; c < 2; ++c) {
    if (classes[c].size() < n_per_class)
      throw GradingError(std::string("build_library: only ") + std::to_string(classes[c].size()) + " eligible " +
                         (c == 0 ? "control" : "disease") + " templates for subject " + query.subject_id + ", need " +
                         std::to_string(n_per_class));
    auto& v = classes[c];
    std::stable_sort(v.begin(), v.end(), [&](const TemplateEntry* a, const TemplateEntry* b) {
      const double da = std::abs(a->meta.age - query.age), db = std::abs(b->meta.age - query.age);
      if (da != db) return da < db;
      if (a->meta.subject_id != b->meta.subject_id) return a->meta.subject_id < b->meta.subject_id;
      return a->meta.scan_id < b->meta.scan_id;
    });
    // Keep the selection, then order it by age alone so that queries selecting
    // the same templates share one library.
    v.resize(n_per_class);
    std::sort(v.begin(), v.end(), [](const TemplateEntry* a, const TemplateEntry* b) {
      if (a->meta.age != b->meta.age) return a->meta.age < b->meta.age;
      if (a->meta.subject_id != b->meta.subject_id) return a->meta.subject_id < b->meta.subject_id;
      return a->meta.scan_id < b->meta.scan_id;
    });
  }
  std::vector<TemplateEntry> chosen;
  chosen.reserve(2 * n_per_class);
  for (std::size_t i = 0; i < n_per_class; ++i) {
    chosen.push_back(*classes[0][i]);
    chosen.push_back(*classes[1][i]);
  }
  return TemplateLibrary(std::move(chosen), roi);
}

TemplateLibrary library_from_pool(std::span<const TemplateEntry> pool, const SubjectMeta& query, const RoiMask& roi) {
  std::vector<TemplateEntry> chosen;
  for (const auto& e : pool)
    if (e.meta.subject_id != query.subject_id && e.meta.label != Label::Unlabeled) chosen.push_back(e);
  return TemplateLibrary(std::move(chosen), roi);
}

namespace {

struct PatchRange {
  std::size_t lo[3];
  std::size_t hi[3]; // inclusive
};

PatchRange patch_range(const Dims& dims, const Index3& c, std::size_t radius) {
  PatchRange r{};
  for (int a = 0; a < 3; ++a) {
    r.lo[a] = c[a] >= radius ? c[a] - radius : 0;
    r.hi[a] = std::min(c[a] + radius, dims[a] - 1);
  }
  return r;
}

// Per-voxel term of the patch distance: the Frobenius norm, or its square for
// the whole-patch mode (square-rooted after summation).
void voxel_terms(const Volume& s, const Volume& t, DistanceMode mode, std::vector<double>& out) {
  const std::size_t n = s.voxel_count();
  out.resize(n);
  auto a = s.data(), b = t.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double d = log_distance_voxel(a.subspan(i * 6, 6), b.subspan(i * 6, 6));
    out[i] = mode == DistanceMode::PerVoxel ? d : d * d;
  }
}

double patch_sum(const std::vector<double>& terms, const Dims& dims, const Index3& c, std::size_t radius,
                 DistanceMode mode) {
  const PatchRange r = patch_range(dims, c, radius);
  double sum = 0.0;
  for (std::size_t z = r.lo[2]; z <= r.hi[2]; ++z)
    for (std::size_t y = r.lo[1]; y <= r.hi[1]; ++y)
      for (std::size_t x = r.lo[0]; x <= r.hi[0]; ++x) sum += terms[x + dims[0] * (y + dims[1] * z)];
  return mode == DistanceMode::PerVoxel ? sum : std::sqrt(sum);
}

void check_subject(const Volume& subject, const TemplateLibrary& lib) {
  if (subject.channels() != 6) throw GradingError("grading: subject is not a 6-channel log-tensor field");
  if (subject.dims() != lib.roi().dims()) throw GradingError("grading: subject dims do not match the library ROI");
  if (lib.size() == 0) throw GradingError("grading: empty template library");
}

std::vector<double> label_values(const TemplateLibrary& lib) {
  std::vector<double> y;
  y.reserve(lib.size());
  for (const auto& e : lib.entries()) y.push_back(static_cast<double>(to_int(e.meta.label)));
  return y;
}

// Grades every mask voxel of `subject` against `lib`, sequentially.
std::vector<double> grade_mask(const Volume& subject, const TemplateLibrary& lib, std::size_t radius,
                               DistanceMode mode) {
  const auto mask_voxels = lib.roi().voxels();
  const std::size_t m = mask_voxels.size(), nt = lib.size();
  std::vector<double> dist(nt * m);
  std::vector<double> terms;
  for (std::size_t t = 0; t < nt; ++t) {
    voxel_terms(subject, *lib.entries()[t].log_field, mode, terms);
    for (std::size_t j = 0; j < m; ++j)
      dist[j * nt + t] = patch_sum(terms, subject.dims(), subject.voxel_of(mask_voxels[j]), radius, mode);
  }
  const auto y = label_values(lib);
  std::vector<double> out(subject.voxel_count(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t j = 0; j < m; ++j)
    out[mask_voxels[j]] = grade_from_distances(std::span<const double>(dist).subspan(j * nt, nt), y);
  return out;
}

} // namespace

double patch_distance(const Volume& s, const Volume& t, const Index3& center, std::size_t radius, DistanceMode mode) {
  if (s.channels() != 6 || t.channels() != 6) throw GradingError("patch_distance: fields must have 6 channels");
  if (s.dims() != t.dims()) throw GradingError("patch_distance: fields differ in dims");
  for (int a = 0; a < 3; ++a)
    if (center[a] >= s.dims()[a]) throw GradingError("patch_distance: center out of bounds");
  const PatchRange r = patch_range(s.dims(), center, radius);
  double sum = 0.0;
  for (std::size_t z = r.lo[2]; z <= r.hi[2]; ++z)
    for (std::size_t y = r.lo[1]; y <= r.hi[1]; ++y)
      for (std::size_t x = r.lo[0]; x <= r.hi[0]; ++x) {
        const std::size_t i = s.linear_index(x, y, z);
        const double d = log_distance_voxel(s.voxel(i), t.voxel(i));
        sum += mode == DistanceMode::PerVoxel ? d : d * d;
      }
  return mode == DistanceMode::PerVoxel ? sum : std::sqrt(sum);
}

double grade_from_distances(std::span<const double> distances, std::span<const double> labels) {
  if (distances.empty() || distances.size() != labels.size())
    throw GradingError("grade: need one distance per template");
  const double h = std::max(*std::min_element(distances.begin(), distances.end()), kBandwidthFloor);
  double num = 0.0, den = 0.0;
  for (std::size_t t = 0; t < distances.size(); ++t) {
    const double w = std::exp(-distances[t] / h);
    num += w * labels[t];
    den += w;
  }
  return num / den;
}

double grade_voxel(const Volume& subject, const TemplateLibrary& lib, const Index3& voxel, std::size_t radius,
                   DistanceMode mode) {
  check_subject(subject, lib);
  std::vector<double> d;
  d.reserve(lib.size());
  for (const auto& e : lib.entries()) d.push_back(patch_distance(subject, *e.log_field, voxel, radius, mode));
  return grade_from_distances(d, label_values(lib));
}

GradingMap::GradingMap(RoiMask mask, Spacing spacing, std::vector<double> values)
    : mask_(std::move(mask)), spacing_(spacing), values_(std::move(values)) {
  if (values_.size() != mask_.occupancy().size()) throw GradingError("grading map: value count does not match mask");
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!mask_.contains(i)) {
      values_[i] = std::numeric_limits<double>::quiet_NaN();
    } else if (!(values_[i] >= -1.0 && values_[i] <= 1.0)) {
      throw GradingError("grading map: in-mask value outside [-1, 1]");
    }
  }
}

std::vector<double> GradingMap::in_mask() const {
  std::vector<double> out;
  out.reserve(mask_.count());
  for (std::size_t i = 0; i < values_.size(); ++i)
    if (mask_.contains(i)) out.push_back(values_[i]);
  return out;
}

double GradingMap::mean() const {
  const auto v = in_mask();
  if (v.empty()) throw GradingError("grading map: empty mask");
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

Volume GradingMap::to_volume() const {
  std::vector<double> d(values_.size(), 0.0);
  for (std::size_t i = 0; i < d.size(); ++i)
    if (mask_.contains(i)) d[i] = values_[i];
  return Volume(mask_.dims(), spacing_, 1, std::move(d));
}

GradingMap GradingMap::from_volume(const Volume& v, const RoiMask& mask) {
  if (v.channels() != 1 || v.dims() != mask.dims()) throw GradingError("grading map: volume does not match mask");
  return GradingMap(mask, v.spacing(), std::vector<double>(v.data().begin(), v.data().end()));
}

GradingMap grade_map(const Volume& subject, const TemplateLibrary& lib, std::size_t radius, DistanceMode mode,
                     unsigned threads) {
  check_subject(subject, lib);
  const auto mask_voxels = lib.roi().voxels();
  const std::size_t m = mask_voxels.size(), nt = lib.size();
  // Template-parallel distance pass, then voxel-parallel vote; every slot
  // has a single writer so the result is schedule independent.
  std::vector<double> dist(nt * m);
  parallel_for(nt, threads, [&](std::size_t t) {
    std::vector<double> terms;
    voxel_terms(subject, *lib.entries()[t].log_field, mode, terms);
    for (std::size_t j = 0; j < m; ++j)
      dist[j * nt + t] = patch_sum(terms, subject.dims(), subject.voxel_of(mask_voxels[j]), radius, mode);
  });
  const auto y = label_values(lib);
  std::vector<double> out(subject.voxel_count(), std::numeric_limits<double>::quiet_NaN());
  parallel_for(m, threads, [&](std::size_t j) {
    out[mask_voxels[j]] = grade_from_distances(std::span<const double>(dist).subspan(j * nt, nt), y);
  });
  return GradingMap(lib.roi(), subject.spacing(), std::move(out));
}

std::vector<GradingMap> grade_templates(const TemplateLibrary& lib, std::size_t radius, std::size_t k,
                                        DistanceMode mode, unsigned threads) {
  if (k < 1 || k >= lib.size())
    throw GradingError("grade_templates: leave-out count " + std::to_string(k) + " must be in [1, library size " +
                       std::to_string(lib.size()) + ")");
  const std::size_t nt = lib.size();
  std::vector<std::vector<double>> values(nt);
  parallel_for(nt, threads, [&](std::size_t t) {
    const std::size_t first = (t / k) * k;
    std::vector<std::size_t> group;
    for (std::size_t g = first; g < std::min(first + k, nt); ++g) group.push_back(g);
    const TemplateLibrary rest = lib.without(group);
    const Volume& field = *lib.entries()[t].log_field;
    check_subject(field, rest);
    values[t] = grade_mask(field, rest, radius, mode);
  });
  std::vector<GradingMap> maps;
  maps.reserve(nt);
  for (std::size_t t = 0; t < nt; ++t)
    maps.emplace_back(lib.roi(), lib.entries()[t].log_field->spacing(), std::move(values[t]));
  return maps;
}

} // namespace tensorgrade
