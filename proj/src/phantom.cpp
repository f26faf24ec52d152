#include "tensorgrade/phantom.hpp"

#include <cmath>
#include <complex>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <numbers>
#include <set>
#include <stdexcept>

#include <fftw3.h>

#include "tensorgrade/io.hpp"
#include "tensorgrade/parallel.hpp"
#include "tensorgrade/random.hpp"
#include "tensorgrade/tensor.hpp"

namespace tensorgrade {

namespace fs = std::filesystem;

namespace {

// The FFTW planner is not re-entrant; execution on distinct arrays is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

constexpr std::uint64_t kVolumeStreamOffset = 1ull << 40;

void fill_noise(const PhantomConfig& cfg, Rng& rng, std::vector<double>& out) {
  const Dims& d = cfg.dims;
  const std::size_t n = d[0] * d[1] * d[2];
  out.assign(n * 3, 0.0);
  if (cfg.noise_amplitude_mm == 0.0) return;

  const int nx = static_cast<int>(d[0]), ny = static_cast<int>(d[1]), nz = static_cast<int>(d[2]);
  const std::size_t nxc = d[0] / 2 + 1;
  std::vector<double> real(n);
  fftw_complex* spec = fftw_alloc_complex(nxc * d[1] * d[2]);
  fftw_plan fwd, inv;
  {
    std::lock_guard lock(planner_mutex());
    fwd = fftw_plan_dft_r2c_3d(nz, ny, nx, real.data(), spec, FFTW_ESTIMATE);
    inv = fftw_plan_dft_c2r_3d(nz, ny, nx, spec, real.data(), FFTW_ESTIMATE);
  }
  auto freq = [](std::size_t k, std::size_t len, double h) {
    const double kk = k <= len / 2 ? static_cast<double>(k) : static_cast<double>(k) - static_cast<double>(len);
    return kk / (static_cast<double>(len) * h);
  };
  const double sigma = cfg.noise_correlation_mm;
  const double two_pi2_s2 = 2.0 * std::numbers::pi * std::numbers::pi * sigma * sigma;
  for (int comp = 0; comp < 3; ++comp) {
    for (auto& v : real) v = rng.normal();
    fftw_execute(fwd);
    for (std::size_t z = 0; z < d[2]; ++z)
      for (std::size_t y = 0; y < d[1]; ++y)
        for (std::size_t x = 0; x < nxc; ++x) {
          const double fx = freq(x, d[0], cfg.spacing[0]);
          const double fy = freq(y, d[1], cfg.spacing[1]);
          const double fz = freq(z, d[2], cfg.spacing[2]);
          const double gain = (x == 0 && y == 0 && z == 0) ? 0.0 : std::exp(-two_pi2_s2 * (fx * fx + fy * fy + fz * fz));
          auto& c = spec[(z * d[1] + y) * nxc + x];
          c[0] *= gain;
          c[1] *= gain;
        }
    fftw_execute(inv);
    double ss = 0.0;
    for (double v : real) ss += v * v;
    const double rms = std::sqrt(ss / static_cast<double>(n));
    const double scale = rms > 0.0 ? cfg.noise_amplitude_mm / rms : 0.0;
    for (std::size_t i = 0; i < n; ++i) out[i * 3 + static_cast<std::size_t>(comp)] = real[i] * scale;
  }
  {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(fwd);
    fftw_destroy_plan(inv);
  }
  fftw_free(spec);
}

void add_atrophy(const PhantomConfig& cfg, double strength, std::vector<double>& u) {
  if (strength == 0.0) return;
  const auto c = cfg.center_voxel();
  const double s2 = cfg.atrophy_radius_mm * cfg.atrophy_radius_mm;
  const Dims& d = cfg.dims;
  for (std::size_t z = 0, i = 0; z < d[2]; ++z)
    for (std::size_t y = 0; y < d[1]; ++y)
      for (std::size_t x = 0; x < d[0]; ++x, ++i) {
        const double r[3] = {(static_cast<double>(x) - c[0]) * cfg.spacing[0],
                             (static_cast<double>(y) - c[1]) * cfg.spacing[1],
                             (static_cast<double>(z) - c[2]) * cfg.spacing[2]};
        const double fall = strength * std::exp(-(r[0] * r[0] + r[1] * r[1] + r[2] * r[2]) / (2.0 * s2));
        for (int a = 0; a < 3; ++a) u[i * 3 + static_cast<std::size_t>(a)] += fall * r[a];
      }
}

const AgeRange& age_range(const PhantomConfig& cfg, PhantomClass c) {
  switch (c) {
  case PhantomClass::Control: return cfg.age_control;
  case PhantomClass::PreManifest: return cfg.age_pre;
  case PhantomClass::Manifest: return cfg.age_manifest;
  }
  return cfg.age_control;
}

Label label_of(PhantomClass c) {
  switch (c) {
  case PhantomClass::Control: return Label::Control;
  case PhantomClass::PreManifest: return Label::Unlabeled;
  case PhantomClass::Manifest: return Label::Disease;
  }
  return Label::Unlabeled;
}

} // namespace

std::string to_string(PhantomClass c) {
  switch (c) {
  case PhantomClass::Control: return "cn";
  case PhantomClass::PreManifest: return "pre";
  case PhantomClass::Manifest: return "manifest";
  }
  return "?";
}

void PhantomConfig::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (dims[a] < 2) throw std::invalid_argument("phantom: dims must be at least 2 on every axis");
    if (!(spacing[a] > 0.0)) throw std::invalid_argument("phantom: spacing must be positive");
  }
  if (!(atrophy_strength >= 0.0 && atrophy_strength < 1.0))
    throw std::invalid_argument("phantom: atrophy_strength must be in [0, 1)");
  if (!(pre_fraction >= 0.0 && pre_fraction <= 1.0)) throw std::invalid_argument("phantom: pre_fraction must be in [0, 1]");
  if (!(atrophy_radius_mm > 0.0)) throw std::invalid_argument("phantom: atrophy_radius_mm must be positive");
  if (!(noise_amplitude_mm >= 0.0)) throw std::invalid_argument("phantom: noise_amplitude_mm must be >= 0");
  if (!(noise_correlation_mm >= 0.0)) throw std::invalid_argument("phantom: noise_correlation_mm must be >= 0");
  if (!(volume_variability >= 0.0)) throw std::invalid_argument("phantom: volume_variability must be >= 0");
  if (!(roi_radius_factor > 0.0)) throw std::invalid_argument("phantom: roi_radius_factor must be positive");
  if (n_control < 1 || n_pre < 1 || n_manifest < 1) throw std::invalid_argument("phantom: every class count must be >= 1");
  if (control_templates() > n_control) throw std::invalid_argument("phantom: more control templates than controls");
  for (const auto* r : {&age_control, &age_pre, &age_manifest})
    if (!(r->lo > 0.0 && r->hi >= r->lo)) throw std::invalid_argument("phantom: age ranges must be positive, lo <= hi");
}

std::array<double, 3> PhantomConfig::center_voxel() const {
  if (atrophy_center) return *atrophy_center;
  return {static_cast<double>(dims[0] / 2), static_cast<double>(dims[1] / 2), static_cast<double>(dims[2] / 2)};
}

std::size_t PhantomConfig::control_templates() const { return n_control_templates.value_or(n_control / 2); }

double PhantomConfig::class_strength(PhantomClass c) const {
  switch (c) {
  case PhantomClass::Control: return 0.0;
  case PhantomClass::PreManifest: return pre_fraction * atrophy_strength;
  case PhantomClass::Manifest: return atrophy_strength;
  }
  return 0.0;
}

namespace {

template <class T>
void read_opt(const nlohmann::json& j, const char* key, T& dst) {
  if (j.contains(key)) dst = j.at(key).get<T>();
}

} // namespace

PhantomConfig PhantomConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("phantom: config must be a JSON object");
  static const std::set<std::string> known{"dims", "spacing", "atrophy_center", "atrophy_radius_mm", "atrophy_strength",
                                           "pre_fraction", "noise_amplitude_mm", "noise_correlation_mm",
                                           "volume_variability", "roi_radius_factor", "counts", "ages", "seed"};
  for (const auto& [key, value] : j.items())
    if (!known.contains(key)) throw std::invalid_argument("phantom: unknown config key '" + key + "'");
  PhantomConfig c;
  read_opt(j, "dims", c.dims);
  read_opt(j, "spacing", c.spacing);
  if (j.contains("atrophy_center") && !j["atrophy_center"].is_null())
    c.atrophy_center = j["atrophy_center"].get<std::array<double, 3>>();
  read_opt(j, "atrophy_radius_mm", c.atrophy_radius_mm);
  read_opt(j, "atrophy_strength", c.atrophy_strength);
  read_opt(j, "pre_fraction", c.pre_fraction);
  read_opt(j, "noise_amplitude_mm", c.noise_amplitude_mm);
  read_opt(j, "noise_correlation_mm", c.noise_correlation_mm);
  read_opt(j, "volume_variability", c.volume_variability);
  read_opt(j, "roi_radius_factor", c.roi_radius_factor);
  if (j.contains("counts")) {
    const auto& k = j["counts"];
    read_opt(k, "cn", c.n_control);
    read_opt(k, "pre", c.n_pre);
    read_opt(k, "manifest", c.n_manifest);
    if (k.contains("cn_templates") && !k["cn_templates"].is_null()) c.n_control_templates = k["cn_templates"].get<std::size_t>();
  }
  if (j.contains("ages")) {
    const auto& a = j["ages"];
    auto range = [&](const char* key, AgeRange& r) {
      if (a.contains(key)) {
        const auto v = a[key].get<std::array<double, 2>>();
        r = {v[0], v[1]};
      }
    };
    range("cn", c.age_control);
    range("pre", c.age_pre);
    range("manifest", c.age_manifest);
  }
  read_opt(j, "seed", c.seed);
  c.validate();
  return c;
}

nlohmann::ordered_json PhantomConfig::to_json() const {
  nlohmann::ordered_json j;
  j["dims"] = dims;
  j["spacing"] = spacing;
  j["atrophy_center"] = center_voxel();
  j["atrophy_radius_mm"] = atrophy_radius_mm;
  j["atrophy_strength"] = atrophy_strength;
  j["pre_fraction"] = pre_fraction;
  j["noise_amplitude_mm"] = noise_amplitude_mm;
  j["noise_correlation_mm"] = noise_correlation_mm;
  j["volume_variability"] = volume_variability;
  j["roi_radius_factor"] = roi_radius_factor;
  j["counts"] = {{"cn", n_control}, {"pre", n_pre}, {"manifest", n_manifest}, {"cn_templates", control_templates()}};
  j["ages"] = {{"cn", {age_control.lo, age_control.hi}},
               {"pre", {age_pre.lo, age_pre.hi}},
               {"manifest", {age_manifest.lo, age_manifest.hi}}};
  j["seed"] = seed;
  return j;
}

Volume atrophy_field(const PhantomConfig& cfg, double strength) {
  std::vector<double> u(cfg.dims[0] * cfg.dims[1] * cfg.dims[2] * 3, 0.0);
  add_atrophy(cfg, strength, u);
  return Volume(cfg.dims, cfg.spacing, 3, std::move(u));
}

Volume smooth_noise_field(const PhantomConfig& cfg, std::uint64_t stream) {
  Rng rng(cfg.seed, stream);
  std::vector<double> u;
  fill_noise(cfg, rng, u);
  return Volume(cfg.dims, cfg.spacing, 3, std::move(u));
}

PhantomSubject generate_subject(const PhantomConfig& cfg, PhantomClass cls, std::uint64_t stream,
                                const std::string& subject_id) {
  cfg.validate();
  Rng rng(cfg.seed, stream);
  const AgeRange& ages = age_range(cfg, cls);
  PhantomSubject s;
  s.cls = cls;
  s.meta.subject_id = subject_id;
  s.meta.scan_id = "0";
  s.meta.age = rng.uniform(ages.lo, ages.hi);
  s.meta.label = label_of(cls);
  std::vector<double> u;
  fill_noise(cfg, rng, u);
  add_atrophy(cfg, cfg.class_strength(cls), u);
  s.displacement = Volume(cfg.dims, cfg.spacing, 3, std::move(u));
  return s;
}

RoiMask phantom_roi(const PhantomConfig& cfg) {
  const auto c = cfg.center_voxel();
  const double r = cfg.roi_radius_factor * cfg.atrophy_radius_mm;
  const Dims& d = cfg.dims;
  std::vector<std::uint8_t> bits(d[0] * d[1] * d[2], 0);
  for (std::size_t z = 0, i = 0; z < d[2]; ++z)
    for (std::size_t y = 0; y < d[1]; ++y)
      for (std::size_t x = 0; x < d[0]; ++x, ++i) {
        const double dx = (static_cast<double>(x) - c[0]) * cfg.spacing[0];
        const double dy = (static_cast<double>(y) - c[1]) * cfg.spacing[1];
        const double dz = (static_cast<double>(z) - c[2]) * cfg.spacing[2];
        bits[i] = dx * dx + dy * dy + dz * dz <= r * r ? 1 : 0;
      }
  return RoiMask(d, std::move(bits));
}

double structure_volume(const Volume& displacement, const RoiMask& mask) {
  if (displacement.dims() != mask.dims()) throw std::invalid_argument("structure_volume: mask does not match field");
  const Volume j = jacobian_field(displacement);
  const Spacing& s = displacement.spacing();
  double total = 0.0;
  for (auto i : mask.voxels()) {
    const Eigen::Map<const Eigen::Matrix<double, 3, 3, Eigen::RowMajor>> m(j.voxel(i).data());
    total += std::abs(m.determinant());
  }
  return total * s[0] * s[1] * s[2];
}

PhantomDataset generate_population(const PhantomConfig& cfg, const fs::path& out_dir, unsigned threads) {
  cfg.validate();
  fs::create_directories(out_dir / "subjects");
  struct Spec {
    PhantomClass cls;
    std::string id;
    bool is_template;
  };
  std::vector<Spec> specs;
  char buf[32];
  for (std::size_t i = 0; i < cfg.n_control; ++i) {
    std::snprintf(buf, sizeof buf, "cn-%03zu", i);
    specs.push_back({PhantomClass::Control, buf, i < cfg.control_templates()});
  }
  for (std::size_t i = 0; i < cfg.n_pre; ++i) {
    std::snprintf(buf, sizeof buf, "pre-%03zu", i);
    specs.push_back({PhantomClass::PreManifest, buf, false});
  }
  for (std::size_t i = 0; i < cfg.n_manifest; ++i) {
    std::snprintf(buf, sizeof buf, "hd-%03zu", i);
    specs.push_back({PhantomClass::Manifest, buf, true});
  }

  const RoiMask roi = phantom_roi(cfg);
  save_mask(roi, out_dir / "roi.json", cfg.spacing);

  PhantomDataset ds;
  ds.manifest.base_dir = out_dir;
  ds.manifest.roi.emplace_back("roi.json");
  ds.manifest.entries.resize(specs.size());
  parallel_for(specs.size(), threads, [&](std::size_t i) {
    const Spec& sp = specs[i];
    PhantomSubject s = generate_subject(cfg, sp.cls, i, sp.id);
    const fs::path rel = fs::path("subjects") / (sp.id + ".json");
    save_volume(s.displacement, out_dir / rel);
    Rng vol_rng(cfg.seed, kVolumeStreamOffset + i);
    ManifestEntry& e = ds.manifest.entries[i];
    e.path = rel;
    e.meta = s.meta;
    e.role = sp.is_template ? "template" : "query";
    e.group = to_string(sp.cls);
    e.volume = structure_volume(s.displacement, roi) * (1.0 + cfg.volume_variability * vol_rng.normal());
  });
  ds.manifest_path = out_dir / "manifest.json";
  ds.manifest.write(ds.manifest_path);
  std::ofstream cfg_out(out_dir / "phantom_config.json");
  cfg_out << cfg.to_json().dump(2) << '\n';
  if (!cfg_out) throw std::runtime_error((out_dir / "phantom_config.json").string() + ": write failed");
  return ds;
}

} // namespace tensorgrade
