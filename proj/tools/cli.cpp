#include "cli.hpp"

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstdarg>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>

#include "CLI11.hpp"
#include "json.hpp"
#include "tensorgrade/classify.hpp"
#include "tensorgrade/grading.hpp"
#include "tensorgrade/io.hpp"
#include "tensorgrade/manifest.hpp"
#include "tensorgrade/parallel.hpp"
#include "tensorgrade/phantom.hpp"
#include "tensorgrade/pipeline.hpp"
#include "tensorgrade/selection.hpp"
#include "tensorgrade/slices.hpp"
#include "tensorgrade/tensor.hpp"

namespace tensorgrade::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::string strprintf(const char* fmt, ...) {
  va_list ap;
  va_start(ap, fmt);
  char buf[512];
  std::vsnprintf(buf, sizeof buf, fmt, ap);
  va_end(ap);
  return buf;
}

// Values of every flag that can override the run configuration. An option
// only overrides when it was given on the command line.
struct Flags {
  std::string config;
  std::string out_dir;
  std::uint64_t seed = 0;
  unsigned threads = 0;
  std::string disp_sign;
  std::string distance_mode;
  bool nonneg = false;

  std::size_t radius = 0;
  std::vector<std::size_t> radii;
  std::size_t n_per_class = 0;
  double rho = 0.0, lambda = 0.0, c = 0.0, test_fraction = 0.0;
  std::size_t n_iter = 0, leave_out = 0, folds = 0;
  std::string manifest;
  std::vector<std::string> roi;
  std::vector<std::size_t> slices;
  bool no_cache = false;
  bool phantom = false;

  // One name may be registered on several subcommands.
  std::multimap<std::string, CLI::Option*> opts;

  bool given(const std::string& name) const {
    const auto [lo, hi] = opts.equal_range(name);
    return std::any_of(lo, hi, [](const auto& kv) { return kv.second->count() > 0; });
  }
};

json read_json_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error(p.string() + ": cannot open config file");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(p.string() + ": invalid JSON: " + e.what());
  }
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error(p.string() + ": cannot open for writing");
  out << text;
  if (!out) throw std::runtime_error(p.string() + ": write failed");
}

std::string volume_stem(const fs::path& p) {
  std::string name = p.filename().string();
  for (const char* ext : {".nii", ".json", ".f32"})
    if (name.size() > std::strlen(ext) && name.ends_with(ext)) return name.substr(0, name.size() - std::strlen(ext));
  return name;
}

bool volume_exists(const fs::path& p) {
  if (p.extension() == ".nii") return fs::exists(p);
  return fs::exists(raw_payload_path(p)) && fs::exists(raw_sidecar_path(p));
}

/// Flag > config file > default.
/// With `phantom_only`, a config file without a "phantom" key is taken to be
/// a bare phantom configuration.
RunConfig resolve_config(const Flags& f, bool phantom_only) {
  RunConfig cfg;
  json file;
  if (!f.config.empty()) {
    file = read_json_file(f.config);
    if (phantom_only && !file.contains("phantom")) file = json{{"phantom", file}};
    cfg = RunConfig::from_json(file);
  }
  if (f.given("--out-dir")) cfg.out_dir = f.out_dir;
  if (f.given("--seed")) cfg.seed = f.seed;
  if (f.given("--threads")) cfg.threads = f.threads;
  if (f.given("--disp-sign")) cfg.disp_sign = f.disp_sign == "plus" ? DispSign::Plus : DispSign::Minus;
  if (f.given("--distance-mode")) cfg.distance_mode = distance_mode_from_string(f.distance_mode);
  if (f.given("--nonneg")) cfg.nonneg = true;
  if (f.given("--radius")) {
    cfg.radius = f.radius;
    if (!f.given("--radii")) cfg.radii.clear();
  }
  if (f.given("--radii")) cfg.radii = f.radii;
  if (f.given("--n-per-class")) cfg.n_per_class = f.n_per_class;
  if (f.given("--rho")) cfg.rho = f.rho;
  if (f.given("--lambda")) cfg.lambda = f.lambda;
  if (f.given("--C")) cfg.c = f.c;
  if (f.given("--n-iter")) cfg.n_iter = f.n_iter;
  if (f.given("--test-fraction")) cfg.test_fraction = f.test_fraction;
  if (f.given("--leave-out")) cfg.leave_out = f.leave_out;
  if (f.given("--folds")) cfg.folds = f.folds;
  if (f.given("--manifest")) cfg.manifest = f.manifest;
  if (f.given("--roi")) {
    cfg.roi.clear();
    for (const auto& r : f.roi) cfg.roi.emplace_back(r);
  }
  if (f.given("--slices")) cfg.slices = f.slices;
  if (f.given("--no-cache")) cfg.cache = false;
  if (f.given("--phantom") && !cfg.phantom) cfg.phantom = PhantomConfig{};
  if (phantom_only && !cfg.phantom) cfg.phantom = PhantomConfig{};
  // A phantom without its own seed follows the run seed; --seed overrides both.
  const bool phantom_seed_in_file = file.contains("phantom") && file["phantom"].is_object() &&
                                    file["phantom"].contains("seed");
  if (cfg.phantom && (!phantom_seed_in_file || f.given("--seed"))) cfg.phantom->seed = cfg.seed;
  if (cfg.rho < 0 || cfg.lambda < 0) throw std::invalid_argument("rho and lambda must be nonnegative");
  if (!(cfg.c > 0)) throw std::invalid_argument("C must be positive");
  if (!(cfg.test_fraction > 0 && cfg.test_fraction < 1)) throw std::invalid_argument("test fraction must lie in (0,1)");
  return cfg;
}

void write_run_record(const RunConfig& cfg, const std::string& command, const std::vector<std::string>& args,
                      const ordered_json& details) {
  ordered_json run;
  run["tool"] = "tensorgrade";
  run["command"] = command;
  run["args"] = args;
  run["config"] = cfg.to_json();
  run["out_dir"] = cfg.out_dir.generic_string();
  run["threads"] = resolve_threads(cfg.threads);
  for (const auto& [k, v] : details.items()) run[k] = v;
  write_text(cfg.out_dir / "run.json", run.dump(2) + "\n");
}

RoiMask load_roi(const std::vector<fs::path>& paths) {
  std::vector<RoiMask> masks;
  for (const auto& p : paths) masks.push_back(load_mask(p));
  return union_bbox(masks);
}

Volume load_log_field(const fs::path& path, DispSign sign, unsigned threads, TensorizeStats* stats) {
  Volume v = load_volume(path);
  if (v.channels() == 6) return v;
  if (v.channels() == 3) return tensorize(v, sign, stats, threads);
  throw std::runtime_error(path.string() + ": expected a displacement (3 channels) or log-tensor (6 channels) field, got " +
                           std::to_string(v.channels()) + " channels");
}

// --- tensorize --------------------------------------------------------------

int cmd_tensorize(const RunConfig& cfg, const std::vector<std::string>& inputs, const std::string& format,
                  const std::vector<std::string>& args) {
  const unsigned threads = resolve_threads(cfg.threads);
  fs::create_directories(cfg.out_dir);
  std::optional<RoiMask> roi;
  if (!cfg.roi.empty()) roi = load_roi(cfg.roi);
  ordered_json outputs = ordered_json::array();
  TensorizeStats total;
  for (const auto& in : inputs) {
    const Volume u = load_volume(in);
    if (u.channels() != 3)
      throw std::runtime_error(in + ": expected a 3-channel displacement field, got " + std::to_string(u.channels()) +
                               " channels");
    TensorizeStats st;
    Volume log_field = tensorize(u, cfg.disp_sign, &st, threads);
    if (roi) {
      if (roi->dims() != log_field.dims()) throw std::runtime_error(in + ": ROI mask does not match the field grid");
      log_field = crop(log_field, *roi->bbox());
    }
    const fs::path out = cfg.out_dir / (volume_stem(in) + (format == "nii" ? "_log.nii" : "_log.json"));
    save_volume(log_field, out);
    std::cout << in << ": " << st.voxels << " voxels, " << st.clamped << " clamped -> " << out.string() << "\n";
    outputs.push_back({{"input", in}, {"output", out.generic_string()}, {"voxels", st.voxels}, {"clamped", st.clamped}});
    total.voxels += st.voxels;
    total.clamped += st.clamped;
  }
  write_run_record(cfg, "tensorize", args,
                   {{"outputs", outputs}, {"tensorize", {{"voxels", total.voxels}, {"clamped", total.clamped}}}});
  return 0;
}

// --- grade ------------------------------------------------------------------

struct LoadedLibrary {
  std::vector<TemplateEntry> pool;
  RoiMask roi;
  BoundingBox box;
};

LoadedLibrary load_library(const RunConfig& cfg, const fs::path& manifest_path, unsigned threads) {
  const Manifest m = Manifest::read(manifest_path);
  std::vector<fs::path> roi_paths = cfg.roi;
  if (roi_paths.empty())
    for (const auto& r : m.roi) roi_paths.push_back(m.resolve(r));
  std::vector<const ManifestEntry*> chosen;
  for (const auto& e : m.entries) {
    if (e.role != "template" || e.meta.label == Label::Unlabeled) continue;
    if (!volume_exists(m.resolve(e.path)))
      throw std::runtime_error("library entry " + e.meta.subject_id + "/" + e.meta.scan_id + ": missing file " +
                               m.resolve(e.path).string());
    chosen.push_back(&e);
  }
  if (chosen.empty()) throw std::runtime_error(manifest_path.string() + ": no labeled template entries");

  std::vector<Volume> fields(chosen.size(), Volume::zeros({1, 1, 1}, {1, 1, 1}, 1));
  parallel_for(chosen.size(), threads, [&](std::size_t i) {
    fields[i] = load_log_field(m.resolve(chosen[i]->path), cfg.disp_sign, 1, nullptr);
  });
  LoadedLibrary lib;
  lib.roi = roi_paths.empty() ? RoiMask::full(fields.front().dims()) : load_roi(roi_paths);
  if (!lib.roi.bbox()) throw std::runtime_error("ROI mask is empty");
  lib.box = *lib.roi.bbox();
  for (std::size_t i = 0; i < chosen.size(); ++i) {
    if (fields[i].dims() != lib.roi.dims())
      throw std::runtime_error("library entry " + chosen[i]->meta.subject_id + ": field does not match the ROI grid");
    lib.pool.push_back({std::make_shared<const Volume>(crop(fields[i], lib.box)), chosen[i]->meta});
  }
  lib.roi = crop(lib.roi, lib.box);
  return lib;
}

struct GradeArgs {
  std::string subject, library, subject_id;
  double age = 0.0;
  bool templates = false;
};

int cmd_grade(const RunConfig& cfg, const Flags& f, const GradeArgs& g, const std::vector<std::string>& args) {
  const unsigned threads = resolve_threads(cfg.threads);
  if (cfg.radius_list().size() != 1) throw std::invalid_argument("grade takes a single --radius");
  const std::size_t radius = cfg.radius_list().front();
  fs::create_directories(cfg.out_dir);
  const LoadedLibrary loaded = load_library(cfg, g.library, threads);
  save_mask(loaded.roi, cfg.out_dir / "roi.json", loaded.pool.front().log_field->spacing());

  if (g.templates) {
    const TemplateLibrary lib(loaded.pool, loaded.roi);
    const auto maps = grade_templates(lib, radius, cfg.leave_out, cfg.distance_mode, threads);
    Manifest out;
    out.base_dir = cfg.out_dir;
    out.roi = {"roi.json"};
    fs::create_directories(cfg.out_dir / "maps");
    for (std::size_t i = 0; i < maps.size(); ++i) {
      const auto& meta = lib.entries()[i].meta;
      const fs::path rel = fs::path("maps") / (meta.subject_id + "_" + meta.scan_id + ".json");
      save_volume(maps[i].to_volume(), cfg.out_dir / rel);
      out.entries.push_back({rel, meta, "template", "", std::nullopt});
    }
    out.write(cfg.out_dir / "maps.json");
    std::cout << "graded " << maps.size() << " templates (leave-" << cfg.leave_out << "-out) -> "
              << (cfg.out_dir / "maps.json").string() << "\n";
    write_run_record(cfg, "grade", args,
                     {{"mode", "templates"}, {"library", g.library}, {"radius", radius}, {"maps", maps.size()}});
    return 0;
  }

  if (g.subject.empty()) throw std::invalid_argument("grade: --subject is required unless --templates is given");
  SubjectMeta query;
  query.subject_id = g.subject_id.empty() ? volume_stem(g.subject) : g.subject_id;
  query.scan_id = "query";
  query.age = g.age > 0 ? g.age : 1.0;
  query.label = Label::Unlabeled;
  const bool age_matched = f.given("--n-per-class");
  if (age_matched && !(g.age > 0)) throw std::invalid_argument("grade: --n-per-class needs the subject --age");
  const TemplateLibrary lib = age_matched ? build_library(loaded.pool, query, cfg.n_per_class, loaded.roi)
                                          : library_from_pool(loaded.pool, query, loaded.roi);
  TensorizeStats st;
  const Volume field = load_log_field(g.subject, cfg.disp_sign, threads, &st);
  Volume cropped = field;
  if (field.dims() != loaded.roi.dims()) {
    const Dims full{loaded.box.hi[0] + 1, loaded.box.hi[1] + 1, loaded.box.hi[2] + 1};
    if (field.dims()[0] < full[0] || field.dims()[1] < full[1] || field.dims()[2] < full[2])
      throw std::runtime_error(g.subject + ": field does not cover the ROI");
    cropped = crop(field, loaded.box);
  }
  const GradingMap map = grade_map(cropped, lib, radius, cfg.distance_mode, threads);
  const fs::path out = cfg.out_dir / (volume_stem(g.subject) + "_grading.json");
  save_volume(map.to_volume(), out);
  std::cout << query.subject_id << ": mean in-mask grade " << map.mean() << " over " << lib.size() << " templates -> "
            << out.string() << "\n";
  write_run_record(cfg, "grade", args,
                   {{"mode", "subject"},
                    {"subject", g.subject},
                    {"library", g.library},
                    {"radius", radius},
                    {"templates", lib.size()},
                    {"mean_grade", map.mean()},
                    {"output", out.generic_string()}});
  return 0;
}

// --- select -----------------------------------------------------------------

int cmd_select(const RunConfig& cfg, const std::string& maps_path, const std::vector<std::string>& args) {
  const Manifest m = Manifest::read(maps_path);
  std::vector<fs::path> roi_paths = cfg.roi;
  if (roi_paths.empty())
    for (const auto& r : m.roi) roi_paths.push_back(m.resolve(r));
  if (roi_paths.empty()) throw std::runtime_error(maps_path + ": no ROI mask listed");
  const RoiMask roi = load_roi(roi_paths);
  std::vector<GradingMap> maps;
  std::vector<double> labels;
  for (const auto& e : m.entries) {
    if (e.meta.label == Label::Unlabeled) continue;
    const Volume v = load_volume(m.resolve(e.path));
    if (v.dims() != roi.dims())
      throw std::runtime_error(m.resolve(e.path).string() + ": grading map of " + e.meta.subject_id +
                               " does not match the ROI grid");
    maps.push_back(GradingMap::from_volume(v, roi));
    labels.push_back(to_int(e.meta.label));
  }
  if (maps.empty()) throw std::runtime_error(maps_path + ": no labeled grading maps");
  ElasticNetOptions opts;
  opts.rho = cfg.rho;
  opts.lambda = cfg.lambda;
  opts.nonneg = cfg.nonneg;
  const CoefficientMap beta = elastic_net_fit(design_matrix(maps, labels), opts);
  fs::create_directories(cfg.out_dir);
  beta.write_csv(cfg.out_dir / "coefficients.csv");
  save_volume(beta.to_volume(), cfg.out_dir / "coefficients.json");
  if (!cfg.slices.empty()) export_slices(beta.to_volume(), Axis::Z, cfg.slices, cfg.out_dir / "slices", "coefficients");
  std::cout << beta.nonzero.size() << " of " << beta.voxels.size() << " voxels selected"
            << (beta.converged ? "" : " (not converged)") << "\n";
  write_run_record(cfg, "select", args,
                   {{"maps", maps_path},
                    {"nonzero", beta.nonzero.size()},
                    {"converged", beta.converged},
                    {"sweeps", beta.sweeps}});
  return 0;
}

// --- classify ---------------------------------------------------------------

int cmd_classify(const RunConfig& cfg, const std::string& features, const std::vector<std::string>& columns,
                 const std::vector<std::string>& args) {
  const FeatureTable table = FeatureTable::read_csv(features, columns);
  CvOptions cv;
  cv.n_iter = cfg.n_iter;
  cv.test_fraction = cfg.test_fraction;
  cv.seed = cfg.seed;
  cv.c = cfg.c;
  cv.folds = cfg.folds;
  cv.threads = resolve_threads(cfg.threads);
  EvaluationReport rep = stratified_cv(table, cv);
  rep.config["run"] = cfg.to_json();
  rep.config["features"] = table.feature_names();
  fs::create_directories(cfg.out_dir);
  rep.write_json(cfg.out_dir / "report.json");
  rep.write_csv(cfg.out_dir / "report.csv");
  std::cout << strprintf("ACC %.2f +- %.2f  SEN %.2f +- %.2f  SPE %.2f +- %.2f\n", rep.acc.mean, rep.acc.sem,
                         rep.sen.mean, rep.sen.sem, rep.spe.mean, rep.spe.sem);
  write_run_record(cfg, "classify", args,
                   {{"features", features},
                    {"columns", table.feature_names()},
                    {"ACC", rep.acc.mean},
                    {"SEN", rep.sen.mean},
                    {"SPE", rep.spe.mean}});
  return 0;
}

// --- phantom ----------------------------------------------------------------

int cmd_phantom(const RunConfig& cfg, const std::vector<std::string>& args) {
  const PhantomConfig& pc = *cfg.phantom;
  const PhantomDataset ds = generate_population(pc, cfg.out_dir, resolve_threads(cfg.threads));
  std::cout << ds.manifest.entries.size() << " subjects -> " << ds.manifest_path.string() << "\n";
  write_run_record(cfg, "phantom", args,
                   {{"phantom", pc.to_json()}, {"manifest", ds.manifest_path.generic_string()}});
  return 0;
}

// --- pipeline ---------------------------------------------------------------

int cmd_pipeline(const RunConfig& cfg) {
  const PipelineResult r = run_pipeline(cfg);
  std::cout << strprintf("ROI box (%zu,%zu,%zu)-(%zu,%zu,%zu), %zu voxels; %zu clamped of %zu tensorized; %zu cache hits\n",
                         r.roi_box.lo[0], r.roi_box.lo[1], r.roi_box.lo[2], r.roi_box.hi[0], r.roi_box.hi[1],
                         r.roi_box.hi[2], r.roi.count(), r.tensorize.clamped, r.tensorize.voxels, r.cache_hits);
  for (const auto& rr : r.radii) {
    std::cout << strprintf("radius %zu: tensor ACC %.2f +- %.2f, volume ACC %.2f +- %.2f, volume+tensor ACC %.2f +- %.2f\n",
                           rr.radius, rr.tensor.acc.mean, rr.tensor.acc.sem, rr.volume.acc.mean, rr.volume.acc.sem,
                           rr.combined.acc.mean, rr.combined.acc.sem);
  }
  std::cout << "outputs in " << cfg.out_dir.string() << "\n";
  return 0;
}

// --- export-slices ----------------------------------------------------------

int cmd_export_slices(const RunConfig& cfg, const std::string& input, const std::string& axis,
                      const std::vector<std::size_t>& indices, const std::string& stem,
                      const std::vector<std::string>& args) {
  const Volume v = load_volume(input);
  const auto written =
      export_slices(v, axis_from_string(axis), indices, cfg.out_dir, stem.empty() ? volume_stem(input) : stem);
  ordered_json files = ordered_json::array();
  for (const auto& p : written) files.push_back(p.generic_string());
  std::cout << written.size() << " files written to " << cfg.out_dir.string() << "\n";
  write_run_record(cfg, "export-slices", args, {{"input", input}, {"axis", axis}, {"outputs", files}});
  return 0;
}

} // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Tensor-based patch grading of deformation fields", "tgrade"};
  app.require_subcommand(1);
  Flags f;
  auto add = [&](CLI::App* a, const std::string& name, auto& var, const std::string& desc) {
    return f.opts.emplace(name, a->add_option(name, var, desc))->second;
  };
  auto add_flag = [&](CLI::App* a, const std::string& name, bool& var, const std::string& desc) {
    return f.opts.emplace(name, a->add_flag(name, var, desc))->second;
  };

  add(&app, "--config", f.config, "JSON run configuration (flags override it)")->check(CLI::ExistingFile);
  add(&app, "--out-dir", f.out_dir, "output directory (default: out)");
  add(&app, "--seed", f.seed, "random seed");
  add(&app, "--threads", f.threads, "worker threads, 0 = all cores");
  add(&app, "--disp-sign", f.disp_sign, "displacement convention: minus (x -> x - u) or plus")
      ->check(CLI::IsMember({"minus", "plus"}));
  add(&app, "--distance-mode", f.distance_mode, "patch distance")->check(CLI::IsMember({"per-voxel", "whole-patch"}));
  add_flag(&app, "--nonneg", f.nonneg, "constrain elastic-net coefficients to be nonnegative");

  std::vector<std::string> inputs;
  std::string format = "raw";
  auto* tz = app.add_subcommand("tensorize", "displacement fields -> log-tensor fields");
  tz->add_option("inputs", inputs, "displacement volumes")->required();
  tz->add_option("--format", format, "output format")->check(CLI::IsMember({"raw", "nii"}));
  add(tz, "--roi", f.roi, "crop the output to the bounding box of these masks");

  GradeArgs ga;
  auto* gr = app.add_subcommand("grade", "grading map of a subject against a template library");
  gr->add_option("--library", ga.library, "library manifest")->required();
  gr->add_option("--subject", ga.subject, "subject displacement or log-tensor volume");
  gr->add_option("--subject-id", ga.subject_id, "subject identity for own-scan exclusion (default: file stem)");
  gr->add_option("--age", ga.age, "subject age, required with --n-per-class");
  gr->add_flag("--templates", ga.templates, "leave-k-out grading of every library template");
  add(gr, "--roi", f.roi, "ROI masks (default: the manifest's)");
  add(gr, "--radius", f.radius, "patch radius (0 = voxel-wise)");
  add(gr, "--n-per-class", f.n_per_class, "age-matched library size per class");
  add(gr, "--leave-out", f.leave_out, "template group size k for --templates");

  std::string maps_path;
  auto* se = app.add_subcommand("select", "elastic-net voxel selection from template grading maps");
  se->add_option("--maps", maps_path, "grading-map manifest written by 'grade --templates'")->required();
  add(se, "--roi", f.roi, "ROI masks (default: the manifest's)");
  add(se, "--rho", f.rho, "l2 weight");
  add(se, "--lambda", f.lambda, "l1 weight");
  add(se, "--slices", f.slices, "axial slices of the coefficient map to export");

  std::string features;
  std::vector<std::string> columns;
  auto* cl = app.add_subcommand("classify", "repeated stratified SVM evaluation of a feature table");
  cl->add_option("--features", features, "CSV: subject_id,class,<features>")->required()->check(CLI::ExistingFile);
  cl->add_option("--columns", columns, "feature columns to use (default: all)");
  add(cl, "--C", f.c, "SVM regularization");
  add(cl, "--n-iter", f.n_iter, "CV iterations");
  add(cl, "--test-fraction", f.test_fraction, "held-out fraction per class");
  add(cl, "--folds", f.folds, "use repeated k-fold instead of random splits");

  auto* ph = app.add_subcommand("phantom", "generate a synthetic phantom population");

  auto* pl = app.add_subcommand("pipeline", "full run: tensorize, grade, select, classify");
  add(pl, "--manifest", f.manifest, "dataset manifest");
  add_flag(pl, "--phantom", f.phantom, "generate the default phantom as the dataset");
  add(pl, "--roi", f.roi, "ROI masks (default: the manifest's)");
  add(pl, "--radius", f.radius, "patch radius (0 = voxel-wise)");
  add(pl, "--radii", f.radii, "compare several patch radii");
  add(pl, "--n-per-class", f.n_per_class, "age-matched library size per class");
  add(pl, "--leave-out", f.leave_out, "template group size k");
  add(pl, "--rho", f.rho, "l2 weight");
  add(pl, "--lambda", f.lambda, "l1 weight");
  add(pl, "--C", f.c, "SVM regularization");
  add(pl, "--n-iter", f.n_iter, "CV iterations");
  add(pl, "--test-fraction", f.test_fraction, "held-out fraction per class");
  add(pl, "--folds", f.folds, "use repeated k-fold instead of random splits");
  add(pl, "--slices", f.slices, "axial slices of the coefficient maps to export");
  add_flag(pl, "--no-cache", f.no_cache, "do not reuse cached log-tensor fields");

  std::string input, axis = "z", stem;
  std::vector<std::size_t> indices;
  auto* ex = app.add_subcommand("export-slices", "PGM/PPM/CSV slices of a scalar map");
  ex->add_option("--input", input, "scalar volume")->required();
  ex->add_option("--axis", axis, "x, y or z")->check(CLI::IsMember({"x", "y", "z"}));
  ex->add_option("--index", indices, "slice indices")->required();
  ex->add_option("--stem", stem, "output file prefix (default: input stem)");

  for (auto* sub : {tz, gr, se, cl, ph, pl, ex}) sub->fallthrough();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const RunConfig cfg = resolve_config(f, ph->parsed());
    if (tz->parsed()) return cmd_tensorize(cfg, inputs, format, args);
    if (gr->parsed()) return cmd_grade(cfg, f, ga, args);
    if (se->parsed()) return cmd_select(cfg, maps_path, args);
    if (cl->parsed()) return cmd_classify(cfg, features, columns, args);
    if (ph->parsed()) return cmd_phantom(cfg, args);
    if (pl->parsed()) return cmd_pipeline(cfg);
    if (ex->parsed()) return cmd_export_slices(cfg, input, axis, indices, stem, args);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

} // namespace tensorgrade::cli
