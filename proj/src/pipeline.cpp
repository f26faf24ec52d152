#include "tensorgrade/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <set>
#include <stdexcept>

#include "tensorgrade/io.hpp"
#include "tensorgrade/parallel.hpp"
#include "tensorgrade/slices.hpp"

namespace tensorgrade {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::string disp_sign_name(DispSign s) { return s == DispSign::Minus ? "minus" : "plus"; }

DispSign disp_sign_from_string(const std::string& s) {
  if (s == "minus") return DispSign::Minus;
  if (s == "plus") return DispSign::Plus;
  throw std::invalid_argument("disp_sign must be 'minus' or 'plus', got '" + s + "'");
}

} // namespace

RunConfig RunConfig::from_json(const json& j) {
  static const std::set<std::string> known = {
      "manifest", "roi",         "out_dir",       "phantom",   "radius",    "radii",  "n_per_class",
      "rho",      "lambda",      "C",             "n_iter",    "test_fraction", "leave_out", "folds",
      "distance_mode", "disp_sign", "nonneg",     "seed",      "threads",   "cache",  "slices"};
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) throw std::invalid_argument("config: unknown key '" + k + "'");
  RunConfig c;
  if (j.contains("manifest")) c.manifest = j["manifest"].get<std::string>();
  if (j.contains("roi")) {
    if (j["roi"].is_string())
      c.roi.emplace_back(j["roi"].get<std::string>());
    else
      for (const auto& r : j["roi"]) c.roi.emplace_back(r.get<std::string>());
  }
  if (j.contains("out_dir")) c.out_dir = j["out_dir"].get<std::string>();
  if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("phantom") && !j["phantom"].is_null()) {
    json p = j["phantom"];
    if (!p.contains("seed")) p["seed"] = c.seed;
    c.phantom = PhantomConfig::from_json(p);
  }
  auto get = [&](const char* k, auto& dst) {
    if (j.contains(k)) dst = j[k].get<std::remove_reference_t<decltype(dst)>>();
  };
  get("radius", c.radius);
  get("radii", c.radii);
  get("n_per_class", c.n_per_class);
  get("rho", c.rho);
  get("lambda", c.lambda);
  get("C", c.c);
  get("n_iter", c.n_iter);
  get("test_fraction", c.test_fraction);
  get("leave_out", c.leave_out);
  get("folds", c.folds);
  get("nonneg", c.nonneg);
  get("threads", c.threads);
  get("cache", c.cache);
  get("slices", c.slices);
  if (j.contains("distance_mode")) c.distance_mode = distance_mode_from_string(j["distance_mode"].get<std::string>());
  if (j.contains("disp_sign")) c.disp_sign = disp_sign_from_string(j["disp_sign"].get<std::string>());
  return c;
}

ordered_json RunConfig::to_json() const {
  ordered_json j;
  j["manifest"] = manifest.generic_string();
  j["roi"] = ordered_json::array();
  for (const auto& r : roi) j["roi"].push_back(r.generic_string());
  j["phantom"] = phantom ? phantom->to_json() : ordered_json(nullptr);
  j["radius"] = radius;
  j["radii"] = radius_list();
  j["n_per_class"] = n_per_class;
  j["rho"] = rho;
  j["lambda"] = lambda;
  j["C"] = c;
  j["n_iter"] = n_iter;
  j["test_fraction"] = test_fraction;
  j["leave_out"] = leave_out;
  j["folds"] = folds;
  j["distance_mode"] = to_string(distance_mode);
  j["disp_sign"] = disp_sign_name(disp_sign);
  j["nonneg"] = nonneg;
  j["seed"] = seed;
  j["cache"] = cache;
  j["slices"] = slices;
  return j;
}

std::vector<std::size_t> RunConfig::radius_list() const { return radii.empty() ? std::vector<std::size_t>{radius} : radii; }

namespace {

std::uint64_t fnv1a(const fs::path& p, std::uint64_t h) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError(IoError::Kind::Unreadable, p.string() + ": cannot open for hashing");
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ull;
    }
  }
  return h;
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

Volume round_to_float(const Volume& v) {
  std::vector<double> d(v.data().begin(), v.data().end());
  for (auto& x : d) x = static_cast<double>(static_cast<float>(x));
  return Volume(v.dims(), v.spacing(), v.channels(), std::move(d));
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error(p.string() + ": cannot open for writing");
  out << text;
  if (!out) throw std::runtime_error(p.string() + ": write failed");
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

} // namespace

std::string content_hash(const fs::path& volume_path) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  if (volume_path.extension() == ".nii") return hex(fnv1a(volume_path, h));
  h = fnv1a(raw_sidecar_path(volume_path), h);
  return hex(fnv1a(raw_payload_path(volume_path), h));
}

Volume tensorize_cached(const fs::path& displacement, DispSign sign, const BoundingBox& box, const fs::path* cache_dir,
                        TensorizeStats& stats, bool& hit, std::string* hash) {
  const std::string digest = content_hash(displacement);
  if (hash) *hash = digest;
  hit = false;
  std::string key = digest + "-" + disp_sign_name(sign);
  for (int a = 0; a < 3; ++a) key += "-" + std::to_string(box.lo[a]) + "_" + std::to_string(box.hi[a]);
  if (cache_dir) {
    const fs::path entry = *cache_dir / (key + ".json");
    const fs::path stats_path = *cache_dir / (key + ".stats.json");
    if (fs::exists(entry) && fs::exists(raw_payload_path(entry)) && fs::exists(stats_path)) {
      try {
        Volume v = load_volume(entry);
        std::ifstream in(stats_path);
        const json s = json::parse(in);
        stats.voxels += s.at("voxels").get<std::size_t>();
        stats.clamped += s.at("clamped").get<std::size_t>();
        hit = true;
        return v;
      } catch (const std::exception&) {
        // Damaged entry from an interrupted run; recompute below.
      }
    }
  }
  const Volume u = load_volume(displacement);
  TensorizeStats local;
  const Volume cropped = round_to_float(crop(tensorize(u, sign, &local), box));
  stats.voxels += local.voxels;
  stats.clamped += local.clamped;
  if (cache_dir) {
    fs::create_directories(*cache_dir);
    const fs::path tmp = *cache_dir / (key + ".tmp.json");
    save_volume(cropped, tmp);
    write_text(*cache_dir / (key + ".stats.json"),
               json{{"voxels", local.voxels}, {"clamped", local.clamped}}.dump() + "\n");
    fs::rename(raw_payload_path(tmp), raw_payload_path(*cache_dir / (key + ".json")));
    fs::rename(raw_sidecar_path(tmp), raw_sidecar_path(*cache_dir / (key + ".json")));
  }
  return cropped;
}

namespace {

struct LibraryModel {
  TemplateLibrary library;
  CoefficientMap beta;
  std::size_t index = 0;
};

double volume_from_log_field(const Volume& log_field, const RoiMask& mask) {
  double total = 0.0;
  for (auto i : mask.voxels()) {
    const auto v = log_field.voxel(i);
    total += std::exp(v[0] + v[1] + v[2]);
  }
  const Spacing& s = log_field.spacing();
  return total * s[0] * s[1] * s[2];
}

void write_report(const EvaluationReport& rep, const fs::path& stem) {
  rep.write_json(fs::path(stem.string() + ".json"));
  rep.write_csv(fs::path(stem.string() + ".csv"));
}

EvaluationReport evaluate(const FeatureTable& table, const std::vector<std::string>& columns, const RunConfig& cfg,
                          unsigned threads, const ordered_json& extra) {
  CvOptions cv;
  cv.n_iter = cfg.n_iter;
  cv.test_fraction = cfg.test_fraction;
  cv.seed = cfg.seed;
  cv.c = cfg.c;
  cv.folds = cfg.folds;
  cv.threads = threads;
  EvaluationReport rep = stratified_cv(table.select(columns), cv);
  rep.config["run"] = cfg.to_json();
  for (const auto& [k, v] : extra.items()) rep.config[k] = v;
  return rep;
}

ordered_json summary_json(const EvaluationReport& r) {
  return {{"ACC", {{"mean", r.acc.mean}, {"sem", r.acc.sem}, {"sd", r.acc.sd}}},
          {"SEN", {{"mean", r.sen.mean}, {"sem", r.sen.sem}, {"sd", r.sen.sd}}},
          {"SPE", {{"mean", r.spe.mean}, {"sem", r.spe.sem}, {"sd", r.spe.sd}}}};
}

} // namespace

PipelineResult run_pipeline(const RunConfig& cfg) {
  const unsigned threads = resolve_threads(cfg.threads);
  fs::create_directories(cfg.out_dir);
  PipelineResult result;

  // Dataset.
  fs::path manifest_path = cfg.manifest;
  if (cfg.phantom) {
    if (!manifest_path.empty()) throw std::invalid_argument("config: give either 'manifest' or 'phantom', not both");
    manifest_path = generate_population(*cfg.phantom, cfg.out_dir / "phantom", threads).manifest_path;
  }
  if (manifest_path.empty()) throw std::invalid_argument("config: no dataset ('manifest' or 'phantom')");
  result.manifest_path = manifest_path;
  const Manifest manifest = Manifest::read(manifest_path);

  // ROI: bounding box of the union of all masks.
  std::vector<RoiMask> masks;
  if (!cfg.roi.empty())
    for (const auto& r : cfg.roi) masks.push_back(load_mask(r));
  else
    for (const auto& r : manifest.roi) masks.push_back(load_mask(manifest.resolve(r)));
  if (masks.empty()) throw std::invalid_argument("config: no ROI mask given");
  const RoiMask roi_full = union_bbox(masks);
  if (!roi_full.bbox()) throw std::invalid_argument("ROI mask is empty");
  result.roi_box = *roi_full.bbox();
  result.roi = crop(roi_full, result.roi_box);

  // Log-tensor fields, cropped to the ROI box.
  const fs::path cache_dir = cfg.out_dir / "cache";
  std::vector<SubjectData> subjects(manifest.entries.size());
  std::vector<TensorizeStats> stats(subjects.size());
  std::vector<char> hits(subjects.size(), 0);
  parallel_for(subjects.size(), threads, [&](std::size_t i) {
    const auto& e = manifest.entries[i];
    const fs::path path = manifest.resolve(e.path);
    if (!fs::exists(raw_sidecar_path(path)) && !fs::exists(path))
      throw std::runtime_error("manifest entry " + e.meta.subject_id + "/" + e.meta.scan_id + ": missing file " +
                               path.string());
    bool hit = false;
    Volume v = tensorize_cached(path, cfg.disp_sign, result.roi_box, cfg.cache ? &cache_dir : nullptr, stats[i], hit,
                                &subjects[i].content_hash);
    if (v.dims() != result.roi.dims())
      throw std::runtime_error("manifest entry " + e.meta.subject_id + ": field does not cover the ROI");
    subjects[i].entry = e;
    subjects[i].volume = e.volume ? *e.volume : volume_from_log_field(v, result.roi);
    subjects[i].log_field = std::make_shared<const Volume>(std::move(v));
    hits[i] = hit;
  });
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    result.tensorize.voxels += stats[i].voxels;
    result.tensorize.clamped += stats[i].clamped;
    result.cache_hits += static_cast<std::size_t>(hits[i]);
  }

  std::vector<TemplateEntry> pool;
  std::vector<std::size_t> queries;
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    const auto& s = subjects[i];
    if (s.entry.role == "template") {
      if (s.entry.meta.label == Label::Unlabeled)
        throw std::runtime_error("manifest entry " + s.entry.meta.subject_id + ": template without a +-1 label");
      pool.push_back({s.log_field, s.entry.meta});
    } else if (s.entry.meta.label != Label::Disease) {
      queries.push_back(i);
    }
  }
  if (queries.empty()) throw std::runtime_error("manifest has no query subjects to classify");

  // Volume-only evaluation does not depend on the patch radius.
  std::vector<FeatureRow> volume_rows;
  for (auto q : queries) {
    const auto& s = subjects[q];
    volume_rows.push_back({s.entry.meta.subject_id, {s.volume}, s.entry.meta.label == Label::Unlabeled ? 1 : -1});
  }
  const FeatureTable volume_table({"volume"}, volume_rows);
  const EvaluationReport volume_report = evaluate(volume_table, {"volume"}, cfg, threads, {{"feature_set", "volume"}});
  write_report(volume_report, cfg.out_dir / "volume");

  ordered_json summary;
  summary["roi_box"] = {{"lo", result.roi_box.lo}, {"hi", result.roi_box.hi}};
  summary["roi_voxels"] = result.roi.count();
  summary["tensorize"] = {{"voxels", result.tensorize.voxels}, {"clamped", result.tensorize.clamped}};
  summary["queries"] = queries.size();
  summary["templates"] = pool.size();
  summary["volume"] = summary_json(volume_report);
  std::string table2 = "radius,patch,ACC,ACC_sem,SEN,SEN_sem,SPE,SPE_sem\n";

  for (const std::size_t radius : cfg.radius_list()) {
    RadiusResult rr;
    rr.radius = radius;
    const fs::path rdir = cfg.out_dir / ("r" + std::to_string(radius));
    fs::create_directories(rdir);

    // One model per distinct library.
    std::map<std::string, std::shared_ptr<LibraryModel>> models;
    std::vector<std::shared_ptr<LibraryModel>> query_model(queries.size());
    std::vector<std::shared_ptr<LibraryModel>> model_order;
    for (std::size_t qi = 0; qi < queries.size(); ++qi) {
      const auto& meta = subjects[queries[qi]].entry.meta;
      TemplateLibrary lib = build_library(pool, meta, cfg.n_per_class, result.roi);
      auto& slot = models[lib.key()];
      if (!slot) {
        slot = std::make_shared<LibraryModel>(LibraryModel{std::move(lib), {}, model_order.size()});
        model_order.push_back(slot);
      }
      query_model[qi] = slot;
    }
    ElasticNetOptions en;
    en.rho = cfg.rho;
    en.lambda = cfg.lambda;
    en.nonneg = cfg.nonneg;
    for (auto& m : model_order) {
      const auto maps = grade_templates(m->library, radius, cfg.leave_out, cfg.distance_mode, threads);
      std::vector<double> y;
      for (const auto& e : m->library.entries()) y.push_back(static_cast<double>(to_int(e.meta.label)));
      m->beta = elastic_net_fit(design_matrix(maps, y), en);
      rr.coefficients.push_back(m->beta);
      for (std::size_t t = 0; t < maps.size(); ++t) {
        const std::string& id = m->library.entries()[t].meta.subject_id;
        if (rr.template_grade.count(id)) continue;
        rr.template_grade[id] = global_grading(maps[t], m->beta).value;
        rr.template_mean_grade[id] = maps[t].mean();
      }
    }
    std::string tcsv = "subject_id,label,grading,mean_grade\n";
    for (const auto& e : pool) {
      const auto it = rr.template_grade.find(e.meta.subject_id);
      if (it == rr.template_grade.end()) continue;
      tcsv += e.meta.subject_id + "," + std::to_string(to_int(e.meta.label)) + "," + fmt(it->second) + "," +
              fmt(rr.template_mean_grade[e.meta.subject_id]) + "\n";
    }
    write_text(rdir / "templates.csv", tcsv);

    std::vector<GlobalGrade> grades(queries.size());
    std::vector<double> means(queries.size());
    parallel_for(queries.size(), threads, [&](std::size_t qi) {
      const auto& s = subjects[queries[qi]];
      const GradingMap g = grade_map(*s.log_field, query_model[qi]->library, radius, cfg.distance_mode, 1);
      try {
        grades[qi] = global_grading(g, query_model[qi]->beta);
      } catch (const SelectionError& e) {
        throw std::runtime_error("subject " + s.entry.meta.subject_id + ": " + e.what());
      }
      means[qi] = g.mean();
    });

    std::vector<FeatureRow> rows;
    for (std::size_t qi = 0; qi < queries.size(); ++qi) {
      const auto& s = subjects[queries[qi]];
      rows.push_back(
          {s.entry.meta.subject_id, {grades[qi].value, s.volume}, s.entry.meta.label == Label::Unlabeled ? 1 : -1});
      rr.mean_grade[s.entry.meta.subject_id] = means[qi];
      if (grades[qi].literal) rr.literal_grade[s.entry.meta.subject_id] = *grades[qi].literal;
    }
    rr.features = FeatureTable({"grading", "volume"}, std::move(rows));
    rr.features.write_csv(rdir / "features.csv");

    const ordered_json extra = {{"radius", radius}, {"patch", std::to_string(2 * radius + 1) + "x" +
                                                                  std::to_string(2 * radius + 1) + "x" +
                                                                  std::to_string(2 * radius + 1)}};
    ordered_json tensor_extra = extra, combined_extra = extra;
    tensor_extra["feature_set"] = "tensor";
    combined_extra["feature_set"] = "volume+tensor";
    rr.tensor = evaluate(rr.features, {"grading"}, cfg, threads, tensor_extra);
    rr.combined = evaluate(rr.features, {"volume", "grading"}, cfg, threads, combined_extra);
    rr.volume = volume_report;
    write_report(rr.tensor, rdir / "tensor");
    write_report(rr.combined, rdir / "volume_tensor");

    ordered_json coef_info = ordered_json::array();
    for (std::size_t k = 0; k < rr.coefficients.size(); ++k) {
      const auto& b = rr.coefficients[k];
      const std::string stem = "coefficients_lib" + std::to_string(k);
      b.write_csv(rdir / (stem + ".csv"), result.roi_box.lo);
      save_volume(b.to_volume(), rdir / (stem + ".json"));
      if (!cfg.slices.empty()) export_slices(b.to_volume(), Axis::Z, cfg.slices, rdir / "slices", stem);
      coef_info.push_back({{"nonzero", b.nonzero.size()}, {"converged", b.converged}, {"sweeps", b.sweeps}});
    }

    const std::string patch = extra["patch"];
    table2 += std::to_string(radius) + "," + patch + "," + fmt(rr.tensor.acc.mean) + "," + fmt(rr.tensor.acc.sem) + "," +
              fmt(rr.tensor.sen.mean) + "," + fmt(rr.tensor.sen.sem) + "," + fmt(rr.tensor.spe.mean) + "," +
              fmt(rr.tensor.spe.sem) + "\n";
    summary["radii"][std::to_string(radius)] = {{"tensor", summary_json(rr.tensor)},
                                                {"volume_tensor", summary_json(rr.combined)},
                                                {"libraries", coef_info}};
    result.radii.push_back(std::move(rr));
  }

  write_text(cfg.out_dir / "patch_size.csv", table2);
  write_text(cfg.out_dir / "summary.json", summary.dump(2) + "\n");

  ordered_json run;
  run["tool"] = "tensorgrade";
  run["config"] = cfg.to_json();
  run["out_dir"] = cfg.out_dir.generic_string();
  run["threads"] = threads;
  run["manifest"] = manifest_path.generic_string();
  run["inputs"] = ordered_json::array();
  for (const auto& s : subjects)
    run["inputs"].push_back({{"subject_id", s.entry.meta.subject_id},
                             {"scan_id", s.entry.meta.scan_id},
                             {"path", s.entry.path.generic_string()},
                             {"hash", s.content_hash}});
  run["cache_hits"] = result.cache_hits;
  run["tensorize"] = summary["tensorize"];
  write_text(cfg.out_dir / "run.json", run.dump(2) + "\n");
  return result;
}

} // namespace tensorgrade
