#include "tensorgrade/manifest.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

#include "json.hpp"

namespace tensorgrade {

using nlohmann::ordered_json;

std::filesystem::path Manifest::resolve(const std::filesystem::path& p) const {
  return p.is_absolute() ? p : base_dir / p;
}

Manifest Manifest::read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path.string() + ": cannot open manifest");
  ordered_json j;
  try {
    j = ordered_json::parse(in);
  } catch (const ordered_json::exception& e) {
    throw std::runtime_error(path.string() + ": invalid manifest JSON: " + e.what());
  }
  Manifest m;
  m.base_dir = path.parent_path();
  try {
    if (j.contains("roi")) {
      if (j["roi"].is_string())
        m.roi.emplace_back(j["roi"].get<std::string>());
      else
        for (const auto& r : j["roi"]) m.roi.emplace_back(r.get<std::string>());
    }
    if (!j.contains("entries")) throw std::runtime_error("missing 'entries'");
    std::set<std::pair<std::string, std::string>> seen;
    for (const auto& e : j.at("entries")) {
      ManifestEntry me;
      me.path = e.at("path").get<std::string>();
      me.meta.subject_id = e.at("subject_id").get<std::string>();
      me.meta.scan_id = e.value("scan_id", std::string("0"));
      me.meta.age = e.at("age").get<double>();
      me.meta.label = label_from_int(e.at("label").get<int>());
      me.meta.validate();
      me.role = e.value("role", std::string(me.meta.label == Label::Unlabeled ? "query" : "template"));
      if (me.role != "template" && me.role != "query")
        throw std::runtime_error("entry " + me.meta.subject_id + ": role must be template or query");
      me.group = e.value("group", std::string());
      if (e.contains("volume") && !e["volume"].is_null()) me.volume = e["volume"].get<double>();
      if (!seen.emplace(me.meta.subject_id, me.meta.scan_id).second)
        throw std::runtime_error("duplicate entry " + me.meta.subject_id + "/" + me.meta.scan_id);
      m.entries.push_back(std::move(me));
    }
  } catch (const std::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
  return m;
}

void Manifest::write(const std::filesystem::path& path) const {
  ordered_json j;
  j["roi"] = ordered_json::array();
  for (const auto& r : roi) j["roi"].push_back(r.generic_string());
  j["entries"] = ordered_json::array();
  for (const auto& e : entries) {
    ordered_json row = {{"path", e.path.generic_string()},
                        {"subject_id", e.meta.subject_id},
                        {"scan_id", e.meta.scan_id},
                        {"age", e.meta.age},
                        {"label", to_int(e.meta.label)},
                        {"role", e.role}};
    if (!e.group.empty()) row["group"] = e.group;
    if (e.volume) row["volume"] = *e.volume;
    j["entries"].push_back(std::move(row));
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

} // namespace tensorgrade
