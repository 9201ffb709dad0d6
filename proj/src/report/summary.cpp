#include "clens/report/summary.hpp"

#include "clens/report/checksum.hpp"

#include <fstream>

namespace clens {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

RunSummary::RunSummary(fs::path out_dir, std::string config_hash)
    : out_dir_(std::move(out_dir)), config_hash_(std::move(config_hash)) {
  doc_["schema_version"] = 1;
  doc_["config_hash"] = config_hash_;
  doc_["stages"] = ordered_json::object();
  doc_["manifest"] = ordered_json::object();
}

RunSummary RunSummary::open(const fs::path& out_dir, const std::string& config_hash) {
  RunSummary s(out_dir, config_hash);
  const fs::path path = out_dir / kFileName;
  if (!fs::exists(path)) return s;
  std::ifstream in(path);
  ordered_json doc;
  try {
    doc = ordered_json::parse(in);
  } catch (const nlohmann::json::exception&) {
    return s;  // unreadable summaries are rebuilt from scratch
  }
  if (doc.value("config_hash", std::string()) != config_hash) {
    // Another configuration produced these artifacts; keep the record for
    // reference only.
    s.doc_["previous_config_hash"] = doc.value("config_hash", std::string());
    return s;
  }
  if (doc.contains("stages") && doc["stages"].is_object()) s.doc_["stages"] = doc["stages"];
  if (doc.contains("manifest") && doc["manifest"].is_object()) s.doc_["manifest"] = doc["manifest"];
  return s;
}

void RunSummary::set_stage(const std::string& stage, ordered_json metrics, double wall_seconds) {
  ordered_json entry;
  entry["metrics"] = std::move(metrics);
  entry["wall_seconds"] = wall_seconds;
  doc_["stages"][stage] = std::move(entry);
}

bool RunSummary::has_stage(const std::string& stage) const { return doc_["stages"].contains(stage); }

const ordered_json& RunSummary::stage_metrics(const std::string& stage) const {
  if (!has_stage(stage)) throw MissingArtifact("summary has no record of stage '" + stage + "'");
  return doc_["stages"][stage]["metrics"];
}

void RunSummary::record_artifact(const std::string& relative, const std::string& stage) {
  const fs::path path = out_dir_ / relative;
  ordered_json entry;
  entry["stage"] = stage;
  entry["sha256"] = sha256_file(path);
  entry["bytes"] = static_cast<std::uint64_t>(fs::file_size(path));
  doc_["manifest"][relative] = std::move(entry);
}

fs::path RunSummary::require(const std::string& relative) const {
  const fs::path path = out_dir_ / relative;
  if (!fs::exists(path)) throw MissingArtifact("missing artifact " + path.string());
  const auto& manifest = doc_["manifest"];
  if (!manifest.contains(relative)) {
    throw MissingArtifact("artifact " + path.string() + " was not produced under the current configuration");
  }
  if (manifest[relative]["sha256"].get<std::string>() != sha256_file(path)) {
    throw MissingArtifact("artifact " + path.string() + " changed since it was recorded");
  }
  return path;
}

void RunSummary::save() const {
  fs::create_directories(out_dir_);
  const fs::path tmp = out_dir_ / (std::string(kFileName) + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("summary: cannot write " + tmp.string());
    out << doc_.dump(2) << "\n";
  }
  fs::rename(tmp, out_dir_ / kFileName);
}

ordered_json RunSummary::without_timings(ordered_json doc) {
  if (doc.contains("stages")) {
    for (auto& [name, stage] : doc["stages"].items()) stage.erase("wall_seconds");
  }
  return doc;
}

}  // namespace clens
