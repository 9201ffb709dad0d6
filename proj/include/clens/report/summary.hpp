#pragma once

#include <json.hpp>

#include <filesystem>
#include <stdexcept>
#include <string>

namespace clens {

class MissingArtifact : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// summary.json in the output directory: config hash, per-stage metrics and
// wall-clock time, and a manifest of every artifact with its SHA-256.
class RunSummary {
 public:
  static constexpr const char* kFileName = "summary.json";

  RunSummary(std::filesystem::path out_dir, std::string config_hash);

  // Loads an existing summary from out_dir. Records written under a
  // different config hash are dropped, so their artifacts count as missing.
  static RunSummary open(const std::filesystem::path& out_dir, const std::string& config_hash);

  void set_stage(const std::string& stage, nlohmann::ordered_json metrics, double wall_seconds);
  bool has_stage(const std::string& stage) const;
  const nlohmann::ordered_json& stage_metrics(const std::string& stage) const;

  // Records the file (path relative to out_dir) with its checksum.
  void record_artifact(const std::string& relative, const std::string& stage);

  // Throws MissingArtifact unless the file exists, is in the manifest under
  // the current config, and still matches its recorded checksum.
  std::filesystem::path require(const std::string& relative) const;

  void save() const;

  const nlohmann::ordered_json& json() const { return doc_; }
  const std::filesystem::path& out_dir() const { return out_dir_; }

  // The summary without wall-clock fields, for reproducibility checks.
  static nlohmann::ordered_json without_timings(nlohmann::ordered_json doc);

 private:
  std::filesystem::path out_dir_;
  std::string config_hash_;
  nlohmann::ordered_json doc_;
};

}  // namespace clens
