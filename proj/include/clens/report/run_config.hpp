#pragma once

#include "clens/train/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace clens {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CorpusConfig {
  int text_reps = 8;
  int caption_reps = 16;
  int scene_reps = 32;  // subject-only images captioned with the fact
};

struct AnalysisConfig {
  int n_candidates = 256;
  double head_fraction = 0.1;  // k as a fraction of all heads
  std::vector<double> lambda_grid{-3, -2, -1, 0, 1, 2, 3};
  std::vector<int> k_grid{0, 1, 2, 3, 4, 6, 8};
  double k_sweep_lambda = 3.0;
  int kl_tokens = 2;
  int n_random_heads = 0;  // 0 scales the reference 100-of-1024 ratio to the model
  std::vector<int> control_seeds{1, 2, 3, 4, 5};
  std::vector<double> tau_grid{1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1, 0.0};
  std::string ablation_mode = "object_only";
  bool lens_final_norm = true;
  int n_heatmaps = 4;
  std::vector<double> heatmap_taus{0.8};
};

struct RunConfig {
  static constexpr int kSchemaVersion = 1;

  std::uint64_t seed = 1;
  WorldConfig world;
  CorpusConfig corpus;
  ModelConfig model{.n_layers = 4, .n_heads = 8, .d_model = 64, .d_mlp = 256};  // vocabularies come from the world
  TrainConfig train{.learning_rate = 0.1, .batch_size = 64, .max_steps = 3000, .eval_every = 25};
  AnalysisConfig analysis;
  std::string output_dir = "conflict_lens_out";

  // Throws ConfigError on syntax errors, unknown keys, type mismatches,
  // a missing or unsupported schema_version, or invalid values.
  static RunConfig parse(std::string_view text);
  static RunConfig load(const std::filesystem::path& path);

  // Canonical text form; parse(serialize()) reproduces the config.
  std::string serialize() const;
  std::string hash() const;  // SHA-256 of serialize()

  void validate() const;

  // Per-stage seeds derived from the global seed.
  std::uint64_t derived_seed(std::string_view stage) const;
  WorldConfig world_config() const;
  TrainConfig train_config() const;
};

}  // namespace clens
