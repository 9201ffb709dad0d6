#pragma once

#include "clens/model/transformer.hpp"

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace clens {

struct WorldConfig {
  int n_subjects = 32;
  int n_attributes = 16;
  int grid_rows = 4;
  int grid_cols = 4;
  // Relative weights for drawing 1, 2 or 3 attribute patches per scene.
  std::array<double, 3> patch_count_weights{1.0, 1.0, 1.0};
  int n_distractors = 3;
  std::uint64_t seed = 7;

  int n_patches() const { return grid_rows * grid_cols; }
  void validate() const;
};

// A closed world of subjects, each with one canonical attribute, plus the
// token and patch-code vocabularies built on top of it.
//
// Text vocabulary:  [0, S) subjects, [S, S+A) attributes, REL, EOS.
// Patch codes:      0 background, [1, 1+S) subject objects, [1+S, 1+S+A) attribute objects.
class FactWorld {
 public:
  static FactWorld generate(const WorldConfig& config);

  const WorldConfig& config() const { return config_; }
  int n_subjects() const { return config_.n_subjects; }
  int n_attributes() const { return config_.n_attributes; }
  int fact(int subject) const { return facts_.at(static_cast<std::size_t>(subject)); }
  const std::vector<int>& facts() const { return facts_; }

  int subject_token(int s) const { return s; }
  int attribute_token(int a) const { return n_subjects() + a; }
  int relation_token() const { return n_subjects() + n_attributes(); }
  int eos_token() const { return relation_token() + 1; }
  int vocab_size() const { return eos_token() + 1; }
  bool is_attribute_token(int token) const { return token >= n_subjects() && token < relation_token(); }
  int attribute_of_token(int token) const { return token - n_subjects(); }

  static constexpr int background_code() { return 0; }
  int subject_code(int s) const { return 1 + s; }
  int attribute_code(int a) const { return 1 + n_subjects() + a; }
  int n_patch_codes() const { return 1 + n_subjects() + n_attributes(); }

  std::string token_name(int token) const;
  std::string code_name(int code) const;

  // Model config whose vocabularies match this world.
  ModelConfig model_config(ModelConfig base) const;

 private:
  WorldConfig config_;
  std::vector<int> facts_;
};

struct Scene {
  int rows = 0;
  int cols = 0;
  std::vector<int> cells;  // patch codes, row-major
  int subject = 0;
  int attribute = 0;       // depicted attribute
  bool counterfactual = false;
  std::vector<int> attribute_patches;  // ascending cell indices holding the attribute object

  friend bool operator==(const Scene&, const Scene&) = default;
};

// Places the subject in one cell and a 4-connected cluster of 1-3 attribute
// objects elsewhere; every other cell is background.
Scene render_scene(const FactWorld& world, int subject, int attribute, std::mt19937_64& rng);

// Cell codes of an image showing only the subject, with no attribute object.
std::vector<int> render_subject_only(const FactWorld& world, int subject, std::mt19937_64& rng);

// Recovers the depicted attribute from the cell codes alone.
int read_scene_attribute(const FactWorld& world, const Scene& scene);

}  // namespace clens
