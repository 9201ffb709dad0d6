#pragma once

#include "clens/world/fact_world.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace clens {

struct ConflictExample {
  int id = 0;
  Scene scene;
  TokenSequence prompt;     // image prefix + "s REL"
  std::vector<int> s_fact;  // candidate token ids
  std::vector<int> s_cofa;
  int t_fact = -1;
  int t_cofa = -1;
  std::vector<int> ground_truth_patches;

  TokenSequence text_prompt() const { return TokenSequence{{}, prompt.text}; }

  friend bool operator==(const ConflictExample&, const ConflictExample&) = default;
};

// Counterfactual candidates: subject s, depicted attribute != fact(s),
// S_fact = {fact(s)}, S_cofa = {depicted} plus distractor attributes that
// are neither the fact nor depicted. t_fact / t_cofa are left unset.
std::vector<ConflictExample> make_candidates(const FactWorld& world, int n, std::uint64_t seed);

// t_fact = argmax over S_fact of text-only probability; t_cofa = argmax over
// S_cofa of multimodal probability.
std::pair<int, int> select_tokens(const ModelWeights& weights, const ConflictExample& example);

struct FilterStats {
  int n_candidates = 0;
  int dropped_ambiguous = 0;     // some S_cofa token beats every S_fact token text-only
  int dropped_not_induced = 0;   // the image does not raise p(t_cofa)
  int retained = 0;

  double retention() const { return n_candidates ? static_cast<double>(retained) / n_candidates : 0.0; }
};

// Applies select_tokens to every candidate and keeps the unambiguous,
// conflict-inducing ones.
std::vector<ConflictExample> filter_ambiguous(const ModelWeights& weights, std::vector<ConflictExample> candidates,
                                              FilterStats* stats = nullptr);

struct Dataset {
  std::vector<ConflictExample> examples;
  FilterStats stats;
};

Dataset build_dataset(const ModelWeights& weights, const FactWorld& world, int n_candidates, std::uint64_t seed);

inline constexpr const char* kDatasetHeader = "# clens-dataset v1";

// Line-delimited JSON records after a version header line.
void write_dataset(std::ostream& out, const std::vector<ConflictExample>& examples);
std::vector<ConflictExample> read_dataset(std::istream& in);
void save_dataset(const std::filesystem::path& path, const std::vector<ConflictExample>& examples);
std::vector<ConflictExample> load_dataset(const std::filesystem::path& path);

std::string example_to_json(const ConflictExample& example);
ConflictExample example_from_json(const std::string& line);

}  // namespace clens
