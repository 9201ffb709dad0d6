#include "clens/world/dataset.hpp"

#include "clens/math/functions.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <stdexcept>

namespace clens {

std::vector<ConflictExample> make_candidates(const FactWorld& world, int n, std::uint64_t seed) {
  if (world.n_attributes() < 2) throw std::invalid_argument("dataset: counterfactual scenes need two attributes");
  std::mt19937_64 rng(seed);
  std::vector<ConflictExample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int s = i % world.n_subjects();
    std::vector<int> others;
    for (int a = 0; a < world.n_attributes(); ++a) {
      if (a != world.fact(s)) others.push_back(a);
    }
    std::uniform_int_distribution<std::size_t> pick(0, others.size() - 1);
    const int depicted = others[pick(rng)];

    ConflictExample ex;
    ex.id = i;
    ex.scene = render_scene(world, s, depicted, rng);
    ex.prompt.visual = ex.scene.cells;
    ex.prompt.text = {world.subject_token(s), world.relation_token()};
    ex.s_fact = {world.attribute_token(world.fact(s))};
    ex.s_cofa = {world.attribute_token(depicted)};

    std::vector<int> distractors;
    for (int a : others) {
      if (a != depicted) distractors.push_back(a);
    }
    std::shuffle(distractors.begin(), distractors.end(), rng);
    const auto n_extra = std::min<std::size_t>(distractors.size(), static_cast<std::size_t>(world.config().n_distractors));
    for (std::size_t j = 0; j < n_extra; ++j) ex.s_cofa.push_back(world.attribute_token(distractors[j]));
    ex.ground_truth_patches = ex.scene.attribute_patches;
    out.push_back(std::move(ex));
  }
  return out;
}

namespace {

VectorXd final_probs(const ModelWeights& weights, const TokenSequence& seq) {
  const ForwardTrace trace = forward(weights, seq);
  return softmax_rows(trace.logits.bottomRows(1)).transpose();
}

int argmax_over(const VectorXd& p, const std::vector<int>& tokens) {
  if (tokens.empty()) throw std::invalid_argument("select_tokens: empty candidate set");
  int best = tokens.front();
  for (int t : tokens) {
    if (p(t) > p(best)) best = t;
  }
  return best;
}

double max_over(const VectorXd& p, const std::vector<int>& tokens) {
  double m = -1.0;
  for (int t : tokens) m = std::max(m, p(t));
  return m;
}

}  // namespace

std::pair<int, int> select_tokens(const ModelWeights& weights, const ConflictExample& example) {
  if (example.s_fact.empty() || example.s_cofa.empty()) throw std::invalid_argument("select_tokens: empty candidate set");
  if (example.s_fact.size() == 1 && example.s_cofa.size() == 1) return {example.s_fact.front(), example.s_cofa.front()};
  const VectorXd text_only = final_probs(weights, example.text_prompt());
  const VectorXd multimodal = final_probs(weights, example.prompt);
  return {argmax_over(text_only, example.s_fact), argmax_over(multimodal, example.s_cofa)};
}

std::vector<ConflictExample> filter_ambiguous(const ModelWeights& weights, std::vector<ConflictExample> candidates,
                                              FilterStats* stats) {
  FilterStats local;
  local.n_candidates = static_cast<int>(candidates.size());
  std::vector<ConflictExample> kept;
  for (ConflictExample& ex : candidates) {
    const VectorXd text_only = final_probs(weights, ex.text_prompt());
    const VectorXd multimodal = final_probs(weights, ex.prompt);
    ex.t_fact = argmax_over(text_only, ex.s_fact);
    ex.t_cofa = argmax_over(multimodal, ex.s_cofa);
    if (max_over(text_only, ex.s_cofa) > max_over(text_only, ex.s_fact)) {
      ++local.dropped_ambiguous;
      continue;
    }
    if (!(multimodal(ex.t_cofa) > text_only(ex.t_cofa))) {
      ++local.dropped_not_induced;
      continue;
    }
    kept.push_back(std::move(ex));
  }
  local.retained = static_cast<int>(kept.size());
  if (stats) *stats = local;
  return kept;
}

Dataset build_dataset(const ModelWeights& weights, const FactWorld& world, int n_candidates, std::uint64_t seed) {
  Dataset d;
  d.examples = filter_ambiguous(weights, make_candidates(world, n_candidates, seed), &d.stats);
  return d;
}

std::string example_to_json(const ConflictExample& ex) {
  nlohmann::ordered_json j;
  j["id"] = ex.id;
  j["grid"] = {ex.scene.rows, ex.scene.cols};
  std::vector<std::vector<int>> cells;
  for (int r = 0; r < ex.scene.rows; ++r) {
    cells.emplace_back(ex.scene.cells.begin() + r * ex.scene.cols, ex.scene.cells.begin() + (r + 1) * ex.scene.cols);
  }
  j["scene"] = cells;
  j["subject"] = ex.scene.subject;
  j["depicted"] = ex.scene.attribute;
  j["counterfactual"] = ex.scene.counterfactual;
  j["visual"] = ex.prompt.visual;
  j["text"] = ex.prompt.text;
  j["s_fact"] = ex.s_fact;
  j["s_cofa"] = ex.s_cofa;
  j["t_fact"] = ex.t_fact;
  j["t_cofa"] = ex.t_cofa;
  j["ground_truth"] = ex.ground_truth_patches;
  return j.dump();
}

ConflictExample example_from_json(const std::string& line) {
  const auto j = nlohmann::json::parse(line);
  ConflictExample ex;
  ex.id = j.at("id").get<int>();
  const auto grid = j.at("grid").get<std::vector<int>>();
  if (grid.size() != 2) throw std::runtime_error("dataset: grid must have two dimensions");
  ex.scene.rows = grid[0];
  ex.scene.cols = grid[1];
  for (const auto& row : j.at("scene")) {
    const auto r = row.get<std::vector<int>>();
    if (static_cast<int>(r.size()) != ex.scene.cols) throw std::runtime_error("dataset: ragged scene grid");
    ex.scene.cells.insert(ex.scene.cells.end(), r.begin(), r.end());
  }
  if (static_cast<int>(ex.scene.cells.size()) != ex.scene.rows * ex.scene.cols) {
    throw std::runtime_error("dataset: scene grid does not match its dimensions");
  }
  ex.scene.subject = j.at("subject").get<int>();
  ex.scene.attribute = j.at("depicted").get<int>();
  ex.scene.counterfactual = j.at("counterfactual").get<bool>();
  ex.prompt.visual = j.at("visual").get<std::vector<int>>();
  ex.prompt.text = j.at("text").get<std::vector<int>>();
  ex.s_fact = j.at("s_fact").get<std::vector<int>>();
  ex.s_cofa = j.at("s_cofa").get<std::vector<int>>();
  ex.t_fact = j.at("t_fact").get<int>();
  ex.t_cofa = j.at("t_cofa").get<int>();
  ex.ground_truth_patches = j.at("ground_truth").get<std::vector<int>>();
  ex.scene.attribute_patches = ex.ground_truth_patches;
  return ex;
}

void write_dataset(std::ostream& out, const std::vector<ConflictExample>& examples) {
  out << kDatasetHeader << "\n";
  for (const ConflictExample& ex : examples) out << example_to_json(ex) << "\n";
}

std::vector<ConflictExample> read_dataset(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kDatasetHeader) throw std::runtime_error("dataset: missing or unknown header line");
  std::vector<ConflictExample> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(example_from_json(line));
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(std::string("dataset: malformed record: ") + e.what());
    }
  }
  return out;
}

void save_dataset(const std::filesystem::path& path, const std::vector<ConflictExample>& examples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("dataset: cannot open " + path.string() + " for writing");
  write_dataset(out, examples);
}

std::vector<ConflictExample> load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("dataset: cannot open " + path.string());
  return read_dataset(in);
}

}  // namespace clens
