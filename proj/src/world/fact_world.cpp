#include "clens/world/fact_world.hpp"

#include <algorithm>
#include <stdexcept>

namespace clens {

void WorldConfig::validate() const {
  if (n_subjects < 1) throw std::invalid_argument("world: need at least one subject");
  if (n_attributes < 1) throw std::invalid_argument("world: need at least one attribute");
  if (grid_rows < 1 || grid_cols < 1) throw std::invalid_argument("world: grid must be at least 1x1");
  if (n_patches() < 4) throw std::invalid_argument("world: grid needs room for a subject and three attribute patches");
  double total = 0.0;
  for (double w : patch_count_weights) {
    if (w < 0.0) throw std::invalid_argument("world: patch count weights must be non-negative");
    total += w;
  }
  if (!(total > 0.0)) throw std::invalid_argument("world: patch count weights sum to zero");
  if (n_distractors < 0) throw std::invalid_argument("world: n_distractors must be >= 0");
}

FactWorld FactWorld::generate(const WorldConfig& config) {
  config.validate();
  FactWorld w;
  w.config_ = config;
  std::mt19937_64 rng(config.seed);
  // Balanced assignment: every attribute is the fact of roughly S/A subjects.
  std::vector<int> pool;
  while (static_cast<int>(pool.size()) < config.n_subjects) {
    for (int a = 0; a < config.n_attributes && static_cast<int>(pool.size()) < config.n_subjects; ++a) pool.push_back(a);
  }
  std::shuffle(pool.begin(), pool.end(), rng);
  w.facts_ = std::move(pool);
  return w;
}

std::string FactWorld::token_name(int token) const {
  if (token >= 0 && token < n_subjects()) return "s" + std::to_string(token);
  if (is_attribute_token(token)) return "a" + std::to_string(attribute_of_token(token));
  if (token == relation_token()) return "REL";
  if (token == eos_token()) return "EOS";
  return "?" + std::to_string(token);
}

std::string FactWorld::code_name(int code) const {
  if (code == background_code()) return ".";
  if (code >= 1 && code < 1 + n_subjects()) return "S" + std::to_string(code - 1);
  if (code >= 1 + n_subjects() && code < n_patch_codes()) return "A" + std::to_string(code - 1 - n_subjects());
  return "?";
}

ModelConfig FactWorld::model_config(ModelConfig base) const {
  base.vocab_size = vocab_size();
  base.n_patch_codes = n_patch_codes();
  base.n_patches = config_.n_patches();
  return base;
}

std::vector<int> render_subject_only(const FactWorld& world, int subject, std::mt19937_64& rng) {
  if (subject < 0 || subject >= world.n_subjects()) throw std::out_of_range("scene: subject out of range");
  const int n = world.config().n_patches();
  std::vector<int> cells(static_cast<std::size_t>(n), FactWorld::background_code());
  std::uniform_int_distribution<int> any_cell(0, n - 1);
  cells[any_cell(rng)] = world.subject_code(subject);
  return cells;
}

Scene render_scene(const FactWorld& world, int subject, int attribute, std::mt19937_64& rng) {
  if (subject < 0 || subject >= world.n_subjects()) throw std::out_of_range("scene: subject out of range");
  if (attribute < 0 || attribute >= world.n_attributes()) throw std::out_of_range("scene: attribute out of range");
  const WorldConfig& cfg = world.config();
  const int n = cfg.n_patches();
  Scene scene;
  scene.rows = cfg.grid_rows;
  scene.cols = cfg.grid_cols;
  scene.cells.assign(static_cast<std::size_t>(n), FactWorld::background_code());
  scene.subject = subject;
  scene.attribute = attribute;
  scene.counterfactual = attribute != world.fact(subject);

  std::uniform_int_distribution<int> any_cell(0, n - 1);
  const int subject_cell = any_cell(rng);
  scene.cells[subject_cell] = world.subject_code(subject);

  std::discrete_distribution<int> count_dist(cfg.patch_count_weights.begin(), cfg.patch_count_weights.end());
  const int count = 1 + count_dist(rng);

  std::vector<int> cluster;
  int start = any_cell(rng);
  while (start == subject_cell) start = any_cell(rng);
  cluster.push_back(start);
  while (static_cast<int>(cluster.size()) < count) {
    std::vector<int> frontier;
    for (int c : cluster) {
      const int r = c / cfg.grid_cols, col = c % cfg.grid_cols;
      const int nbrs[4][2] = {{r - 1, col}, {r + 1, col}, {r, col - 1}, {r, col + 1}};
      for (const auto& nb : nbrs) {
        if (nb[0] < 0 || nb[0] >= cfg.grid_rows || nb[1] < 0 || nb[1] >= cfg.grid_cols) continue;
        const int cell = nb[0] * cfg.grid_cols + nb[1];
        if (cell == subject_cell || std::find(cluster.begin(), cluster.end(), cell) != cluster.end()) continue;
        if (std::find(frontier.begin(), frontier.end(), cell) == frontier.end()) frontier.push_back(cell);
      }
    }
    if (frontier.empty()) {
      for (int cell = 0; cell < n; ++cell) {
        if (cell != subject_cell && std::find(cluster.begin(), cluster.end(), cell) == cluster.end()) frontier.push_back(cell);
      }
    }
    std::sort(frontier.begin(), frontier.end());
    std::uniform_int_distribution<std::size_t> pick(0, frontier.size() - 1);
    cluster.push_back(frontier[pick(rng)]);
  }
  std::sort(cluster.begin(), cluster.end());
  for (int c : cluster) scene.cells[c] = world.attribute_code(attribute);
  scene.attribute_patches = std::move(cluster);
  return scene;
}

int read_scene_attribute(const FactWorld& world, const Scene& scene) {
  int found = -1;
  for (int code : scene.cells) {
    if (code >= world.attribute_code(0) && code < world.n_patch_codes()) {
      const int a = code - world.attribute_code(0);
      if (found >= 0 && found != a) throw std::runtime_error("scene: more than one attribute depicted");
      found = a;
    }
  }
  if (found < 0) throw std::runtime_error("scene: no attribute depicted");
  return found;
}

}  // namespace clens
