#include "clens/world/corpus.hpp"

#include <random>
#include <stdexcept>

namespace clens {

std::vector<TrainingStream> build_training_corpus(const FactWorld& world, int n_text_reps, int n_caption_reps,
                                                  std::uint64_t seed, int n_plain_scene_reps) {
  if (n_text_reps < 0 || n_caption_reps < 0 || n_plain_scene_reps < 0) throw std::invalid_argument("corpus: repetition counts must be >= 0");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> any_attribute(0, world.n_attributes() - 1);
  std::vector<TrainingStream> corpus;
  for (int s = 0; s < world.n_subjects(); ++s) {
    for (int r = 0; r < n_text_reps; ++r) {
      TrainingStream t;
      t.kind = StreamKind::text_fact;
      t.subject = s;
      t.attribute = world.fact(s);
      t.sequence.text = {world.subject_token(s), world.relation_token(), world.attribute_token(t.attribute),
                         world.eos_token()};
      corpus.push_back(std::move(t));
    }
    for (int r = 0; r < n_caption_reps; ++r) {
      const int a = any_attribute(rng);
      Scene scene = render_scene(world, s, a, rng);
      TrainingStream t;
      t.kind = StreamKind::caption;
      t.subject = s;
      t.attribute = a;
      t.sequence.visual = scene.cells;
      t.sequence.text = {world.subject_token(s), world.relation_token(), world.attribute_token(a), world.eos_token()};
      t.scene_cells = std::move(scene.cells);
      corpus.push_back(std::move(t));
    }
    for (int r = 0; r < n_plain_scene_reps; ++r) {
      TrainingStream t;
      t.kind = StreamKind::plain_scene;
      t.subject = s;
      t.attribute = world.fact(s);
      t.scene_cells = render_subject_only(world, s, rng);
      t.sequence.visual = t.scene_cells;
      t.sequence.text = {world.subject_token(s), world.relation_token(), world.attribute_token(t.attribute),
                         world.eos_token()};
      corpus.push_back(std::move(t));
    }
  }
  return corpus;
}

std::vector<int> next_token_targets(const TokenSequence& seq) {
  std::vector<int> targets(static_cast<std::size_t>(seq.length()), -1);
  const int nv = seq.n_visual();
  for (std::size_t i = 0; i + 1 < seq.text.size(); ++i) targets[nv + i] = seq.text[i + 1];
  return targets;
}

}  // namespace clens
