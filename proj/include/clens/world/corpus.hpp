#pragma once

#include "clens/world/fact_world.hpp"

#include <cstdint>
#include <vector>

namespace clens {

enum class StreamKind { text_fact, caption, plain_scene };

struct TrainingStream {
  StreamKind kind = StreamKind::text_fact;
  TokenSequence sequence;  // full sequence including the answer and EOS
  int subject = 0;
  int attribute = 0;       // completion attribute
  std::vector<int> scene_cells;  // caption streams only
};

// Text-only fact sentences "s REL fact(s) EOS" (n_text_reps per subject)
// and captions "<scene(s,a)> s REL a EOS" with a uniform over attributes
// (n_caption_reps per subject).
std::vector<TrainingStream> build_training_corpus(const FactWorld& world, int n_text_reps, int n_caption_reps,
                                                  std::uint64_t seed, int n_plain_scene_reps = 0);

// Next-token targets aligned with sequence positions; -1 where no loss is
// taken (image positions and the final position).
std::vector<int> next_token_targets(const TokenSequence& seq);

}  // namespace clens
