#include "clens/world/corpus.hpp"
#include "clens/world/dataset.hpp"

#include "helpers.hpp"

#include <set>
#include <sstream>

using namespace clens;

namespace {

FactWorld small_world(int subjects = 6, int attributes = 5) {
  WorldConfig c;
  c.n_subjects = subjects;
  c.n_attributes = attributes;
  c.seed = 11;
  return FactWorld::generate(c);
}

ModelWeights model_for(const FactWorld& world, std::uint64_t seed) {
  ModelConfig base = test::tiny_config(2, 2, 8);
  base.max_seq_len = 32;
  return ModelWeights::random(world.model_config(base), seed);
}

bool four_connected(const std::vector<int>& cells, int cols) {
  if (cells.empty()) return false;
  std::set<int> left(cells.begin(), cells.end()), seen{cells.front()};
  std::vector<int> stack{cells.front()};
  while (!stack.empty()) {
    const int c = stack.back();
    stack.pop_back();
    for (int n : {c - cols, c + cols, c % cols ? c - 1 : -1, (c + 1) % cols ? c + 1 : -1}) {
      if (n >= 0 && left.count(n) && !seen.count(n)) {
        seen.insert(n);
        stack.push_back(n);
      }
    }
  }
  return seen.size() == left.size();
}

}  // namespace

TEST_CASE("fact world vocabulary layout") {
  const FactWorld w = small_world();
  CHECK(w.relation_token() == 11);
  CHECK(w.eos_token() == 12);
  CHECK(w.vocab_size() == 13);
  CHECK(w.n_patch_codes() == 12);
  for (int s = 0; s < w.n_subjects(); ++s) {
    CHECK(w.fact(s) >= 0);
    CHECK(w.fact(s) < w.n_attributes());
  }
  const ModelConfig m = w.model_config(test::tiny_config());
  CHECK(m.vocab_size == w.vocab_size());
  CHECK(m.n_patch_codes == w.n_patch_codes());
  CHECK(m.n_patches == 16);
  CHECK(FactWorld::generate(w.config()).facts() == w.facts());
}

TEST_CASE("scenes hold one subject and a connected cluster of one to three attribute patches") {
  const FactWorld w = small_world();
  std::mt19937_64 rng(1);
  std::set<std::size_t> sizes;
  for (int trial = 0; trial < 300; ++trial) {
    const int s = static_cast<int>(rng() % 6), a = static_cast<int>(rng() % 5);
    const Scene scene = render_scene(w, s, a, rng);
    REQUIRE(scene.cells.size() == 16);
    CHECK(std::count(scene.cells.begin(), scene.cells.end(), w.subject_code(s)) == 1);
    CHECK(std::count(scene.cells.begin(), scene.cells.end(), w.attribute_code(a)) ==
          static_cast<long>(scene.attribute_patches.size()));
    CHECK(scene.attribute_patches.size() >= 1);
    CHECK(scene.attribute_patches.size() <= 3);
    CHECK(std::is_sorted(scene.attribute_patches.begin(), scene.attribute_patches.end()));
    CHECK(four_connected(scene.attribute_patches, 4));
    for (int p : scene.attribute_patches) CHECK(scene.cells[static_cast<std::size_t>(p)] != FactWorld::background_code());
    CHECK(read_scene_attribute(w, scene) == a);
    CHECK(scene.counterfactual == (a != w.fact(s)));
    sizes.insert(scene.attribute_patches.size());
  }
  CHECK(sizes.size() == 3);
}

TEST_CASE("subject-only images show no attribute") {
  const FactWorld w = small_world();
  std::mt19937_64 rng(2);
  const auto cells = render_subject_only(w, 3, rng);
  CHECK(std::count(cells.begin(), cells.end(), w.subject_code(3)) == 1);
  CHECK(std::count(cells.begin(), cells.end(), FactWorld::background_code()) == 15);
}

TEST_CASE("degenerate world corpus") {
  WorldConfig c;
  c.n_subjects = 1;
  c.n_attributes = 1;
  const FactWorld w = FactWorld::generate(c);
  const auto corpus = build_training_corpus(w, 2, 3, 5);
  CHECK(corpus.size() == 5);
  for (const TrainingStream& t : corpus) {
    CHECK(t.sequence.text == std::vector<int>{w.subject_token(0), w.relation_token(), w.attribute_token(0), w.eos_token()});
    CHECK((t.kind == StreamKind::text_fact) == t.sequence.visual.empty());
  }
}

TEST_CASE("corpus labels: facts for text, depicted attribute for captions") {
  const FactWorld w = small_world();
  const auto corpus = build_training_corpus(w, 2, 4, 9, 1);
  int n_text = 0, n_caption = 0, n_plain = 0;
  for (const TrainingStream& t : corpus) {
    REQUIRE(t.sequence.text.size() == 4);
    const int completion = w.attribute_of_token(t.sequence.text[2]);
    CHECK(t.sequence.text[1] == w.relation_token());
    CHECK(t.sequence.text[3] == w.eos_token());
    CHECK(t.sequence.text[0] == w.subject_token(t.subject));
    switch (t.kind) {
      case StreamKind::text_fact:
        ++n_text;
        CHECK(completion == w.fact(t.subject));
        CHECK(t.sequence.visual.empty());
        break;
      case StreamKind::caption: {
        ++n_caption;
        Scene scene;
        scene.cells = t.sequence.visual;
        CHECK(read_scene_attribute(w, scene) == completion);
        break;
      }
      case StreamKind::plain_scene:
        ++n_plain;
        CHECK(completion == w.fact(t.subject));
        CHECK(std::count(t.sequence.visual.begin(), t.sequence.visual.end(), 0) == 15);
        break;
    }
  }
  CHECK(n_text == 12);
  CHECK(n_caption == 24);
  CHECK(n_plain == 6);
  CHECK(build_training_corpus(w, 2, 4, 9, 1).size() == corpus.size());
}

TEST_CASE("next-token targets cover text continuations only") {
  TokenSequence s{{0, 1, 2, 3}, {7, 8, 9}};
  CHECK(next_token_targets(s) == std::vector<int>{-1, -1, -1, -1, 8, 9, -1});
  TokenSequence text{{}, {4, 5}};
  CHECK(next_token_targets(text) == std::vector<int>{5, -1});
}

TEST_CASE("candidates satisfy the conflict invariants") {
  const FactWorld w = small_world();
  const auto candidates = make_candidates(w, 40, 3);
  REQUIRE(candidates.size() == 40);
  for (const ConflictExample& ex : candidates) {
    CHECK(ex.scene.attribute != w.fact(ex.scene.subject));
    CHECK(ex.scene.counterfactual);
    CHECK(ex.s_fact == std::vector<int>{w.attribute_token(w.fact(ex.scene.subject))});
    CHECK(ex.s_cofa.front() == w.attribute_token(ex.scene.attribute));
    CHECK(ex.s_cofa.size() == 4);
    for (int t : ex.s_cofa) CHECK(std::find(ex.s_fact.begin(), ex.s_fact.end(), t) == ex.s_fact.end());
    CHECK(ex.ground_truth_patches == ex.scene.attribute_patches);
    CHECK(!ex.ground_truth_patches.empty());
    CHECK(ex.prompt.visual == ex.scene.cells);
    CHECK(ex.prompt.text == std::vector<int>{w.subject_token(ex.scene.subject), w.relation_token()});
  }
  CHECK(make_candidates(w, 40, 3) == candidates);
}

TEST_CASE("token selection") {
  const FactWorld w = small_world();
  const ModelWeights m = model_for(w, 4);
  ConflictExample ex = make_candidates(w, 1, 5).front();
  ex.s_cofa.resize(1);
  CHECK(select_tokens(m, ex) == std::pair<int, int>{ex.s_fact[0], ex.s_cofa[0]});
  ex.s_cofa.clear();
  CHECK_THROWS_AS(select_tokens(m, ex), std::invalid_argument);

  ConflictExample full = make_candidates(w, 1, 5).front();
  const auto [t_fact, t_cofa] = select_tokens(m, full);
  const VectorXd multimodal = forward(m, full.prompt).final_logits();
  for (int t : full.s_cofa) CHECK(multimodal(t) <= multimodal(t_cofa));
  CHECK(t_fact == full.s_fact[0]);
}

TEST_CASE("ambiguity filter keeps only unambiguous, conflict-inducing examples") {
  const FactWorld w = small_world();
  for (std::uint64_t seed : {1, 2, 3}) {
    const ModelWeights m = model_for(w, seed);
    FilterStats stats;
    const auto kept = filter_ambiguous(m, make_candidates(w, 60, seed), &stats);
    CHECK(stats.n_candidates == 60);
    CHECK(stats.retained == static_cast<int>(kept.size()));
    CHECK(stats.retained + stats.dropped_ambiguous + stats.dropped_not_induced == 60);
    for (const ConflictExample& ex : kept) {
      const VectorXd text = forward(m, ex.text_prompt()).final_logits();
      const VectorXd image = forward(m, ex.prompt).final_logits();
      double best_fact = -1e300, best_cofa = -1e300;
      for (int t : ex.s_fact) best_fact = std::max(best_fact, text(t));
      for (int t : ex.s_cofa) best_cofa = std::max(best_cofa, text(t));
      CHECK(best_fact >= best_cofa);
      // The image raises the probability of t_cofa.
      const double lse_text = std::log((text.array() - text.maxCoeff()).exp().sum()) + text.maxCoeff();
      const double lse_image = std::log((image.array() - image.maxCoeff()).exp().sum()) + image.maxCoeff();
      CHECK(image(ex.t_cofa) - lse_image > text(ex.t_cofa) - lse_text);
    }
  }
}

TEST_CASE("dataset file round trip") {
  const FactWorld w = small_world();
  auto examples = make_candidates(w, 5, 8);
  for (auto& ex : examples) {
    ex.t_fact = ex.s_fact[0];
    ex.t_cofa = ex.s_cofa[0];
  }
  std::stringstream out;
  write_dataset(out, examples);
  const std::string text = out.str();
  CHECK(text.rfind(kDatasetHeader, 0) == 0);
  std::stringstream in(text);
  CHECK(read_dataset(in) == examples);
  std::stringstream again;
  write_dataset(again, read_dataset(*std::make_unique<std::stringstream>(text)));
  CHECK(again.str() == text);
  std::stringstream wrong("# something else\n");
  CHECK_THROWS(read_dataset(wrong));
}

TEST_CASE("dataset building is reproducible") {
  const FactWorld w = small_world();
  const ModelWeights m = model_for(w, 6);
  const Dataset a = build_dataset(m, w, 30, 4), b = build_dataset(m, w, 30, 4);
  std::stringstream sa, sb;
  write_dataset(sa, a.examples);
  write_dataset(sb, b.examples);
  CHECK(sa.str() == sb.str());
}
