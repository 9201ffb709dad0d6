#include "clens/train/trainer.hpp"
#include "clens/world/corpus.hpp"

#include "helpers.hpp"

using namespace clens;

namespace {

FactWorld world_of(int subjects, int attributes) {
  WorldConfig c;
  c.n_subjects = subjects;
  c.n_attributes = attributes;
  c.seed = 5;
  return FactWorld::generate(c);
}

ModelWeights model_for(const FactWorld& w, std::uint64_t seed) {
  ModelConfig base = test::tiny_config(2, 2, 16);
  base.max_seq_len = 24;
  return ModelWeights::random(w.model_config(base), seed);
}

std::vector<const TokenSequence*> pointers(const std::vector<TrainingStream>& corpus) {
  std::vector<const TokenSequence*> out;
  for (const TrainingStream& t : corpus) out.push_back(&t.sequence);
  return out;
}

}  // namespace

TEST_CASE("batch loss gradient matches finite differences") {
  const FactWorld w = world_of(3, 3);
  const ModelWeights m = model_for(w, 1);
  const auto corpus = build_training_corpus(w, 1, 1, 2, 1);
  const auto batch = pointers(corpus);
  std::vector<MatrixXd> grads;
  batch_loss(m, batch, &grads);

  std::mt19937_64 rng(3);
  std::size_t index = 0;
  int checked = 0;
  ModelWeights probe = m;
  probe.for_each([&](const std::string& name, MatrixXd& param) {
    const MatrixXd& g = grads[index++];
    CAPTURE(name);
    REQUIRE(g.rows() == param.rows());
    REQUIRE(g.cols() == param.cols());
    for (int k = 0; k < 2; ++k) {
      const auto i = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(param.size()));
      const double keep = param.data()[i];
      param.data()[i] = keep + 1e-5;
      const double up = batch_loss(probe, batch, nullptr);
      param.data()[i] = keep - 1e-5;
      const double down = batch_loss(probe, batch, nullptr);
      param.data()[i] = keep;
      const double fd = (up - down) / 2e-5;
      CHECK(std::abs(fd - g.data()[i]) <= 1e-4 * std::max(1.0, std::abs(fd)));
      ++checked;
    }
  });
  CHECK(checked > 30);
}

TEST_CASE("stacked batches agree with one sequence at a time") {
  const FactWorld w = world_of(3, 3);
  const ModelWeights m = model_for(w, 2);
  const auto corpus = build_training_corpus(w, 1, 1, 2);
  const auto batch = pointers(corpus);
  double tokens = 0.0, total = 0.0;
  for (const TokenSequence* s : batch) {
    std::vector<int> targets = next_token_targets(*s);
    const double n = static_cast<double>(std::count_if(targets.begin(), targets.end(), [](int t) { return t >= 0; }));
    total += batch_loss(m, {s}, nullptr) * n;
    tokens += n;
  }
  CHECK(batch_loss(m, batch, nullptr) == doctest::Approx(total / tokens).epsilon(1e-12));
}

TEST_CASE("a small step on a frozen batch lowers its loss") {
  const FactWorld w = world_of(4, 3);
  ModelWeights m = model_for(w, 3);
  const auto corpus = build_training_corpus(w, 1, 1, 4);
  const auto batch = pointers(corpus);
  std::vector<MatrixXd> grads;
  const double before = batch_loss(m, batch, &grads);
  sgd_step(m, grads, 1e-3);
  CHECK(batch_loss(m, batch, nullptr) < before);
}

TEST_CASE("one-fact world is memorised") {
  const FactWorld w = world_of(1, 1);
  const auto corpus = build_training_corpus(w, 4, 4, 1);
  TrainConfig c;
  c.learning_rate = 0.1;
  c.batch_size = 8;
  c.max_steps = 400;
  c.eval_every = 20;
  c.n_probe_captions = 32;
  const TrainResult r = train(c, w, corpus, model_for(w, 4));
  CHECK(r.report.converged);
  CHECK(r.report.fact_accuracy == 1.0);
  CHECK(r.report.caption_accuracy >= 0.95);
  CHECK(text_fact_accuracy(r.weights, w) == 1.0);
}

TEST_CASE("training is deterministic in its seed") {
  const FactWorld w = world_of(1, 1);
  const auto corpus = build_training_corpus(w, 4, 4, 1);
  TrainConfig c;
  c.batch_size = 8;
  c.max_steps = 400;
  c.eval_every = 20;
  c.n_probe_captions = 32;
  auto run = [&](std::uint64_t seed) {
    c.seed = seed;
    return train(c, w, corpus, model_for(w, 5));
  };
  const TrainResult a = run(1), b = run(1), other = run(2);
  CHECK(a.weights == b.weights);
  CHECK(a.report.batch_loss == b.report.batch_loss);
  CHECK(a.report.monitor_loss == b.report.monitor_loss);
  CHECK(!(a.weights == other.weights));
  CHECK(a.report.monitor_loss.size() == static_cast<std::size_t>(1 + std::min(a.report.steps, 50) / 10));
}

TEST_CASE("unmet thresholds and divergence fail loudly") {
  const FactWorld w = world_of(4, 4);
  const auto corpus = build_training_corpus(w, 1, 1, 1);
  TrainConfig c;
  c.batch_size = 4;
  c.max_steps = 2;
  c.eval_every = 0;
  c.n_probe_captions = 8;
  try {
    train(c, w, corpus, model_for(w, 6));
    FAIL("expected a threshold failure");
  } catch (const TrainingError& e) {
    CHECK(e.kind() == TrainingError::Kind::threshold);
    CHECK(e.report().steps == 2);
  }
  c.learning_rate = 1e300;
  c.max_steps = 5;
  try {
    train(c, w, corpus, model_for(w, 6));
    FAIL("expected divergence");
  } catch (const TrainingError& e) {
    CHECK(e.kind() == TrainingError::Kind::divergence);
  }
  c.learning_rate = -1.0;
  CHECK_THROWS_AS(train(c, w, corpus, model_for(w, 6)), std::invalid_argument);
  CHECK_THROWS_AS(train(TrainConfig{}, w, {}, model_for(w, 6)), std::invalid_argument);
}
