#include "clens/train/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

namespace clens {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("train config: learning_rate must be > 0");
  if (batch_size <= 0) throw std::invalid_argument("train config: batch_size must be > 0");
  if (max_steps <= 0) throw std::invalid_argument("train config: max_steps must be > 0");
  if (!(min_fact_accuracy > 0.0 && min_fact_accuracy <= 1.0) ||
      !(min_caption_accuracy > 0.0 && min_caption_accuracy <= 1.0)) {
    throw std::invalid_argument("train config: thresholds must lie in (0, 1]");
  }
  if (eval_every < 0) throw std::invalid_argument("train config: eval_every must be >= 0");
  if (n_probe_captions <= 0) throw std::invalid_argument("train config: n_probe_captions must be > 0");
}

double batch_loss(const ModelWeights& weights, const std::vector<const TokenSequence*>& batch,
                  std::vector<MatrixXd>* gradients) {
  // Sequences of identical shape share one stacked forward pass.
  std::map<std::pair<int, int>, std::vector<const TokenSequence*>> groups;
  for (const TokenSequence* s : batch) {
    check_sequence(weights.config, *s);
    groups[{s->n_visual(), static_cast<int>(s->text.size())}].push_back(s);
  }
  ad::Tape tape;
  const BoundWeights w = bind(tape, weights, gradients != nullptr);
  std::vector<ad::Var> losses;
  int n_targets = 0;
  for (const auto& [shape, members] : groups) {
    std::vector<ad::Var> rows;
    std::vector<int> targets;
    for (const TokenSequence* s : members) {
      rows.push_back(embed(w, *s));
      const std::vector<int> t = next_token_targets(*s);
      targets.insert(targets.end(), t.begin(), t.end());
      n_targets += static_cast<int>(std::count_if(t.begin(), t.end(), [](int v) { return v >= 0; }));
    }
    ad::Var x0 = rows.size() == 1 ? rows.front() : ad::vstack(rows);
    const ad::AttentionLayout layout{static_cast<Eigen::Index>(members.size()), shape.first + shape.second,
                                     weights.config.n_heads, shape.first};
    ad::Var logits = run_layers(w, x0, layout, nullptr, nullptr);
    losses.push_back(ad::cross_entropy(logits, targets));
  }
  if (n_targets == 0) throw std::invalid_argument("batch_loss: batch has no targets");
  ad::Var total = losses.size() == 1 ? losses.front() : ad::sum(ad::vstack(losses));
  ad::Var mean = ad::scale(total, 1.0 / n_targets);
  if (gradients) {
    tape.backward(mean);
    gradients->clear();
    for (const ad::Var& leaf : w.leaves()) gradients->push_back(leaf.grad());
  }
  return mean.value()(0, 0);
}

void sgd_step(ModelWeights& weights, const std::vector<MatrixXd>& gradients, double learning_rate) {
  std::size_t i = 0;
  weights.for_each([&](const std::string& name, MatrixXd& m) {
    if (i >= gradients.size()) throw std::invalid_argument("sgd_step: missing gradient for '" + name + "'");
    m -= learning_rate * gradients[i++];
  });
}

namespace {

int final_argmax(const ModelWeights& weights, const TokenSequence& seq) {
  const ForwardTrace trace = forward(weights, seq);
  Eigen::Index best = 0;
  trace.logits.row(trace.logits.rows() - 1).maxCoeff(&best);
  return static_cast<int>(best);
}

}  // namespace

double text_fact_accuracy(const ModelWeights& weights, const FactWorld& world) {
  int hits = 0;
  for (int s = 0; s < world.n_subjects(); ++s) {
    const TokenSequence prompt{{}, {world.subject_token(s), world.relation_token()}};
    hits += final_argmax(weights, prompt) == world.attribute_token(world.fact(s));
  }
  return static_cast<double>(hits) / world.n_subjects();
}

double caption_accuracy(const ModelWeights& weights, const FactWorld& world, int n_probes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> any_subject(0, world.n_subjects() - 1);
  std::uniform_int_distribution<int> any_attribute(0, world.n_attributes() - 1);
  int hits = 0;
  for (int i = 0; i < n_probes; ++i) {
    const int s = any_subject(rng);
    const int a = any_attribute(rng);
    const Scene scene = render_scene(world, s, a, rng);
    const TokenSequence prompt{scene.cells, {world.subject_token(s), world.relation_token()}};
    hits += final_argmax(weights, prompt) == world.attribute_token(a);
  }
  return static_cast<double>(hits) / n_probes;
}

TrainResult train(const TrainConfig& config, const FactWorld& world, const std::vector<TrainingStream>& corpus,
                  ModelWeights initial) {
  config.validate();
  if (corpus.empty()) throw std::invalid_argument("train: empty corpus");
  TrainResult result{std::move(initial), {}};
  ModelWeights& weights = result.weights;
  TrainReport& report = result.report;
  std::mt19937_64 rng(config.seed);
  const std::uint64_t probe_seed = config.seed ^ 0x9e3779b97f4a7c15ULL;

  // Fixed monitor batch: the first batch_size streams of a seeded permutation.
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<const TokenSequence*> monitor;
  {
    std::vector<std::size_t> perm = order;
    std::mt19937_64 monitor_rng(config.seed + 1);
    std::shuffle(perm.begin(), perm.end(), monitor_rng);
    for (std::size_t i = 0; i < std::min<std::size_t>(perm.size(), config.batch_size); ++i) {
      monitor.push_back(&corpus[perm[i]].sequence);
    }
  }

  auto evaluate = [&] {
    report.fact_accuracy = text_fact_accuracy(weights, world);
    report.caption_accuracy = caption_accuracy(weights, world, config.n_probe_captions, probe_seed);
    report.converged = report.fact_accuracy >= config.min_fact_accuracy &&
                       report.caption_accuracy >= config.min_caption_accuracy;
  };

  std::size_t cursor = order.size();
  std::vector<MatrixXd> grads;
  std::vector<const TokenSequence*> batch;
  report.monitor_loss.push_back(batch_loss(weights, monitor, nullptr));
  for (int step = 0; step < config.max_steps; ++step) {
    batch.clear();
    while (static_cast<int>(batch.size()) < config.batch_size) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(&corpus[order[cursor++]].sequence);
    }
    const double loss = batch_loss(weights, batch, &grads);
    if (!std::isfinite(loss)) {
      report.steps = step;
      throw TrainingError(TrainingError::Kind::divergence, "train: loss diverged at step " + std::to_string(step), report);
    }
    report.batch_loss.push_back(loss);
    sgd_step(weights, grads, config.learning_rate);
    report.steps = step + 1;
    if (report.steps <= 50 && report.steps % 10 == 0) report.monitor_loss.push_back(batch_loss(weights, monitor, nullptr));
    if (config.eval_every > 0 && report.steps % config.eval_every == 0) {
      evaluate();
      if (report.converged) return result;
    }
  }
  evaluate();
  if (!report.converged) {
    throw TrainingError(TrainingError::Kind::threshold,
                        "train: thresholds unmet after " + std::to_string(report.steps) +
                            " steps (fact accuracy " + std::to_string(report.fact_accuracy) +
                            ", caption accuracy " + std::to_string(report.caption_accuracy) + ")",
                        report);
  }
  return result;
}

}  // namespace clens
