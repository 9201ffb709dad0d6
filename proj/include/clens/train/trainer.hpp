#pragma once

#include "clens/world/corpus.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace clens {

struct TrainConfig {
  double learning_rate = 0.1;
  int batch_size = 32;
  int max_steps = 4000;
  std::uint64_t seed = 1;
  double min_fact_accuracy = 0.95;
  double min_caption_accuracy = 0.95;
  int eval_every = 250;      // convergence check interval; 0 disables early stopping
  int n_probe_captions = 256;

  void validate() const;
};

struct TrainReport {
  int steps = 0;
  std::vector<double> batch_loss;  // mean per-token loss of each step's batch
  std::vector<double> monitor_loss;  // fixed monitor-batch loss before step 0 and every 10 steps up to 50
  double fact_accuracy = 0.0;
  double caption_accuracy = 0.0;
  bool converged = false;
};

struct TrainResult {
  ModelWeights weights;
  TrainReport report;
};

class TrainingError : public std::runtime_error {
 public:
  enum class Kind { divergence, threshold };
  TrainingError(Kind kind, const std::string& what, TrainReport report)
      : std::runtime_error(what), kind_(kind), report_(std::move(report)) {}
  Kind kind() const { return kind_; }
  const TrainReport& report() const { return report_; }

 private:
  Kind kind_;
  TrainReport report_;
};

// Mean next-token cross-entropy over all target positions of `batch` and,
// when `gradients` is non-null, its gradient in ModelWeights::for_each order.
double batch_loss(const ModelWeights& weights, const std::vector<const TokenSequence*>& batch,
                  std::vector<MatrixXd>* gradients);

// One plain SGD update in place: w <- w - lr * grad.
void sgd_step(ModelWeights& weights, const std::vector<MatrixXd>& gradients, double learning_rate);

// Fraction of subjects whose text-only completion of "s REL" is fact(s).
double text_fact_accuracy(const ModelWeights& weights, const FactWorld& world);

// Fraction of probe captions whose completion is the depicted attribute.
double caption_accuracy(const ModelWeights& weights, const FactWorld& world, int n_probes, std::uint64_t seed);

// Trains from `initial` with deterministic batch order. Throws TrainingError
// on divergence or if the accuracy thresholds are unmet after max_steps.
TrainResult train(const TrainConfig& config, const FactWorld& world, const std::vector<TrainingStream>& corpus,
                  ModelWeights initial);

}  // namespace clens
