#pragma once

#include "clens/lens/lens.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace clens {

// Last attention row of one head after the intervention. Rows of heads
// outside both sets are returned unchanged; nothing is renormalised.
VectorXd apply_intervention(const VectorXd& row, const std::vector<bool>& modality_mask, const HeadId& head,
                            const InterventionSpec& spec);

// Sweeps are parameterised by a steering strength: positive values push
// towards the factual answer (factual heads' text weights x (1 + s),
// counterfactual heads' image weights x (1 - s)), negative values towards
// the image. This is the scaling rule with lambda = -s.
InterventionSpec steering_spec(std::vector<HeadId> fact_heads, std::vector<HeadId> cofa_heads, double strength);

struct Outcome {
  double fact_pair_acc = 0.0;  // logit(t_fact) > logit(t_cofa)
  double fact_top_rate = 0.0;  // t_fact is the argmax over the vocabulary
  double mean_rank = 0.0;      // 1-based rank of t_fact
};

Outcome evaluate(const ModelWeights& weights, const std::vector<ConflictExample>& dataset,
                 const InterventionSpec* spec = nullptr);

// Mean over steps of KL(P_base || P_intervened) along the baseline's greedy
// continuation of the prompt.
double generation_kl(const ModelWeights& weights, const ConflictExample& example, const InterventionSpec& spec,
                     int n_tokens);
double generation_kl(const ModelWeights& weights, const std::vector<ConflictExample>& dataset,
                     const InterventionSpec& spec, int n_tokens);

struct SweepPoint {
  double lambda = 0.0;  // steering strength
  int k = 0;            // heads per role
  std::string mode;     // "target" or "random"
  Outcome outcome;
  double mean_kl = 0.0;
  std::uint64_t seed = 0;
};

struct SweepOptions {
  std::vector<double> grid{-3, -2, -1, 0, 1, 2, 3};
  int kl_tokens = 2;
  std::uint64_t seed = 0;  // recorded with target rows, drives head choice for random rows
};

std::vector<SweepPoint> lambda_sweep(const ModelWeights& weights, const std::vector<ConflictExample>& dataset,
                                     const HeadRanking& ranking, const SweepOptions& options);

// Random heads without replacement, alternately assigned factual and
// counterfactual roles.
std::vector<HeadId> random_heads(const ModelConfig& config, int n_heads, std::uint64_t seed);

std::vector<SweepPoint> random_head_control(const ModelWeights& weights, const std::vector<ConflictExample>& dataset,
                                            int n_heads, const SweepOptions& options);

// Heads per role scaled from the reference setting of 100 random heads out
// of 32 x 32, at least two.
int scaled_random_head_count(const ModelConfig& config);

// k = round(fraction * L * H), clamped to [1, L*H/2].
int head_budget(const ModelConfig& config, double fraction);

// Re-ranks with each k from the accuracy table and evaluates at one strength.
std::vector<SweepPoint> vary_k_sweep(const ModelWeights& weights, const std::vector<ConflictExample>& dataset,
                                     const MatrixXd& head_accuracy, const std::vector<int>& k_grid, double strength,
                                     std::uint64_t seed);

// lambda,k,mode,fact_pair_acc,fact_top_rate,mean_rank,mean_kl,seed
void write_sweep_csv(std::ostream& out, const std::vector<SweepPoint>& points);

}  // namespace clens
