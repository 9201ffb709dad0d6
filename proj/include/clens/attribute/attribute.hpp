#pragma once

#include "clens/lens/lens.hpp"

#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

namespace clens {

enum class AttributionMethod { attention, gradient, random };

std::string to_string(AttributionMethod method);
AttributionMethod attribution_method_from_string(const std::string& name);

struct PatchSelection {
  AttributionMethod method = AttributionMethod::attention;
  double tau = 0.0;
  std::vector<int> patches;  // ascending patch indices
  VectorXd scores;           // one per patch, in [0, 1] for attention, raw norms for gradient
};

// Patches whose score reaches tau * max(score). An all-zero score vector
// selects nothing.
std::vector<int> threshold_patches(const VectorXd& scores, double tau);

// Per head, the visual positions whose final-row attention is at least tau
// times that head's visual maximum; the union over heads. Each patch's score
// is its largest head-normalised attention.
PatchSelection attended_patches(const ForwardTrace& trace, const std::vector<HeadId>& heads, double tau);

// Euclidean norm of d logit(target) / d x^0 for each visual row.
VectorXd gradient_scores(const ModelWeights& weights, const TokenSequence& prompt, int target);

PatchSelection gradient_patches(const ModelWeights& weights, const ConflictExample& example, int target, double tau);

// `size` distinct patches drawn uniformly.
PatchSelection random_patches(int n_patches, int size, double tau, std::mt19937_64& rng);

struct PrecisionRecall {
  double precision = 0.0;  // NaN for an empty selection
  double recall = 0.0;
};

PrecisionRecall attribution_precision(const std::vector<int>& selection, const std::vector<int>& ground_truth);

struct AblationPoint {
  AttributionMethod method = AttributionMethod::attention;
  double tau = 0.0;
  double mean_fraction = 0.0;  // mean |selection| / P
  double fact_pair_acc = 0.0;
  double precision = 0.0;      // mean over non-empty selections, NaN if none
  double recall = 0.0;
};

struct AblationOptions {
  std::vector<double> taus{1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1, 0.0};
  AblationMode mode = AblationMode::object_only;
  std::uint64_t seed = 0;  // random-method draws
};

// Selections for one example and one method at every tau of the grid.
// Random selections match the attention method's sizes.
std::vector<PatchSelection> select_patches(const ModelWeights& weights, const ConflictExample& example,
                                           const ForwardTrace& trace, const std::vector<HeadId>& cofa_heads,
                                           AttributionMethod method, const std::vector<double>& taus,
                                           std::mt19937_64& rng);

// fact_pair_acc with the given patches ablated in every example.
double ablated_pair_accuracy(const ModelWeights& weights, const std::vector<ConflictExample>& dataset,
                             const std::vector<std::vector<int>>& ablated, AblationMode mode);

// Selections for every example at every tau, with fraction, precision and
// recall filled in; fact_pair_acc is left NaN.
struct SelectionTable {
  std::vector<AblationPoint> points;                 // one per tau
  std::vector<std::vector<std::vector<int>>> patches;  // [tau][example]
};

SelectionTable collect_selections(const ModelWeights& weights, const std::vector<ConflictExample>& dataset,
                                  const std::vector<HeadId>& cofa_heads, AttributionMethod method,
                                  const AblationOptions& options);

std::vector<AblationPoint> ablation_sweep(const ModelWeights& weights, const std::vector<ConflictExample>& dataset,
                                          const std::vector<HeadId>& cofa_heads, AttributionMethod method,
                                          const AblationOptions& options);

// Trapezoidal area under accuracy versus ablated fraction, starting from
// (0, baseline). Points beyond the last measured fraction are not
// extrapolated.
double ablation_auc(const std::vector<AblationPoint>& points, double baseline);

// method,tau,mean_fraction,fact_pair_acc,precision,recall
void write_ablation_csv(std::ostream& out, const std::vector<AblationPoint>& points);

// Scene grid with selected patches shaded by score and ground-truth patches
// outlined.
std::string emit_heatmap(const ConflictExample& example, const PatchSelection& selection);

std::string heatmap_filename(const ConflictExample& example, const PatchSelection& selection);

}  // namespace clens
