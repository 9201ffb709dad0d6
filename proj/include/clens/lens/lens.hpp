#pragma once

#include "clens/world/dataset.hpp"

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace clens {

enum class ComponentKind { residual, attention, mlp, head };

std::string to_string(ComponentKind kind);

// Residual layers run 0..L (x^0 is the embedding); attention, MLP and head
// layers run 0..L-1 and index the block that produces a^{l+1} / m^{l+1}.
struct Component {
  ComponentKind kind = ComponentKind::residual;
  int layer = 0;
  int head = -1;

  friend bool operator==(const Component&, const Component&) = default;
};

struct LensOptions {
  bool final_norm = true;  // apply the final layer norm gain before unembedding
};

// Vocabulary logits of one component's final-position vector.
VectorXd lens_project(const ModelWeights& weights, const ForwardTrace& trace, const Component& component,
                      const LensOptions& options = {});

struct LensRecord {
  Component component;
  int example_id = 0;
  double logit_fact = 0.0;
  double logit_cofa = 0.0;

  // Ties count as non-factual.
  bool fact_wins() const { return logit_fact > logit_cofa; }
};

// Every component of every example, in a fixed order, plus the traces.
struct LensAnalysis {
  ModelConfig config;
  std::vector<ForwardTrace> traces;  // one per example, dataset order
  std::vector<LensRecord> records;
};

LensAnalysis analyze(const ModelWeights& weights, const std::vector<ConflictExample>& dataset,
                     const LensOptions& options = {});

// Fraction of examples where the component favours t_fact, per component.
double fact_accuracy(const LensAnalysis& analysis, const Component& component);

struct BlockPreference {
  int layer = 0;
  double attention = 0.0;  // accuracy - 0.5
  double mlp = 0.0;
};

std::vector<BlockPreference> block_preference_profile(const LensAnalysis& analysis);
std::vector<BlockPreference> block_preference_profile(const ModelWeights& weights,
                                                      const std::vector<ConflictExample>& dataset);

struct HeadRanking {
  MatrixXd accuracy;  // L x H
  std::vector<HeadId> fact_heads;  // top-k by accuracy
  std::vector<HeadId> cofa_heads;  // bottom-k

  double mean_accuracy() const { return accuracy.size() ? accuracy.mean() : 0.0; }
  double mean_accuracy(const std::vector<HeadId>& heads) const;
  double preference(const HeadId& h) const { return accuracy(h.layer, h.head) - 0.5; }
};

// Ties in accuracy are broken by (layer, head) ascending.
HeadRanking rank_heads(const MatrixXd& head_accuracy, int k);
HeadRanking rank_heads(const LensAnalysis& analysis, int k);
HeadRanking rank_heads(const ModelWeights& weights, const std::vector<ConflictExample>& dataset, int k);

MatrixXd head_accuracy(const LensAnalysis& analysis);

// Final-row attention mass on visual positions for one head of one trace.
double image_attention(const ForwardTrace& trace, const HeadId& head);

// Mean image attention over the heads and traces. Throws on an empty set.
double image_attention_fraction(const std::vector<ForwardTrace>& traces, const std::vector<HeadId>& heads);

std::vector<HeadId> all_heads(const ModelConfig& config);

// component,layer,head,fact_acc,pref_strength,image_attn
void write_lens_csv(std::ostream& out, const LensAnalysis& analysis);

}  // namespace clens
