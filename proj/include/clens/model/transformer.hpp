#pragma once

#include "clens/math/autodiff.hpp"
#include "clens/model/weights.hpp"

#include <compare>
#include <optional>
#include <span>
#include <vector>

namespace clens {

// Image-prefix + text token sequence. Visual entries are patch-object codes
// (one per grid cell, in cell order); text entries are vocabulary ids.
struct TokenSequence {
  std::vector<int> visual;
  std::vector<int> text;

  int n_visual() const { return static_cast<int>(visual.size()); }
  int length() const { return static_cast<int>(visual.size() + text.size()); }
  bool is_visual(int position) const { return position < n_visual(); }
  std::vector<bool> modality_mask() const;  // true where the position holds an image token

  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

struct HeadId {
  int layer = 0;
  int head = 0;

  friend auto operator<=>(const HeadId&, const HeadId&) = default;
};

// Bidirectional last-row attention scaling: image weights of counterfactual
// heads are multiplied by (1 + lambda) and text weights of factual heads by
// (1 - lambda). Nothing is renormalised.
struct InterventionSpec {
  std::vector<HeadId> fact_heads;
  std::vector<HeadId> cofa_heads;
  double lambda = 0.0;

  bool is_noop() const { return lambda == 0.0 || (fact_heads.empty() && cofa_heads.empty()); }
  // Throws std::invalid_argument on overlapping sets or out-of-range heads.
  void validate(const ModelConfig& config) const;
};

enum class AblationMode {
  object_only,  // zero the object-code embedding, keep the grid-cell positional embedding
  full,         // zero the whole visual token embedding
};

struct ForwardOptions {
  const InterventionSpec* intervention = nullptr;
  std::vector<int> ablated_patches;
  AblationMode ablation_mode = AblationMode::object_only;
};

// Everything cached by one forward pass over a single sequence.
struct ForwardTrace {
  int n_visual = 0;
  std::vector<MatrixXd> residual;                    // x^0 .. x^L, each T x d
  std::vector<MatrixXd> attn_out;                    // a^1 .. a^L (index l-1), T x d
  std::vector<MatrixXd> mlp_out;                     // m^1 .. m^L
  std::vector<std::vector<MatrixXd>> attention;      // [layer][head], T x T, after any intervention
  std::vector<std::vector<VectorXd>> head_out;       // [layer][head], o^{hl} at the final position
  std::vector<VectorXd> output_bias;                 // [layer], shared attention output bias
  MatrixXd logits;                                   // T x |V|

  int length() const { return static_cast<int>(logits.rows()); }
  int n_layers() const { return static_cast<int>(attn_out.size()); }
  VectorXd final_logits() const { return logits.row(logits.rows() - 1).transpose(); }
};

// Weights bound to a tape as leaves.
struct BoundLayer {
  ad::Var attn_gain, w_q, w_k, w_v, w_o, b_o, mlp_gain, w_in, b_in, w_out, b_out;
};

struct BoundWeights {
  const ModelWeights* source = nullptr;
  ad::Var token_embed, pos_embed, patch_embed, patch_pos;
  std::vector<BoundLayer> layers;
  ad::Var final_gain, unembed;

  // Leaves in ModelWeights::for_each order.
  std::vector<ad::Var> leaves() const;
};

BoundWeights bind(ad::Tape& tape, const ModelWeights& weights, bool trainable);

// Input embeddings (x^0) for a sequence: visual rows are object + cell
// embeddings, text rows are token + position embeddings counted from the
// start of the text segment, so a prompt's text embeds identically with or
// without an image prefix.
ad::Var embed(const BoundWeights& w, const TokenSequence& seq, std::span<const int> ablated_patches = {},
              AblationMode mode = AblationMode::object_only);

// Visual and text parts separately, so callers can differentiate with
// respect to the visual rows.
ad::Var embed_visual(const BoundWeights& w, std::span<const int> codes, std::span<const int> ablated_patches = {},
                     AblationMode mode = AblationMode::object_only);
ad::Var embed_text(const BoundWeights& w, std::span<const int> text, int first_position);

// Runs the residual stack on stacked inputs x0 ((batch * seq_len) x d) and
// returns the logits. When `trace` is non-null the layout must have batch 1.
ad::Var run_layers(const BoundWeights& w, ad::Var x0, const ad::AttentionLayout& layout,
                   const InterventionSpec* intervention, ForwardTrace* trace);

// Throws std::invalid_argument for sequences that are empty, too long, or
// have the wrong number of visual tokens; std::out_of_range for bad ids.
void check_sequence(const ModelConfig& config, const TokenSequence& seq);

ForwardTrace forward(const ModelWeights& weights, const TokenSequence& seq, const ForwardOptions& options = {});

// Forward from caller-supplied input embeddings (rows = positions).
ForwardTrace forward_embeddings(const ModelWeights& weights, const MatrixXd& x0, int n_visual,
                                const InterventionSpec* intervention = nullptr);

struct Generation {
  std::vector<int> tokens;
  std::vector<VectorXd> log_probs;  // per-step next-token log distribution
};

// Greedy decoding of n_tokens continuations.
Generation generate(const ModelWeights& weights, const TokenSequence& seq, int n_tokens,
                    const InterventionSpec* intervention = nullptr);

// Next-token log distributions along a fixed continuation: step i is the
// distribution after the prompt extended by continuation[0..i).
std::vector<VectorXd> teacher_forced_log_probs(const ModelWeights& weights, const TokenSequence& seq,
                                               std::span<const int> continuation,
                                               const InterventionSpec* intervention = nullptr);

}  // namespace clens
