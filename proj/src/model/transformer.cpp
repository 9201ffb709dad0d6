#include "clens/model/transformer.hpp"

#include "clens/math/functions.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>
#include <string>

namespace clens {

std::vector<bool> TokenSequence::modality_mask() const {
  std::vector<bool> mask(static_cast<std::size_t>(length()), false);
  std::fill(mask.begin(), mask.begin() + n_visual(), true);
  return mask;
}

void InterventionSpec::validate(const ModelConfig& config) const {
  auto check_range = [&config](const HeadId& h) {
    if (h.layer < 0 || h.layer >= config.n_layers || h.head < 0 || h.head >= config.n_heads) {
      throw std::invalid_argument("intervention: head (" + std::to_string(h.layer) + "," + std::to_string(h.head) +
                                  ") outside the model");
    }
  };
  std::set<HeadId> fact(fact_heads.begin(), fact_heads.end());
  for (const HeadId& h : fact_heads) check_range(h);
  for (const HeadId& h : cofa_heads) {
    check_range(h);
    if (fact.contains(h)) {
      throw std::invalid_argument("intervention: head (" + std::to_string(h.layer) + "," + std::to_string(h.head) +
                                  ") is in both the factual and counterfactual sets");
    }
  }
}

std::vector<ad::Var> BoundWeights::leaves() const {
  std::vector<ad::Var> out{token_embed, pos_embed, patch_embed, patch_pos};
  for (const BoundLayer& l : layers) {
    out.insert(out.end(), {l.attn_gain, l.w_q, l.w_k, l.w_v, l.w_o, l.b_o, l.mlp_gain, l.w_in, l.b_in, l.w_out,
                           l.b_out});
  }
  out.push_back(final_gain);
  out.push_back(unembed);
  return out;
}

BoundWeights bind(ad::Tape& tape, const ModelWeights& weights, bool trainable) {
  BoundWeights b;
  b.source = &weights;
  auto leaf = [&](const MatrixXd& m) { return tape.borrow(m, trainable); };
  b.token_embed = leaf(weights.token_embed);
  b.pos_embed = leaf(weights.pos_embed);
  b.patch_embed = leaf(weights.patch_embed);
  b.patch_pos = leaf(weights.patch_pos);
  for (const LayerWeights& l : weights.layers) {
    b.layers.push_back(BoundLayer{leaf(l.attn_gain), leaf(l.w_q), leaf(l.w_k), leaf(l.w_v), leaf(l.w_o), leaf(l.b_o),
                                  leaf(l.mlp_gain), leaf(l.w_in), leaf(l.b_in), leaf(l.w_out), leaf(l.b_out)});
  }
  b.final_gain = leaf(weights.final_gain);
  b.unembed = leaf(weights.unembed);
  return b;
}

ad::Var embed_visual(const BoundWeights& w, std::span<const int> codes, std::span<const int> ablated_patches,
                     AblationMode mode) {
  const auto n = static_cast<Eigen::Index>(codes.size());
  ad::Var objects = ad::gather_rows(w.patch_embed, codes);
  ad::Var cells = ad::slice_rows(w.patch_pos, 0, n);
  if (ablated_patches.empty()) return ad::add(objects, cells);
  MatrixXd keep = MatrixXd::Ones(n, objects.cols());
  for (int p : ablated_patches) {
    if (p < 0 || p >= n) throw std::out_of_range("ablation: patch " + std::to_string(p) + " outside the image");
    keep.row(p).setZero();
  }
  if (mode == AblationMode::full) return ad::mul_const(ad::add(objects, cells), keep);
  return ad::add(ad::mul_const(objects, keep), cells);
}

ad::Var embed_text(const BoundWeights& w, std::span<const int> text, int first_position) {
  ad::Var tokens = ad::gather_rows(w.token_embed, text);
  ad::Var positions = ad::slice_rows(w.pos_embed, first_position, static_cast<Eigen::Index>(text.size()));
  return ad::add(tokens, positions);
}

ad::Var embed(const BoundWeights& w, const TokenSequence& seq, std::span<const int> ablated_patches,
              AblationMode mode) {
  if (seq.visual.empty()) {
    if (!ablated_patches.empty()) throw std::out_of_range("ablation: sequence has no image");
    return embed_text(w, seq.text, 0);
  }
  if (seq.text.empty()) return embed_visual(w, seq.visual, ablated_patches, mode);
  const ad::Var parts[] = {embed_visual(w, seq.visual, ablated_patches, mode),
                           embed_text(w, seq.text, 0)};
  return ad::vstack(parts);
}

namespace {

std::vector<ad::LastRowScale> layer_scales(const ModelConfig& config, const InterventionSpec* spec) {
  std::vector<ad::LastRowScale> scales;
  if (spec == nullptr || spec->is_noop()) return scales;
  spec->validate(config);
  const auto H = static_cast<std::size_t>(config.n_heads);
  scales.assign(static_cast<std::size_t>(config.n_layers),
                ad::LastRowScale{std::vector<double>(H, 1.0), std::vector<double>(H, 1.0)});
  for (const HeadId& h : spec->cofa_heads) scales[h.layer].visual_factor[h.head] = 1.0 + spec->lambda;
  for (const HeadId& h : spec->fact_heads) scales[h.layer].text_factor[h.head] = 1.0 - spec->lambda;
  return scales;
}

}  // namespace

ad::Var run_layers(const BoundWeights& w, ad::Var x0, const ad::AttentionLayout& layout,
                   const InterventionSpec* intervention, ForwardTrace* trace) {
  const ModelConfig& config = w.source->config;
  if (trace && layout.batch != 1) throw std::invalid_argument("run_layers: traces need batch size 1");
  const std::vector<ad::LastRowScale> scales = layer_scales(config, intervention);
  const Eigen::Index T = layout.seq_len;
  const int dh = config.head_dim();

  if (trace) {
    trace->n_visual = static_cast<int>(layout.n_visual);
    trace->residual = {x0.value()};
    trace->attn_out.clear();
    trace->mlp_out.clear();
    trace->attention.clear();
    trace->head_out.clear();
    trace->output_bias.clear();
  }

  ad::Var x = x0;
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    const BoundLayer& lw = w.layers[l];
    ad::Var h = ad::layer_norm(x, lw.attn_gain, kLayerNormEps);
    ad::Var q = ad::matmul(h, lw.w_q);
    ad::Var k = ad::matmul(h, lw.w_k);
    ad::Var v = ad::matmul(h, lw.w_v);
    const ad::LastRowScale* scale = scales.empty() ? nullptr : &scales[l];
    ad::AttentionOutput attn = ad::causal_attention(q, k, v, layout, scale, trace != nullptr);
    ad::Var a = ad::add_row(ad::matmul(attn.mixed, lw.w_o), lw.b_o);
    ad::Var mid = ad::add(x, a);
    ad::Var hidden = ad::gelu(ad::add_row(ad::matmul(ad::layer_norm(mid, lw.mlp_gain, kLayerNormEps), lw.w_in), lw.b_in));
    ad::Var m = ad::add_row(ad::matmul(hidden, lw.w_out), lw.b_out);
    x = ad::add(mid, m);

    if (trace) {
      trace->attn_out.push_back(a.value());
      trace->mlp_out.push_back(m.value());
      trace->residual.push_back(x.value());
      trace->attention.push_back(std::move(attn.probabilities));
      const MatrixXd& z = attn.mixed.value();
      const MatrixXd& w_o = lw.w_o.value();
      std::vector<VectorXd> heads;
      for (int hd = 0; hd < config.n_heads; ++hd) {
        heads.push_back((z.row(T - 1).segment(hd * dh, dh) * w_o.middleRows(hd * dh, dh)).transpose());
      }
      trace->head_out.push_back(std::move(heads));
      trace->output_bias.push_back(lw.b_o.value().row(0).transpose());
    }
  }
  ad::Var logits = ad::matmul(ad::layer_norm(x, w.final_gain, kLayerNormEps), w.unembed);
  if (trace) trace->logits = logits.value();
  return logits;
}

void check_sequence(const ModelConfig& config, const TokenSequence& seq) {
  if (seq.length() == 0) throw std::invalid_argument("sequence: empty");
  if (seq.length() > config.max_seq_len) {
    throw std::invalid_argument("sequence: length " + std::to_string(seq.length()) + " exceeds max_seq_len " +
                                std::to_string(config.max_seq_len));
  }
  if (!seq.visual.empty() && seq.n_visual() != config.n_patches) {
    throw std::invalid_argument("sequence: image prefix has " + std::to_string(seq.n_visual()) + " patches, model expects " +
                                std::to_string(config.n_patches));
  }
  for (int c : seq.visual) {
    if (c < 0 || c >= config.n_patch_codes) throw std::out_of_range("sequence: patch code " + std::to_string(c) + " out of range");
  }
  for (int t : seq.text) {
    if (t < 0 || t >= config.vocab_size) throw std::out_of_range("sequence: token " + std::to_string(t) + " out of range");
  }
}

ForwardTrace forward(const ModelWeights& weights, const TokenSequence& seq, const ForwardOptions& options) {
  check_sequence(weights.config, seq);
  ad::Tape tape;
  const BoundWeights w = bind(tape, weights, false);
  ad::Var x0 = embed(w, seq, options.ablated_patches, options.ablation_mode);
  ForwardTrace trace;
  const ad::AttentionLayout layout{1, seq.length(), weights.config.n_heads, seq.n_visual()};
  run_layers(w, x0, layout, options.intervention, &trace);
  return trace;
}

ForwardTrace forward_embeddings(const ModelWeights& weights, const MatrixXd& x0, int n_visual,
                                const InterventionSpec* intervention) {
  if (x0.rows() > weights.config.max_seq_len || x0.cols() != weights.config.d_model) {
    throw std::invalid_argument("forward_embeddings: input shape inconsistent with the model");
  }
  ad::Tape tape;
  const BoundWeights w = bind(tape, weights, false);
  ForwardTrace trace;
  const ad::AttentionLayout layout{1, x0.rows(), weights.config.n_heads, n_visual};
  run_layers(w, tape.constant(x0), layout, intervention, &trace);
  return trace;
}

namespace {

VectorXd final_log_probs(const ModelWeights& weights, const TokenSequence& seq, const InterventionSpec* intervention) {
  ForwardOptions options;
  options.intervention = intervention;
  const ForwardTrace trace = forward(weights, seq, options);
  const MatrixXd row = trace.logits.bottomRows(1);
  return log_softmax_rows(row).transpose();
}

}  // namespace

Generation generate(const ModelWeights& weights, const TokenSequence& seq, int n_tokens,
                    const InterventionSpec* intervention) {
  if (n_tokens < 1) throw std::invalid_argument("generate: n_tokens must be >= 1");
  if (seq.length() + n_tokens - 1 > weights.config.max_seq_len) {
    throw std::invalid_argument("generate: context overflow (" + std::to_string(seq.length() + n_tokens - 1) + " > " +
                                std::to_string(weights.config.max_seq_len) + ")");
  }
  Generation out;
  TokenSequence running = seq;
  for (int step = 0; step < n_tokens; ++step) {
    VectorXd log_p = final_log_probs(weights, running, intervention);
    Eigen::Index best = 0;
    log_p.maxCoeff(&best);
    out.tokens.push_back(static_cast<int>(best));
    out.log_probs.push_back(std::move(log_p));
    running.text.push_back(static_cast<int>(best));
  }
  return out;
}

std::vector<VectorXd> teacher_forced_log_probs(const ModelWeights& weights, const TokenSequence& seq,
                                               std::span<const int> continuation,
                                               const InterventionSpec* intervention) {
  std::vector<VectorXd> out;
  TokenSequence running = seq;
  for (std::size_t step = 0; step < continuation.size(); ++step) {
    out.push_back(final_log_probs(weights, running, intervention));
    running.text.push_back(continuation[step]);
  }
  return out;
}

}  // namespace clens
