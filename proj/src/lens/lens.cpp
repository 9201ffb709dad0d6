#include "clens/lens/lens.hpp"

#include "clens/math/functions.hpp"
#include "clens/util/csv.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace clens {

std::string to_string(ComponentKind kind) {
  switch (kind) {
    case ComponentKind::residual: return "residual";
    case ComponentKind::attention: return "attention";
    case ComponentKind::mlp: return "mlp";
    case ComponentKind::head: return "head";
  }
  return "unknown";
}

namespace {

VectorXd component_vector(const ForwardTrace& trace, const Component& c) {
  const int L = trace.n_layers();
  const Eigen::Index last = trace.length() - 1;
  auto check_block = [&] {
    if (c.layer < 0 || c.layer >= L) throw std::out_of_range("lens: layer " + std::to_string(c.layer) + " out of range");
  };
  switch (c.kind) {
    case ComponentKind::residual:
      if (c.layer < 0 || c.layer > L) throw std::out_of_range("lens: residual layer " + std::to_string(c.layer) + " out of range");
      return trace.residual[c.layer].row(last).transpose();
    case ComponentKind::attention:
      check_block();
      return trace.attn_out[c.layer].row(last).transpose();
    case ComponentKind::mlp:
      check_block();
      return trace.mlp_out[c.layer].row(last).transpose();
    case ComponentKind::head:
      check_block();
      if (c.head < 0 || c.head >= static_cast<int>(trace.head_out[c.layer].size())) {
        throw std::out_of_range("lens: head " + std::to_string(c.head) + " out of range");
      }
      return trace.head_out[c.layer][c.head];
  }
  throw std::invalid_argument("lens: unknown component kind");
}

std::vector<Component> components(const ModelConfig& config) {
  std::vector<Component> out;
  for (int l = 0; l <= config.n_layers; ++l) out.push_back({ComponentKind::residual, l, -1});
  for (int l = 0; l < config.n_layers; ++l) {
    out.push_back({ComponentKind::attention, l, -1});
    out.push_back({ComponentKind::mlp, l, -1});
    for (int h = 0; h < config.n_heads; ++h) out.push_back({ComponentKind::head, l, h});
  }
  return out;
}

std::size_t component_index(const ModelConfig& config, const Component& c) {
  const std::size_t per_layer = 2 + static_cast<std::size_t>(config.n_heads);
  const std::size_t base = static_cast<std::size_t>(config.n_layers) + 1;
  switch (c.kind) {
    case ComponentKind::residual: return static_cast<std::size_t>(c.layer);
    case ComponentKind::attention: return base + c.layer * per_layer;
    case ComponentKind::mlp: return base + c.layer * per_layer + 1;
    case ComponentKind::head: return base + c.layer * per_layer + 2 + c.head;
  }
  throw std::invalid_argument("lens: unknown component kind");
}

}  // namespace

VectorXd lens_project(const ModelWeights& weights, const ForwardTrace& trace, const Component& component,
                      const LensOptions& options) {
  const VectorXd v = component_vector(trace, component);
  if (!options.final_norm) return (v.transpose() * weights.unembed).transpose();
  return (layer_norm_rows(v.transpose(), weights.final_gain) * weights.unembed).transpose();
}

LensAnalysis analyze(const ModelWeights& weights, const std::vector<ConflictExample>& dataset,
                     const LensOptions& options) {
  LensAnalysis out;
  out.config = weights.config;
  const std::vector<Component> comps = components(weights.config);
  out.traces.reserve(dataset.size());
  out.records.reserve(dataset.size() * comps.size());
  for (const ConflictExample& ex : dataset) {
    ForwardTrace trace = forward(weights, ex.prompt);
    for (const Component& c : comps) {
      const VectorXd logits = lens_project(weights, trace, c, options);
      out.records.push_back({c, ex.id, logits(ex.t_fact), logits(ex.t_cofa)});
    }
    out.traces.push_back(std::move(trace));
  }
  return out;
}

double fact_accuracy(const LensAnalysis& analysis, const Component& component) {
  const std::size_t n_comp = components(analysis.config).size();
  const std::size_t idx = component_index(analysis.config, component);
  const std::size_t n_examples = analysis.traces.size();
  if (n_examples == 0) throw std::invalid_argument("lens: empty analysis");
  int wins = 0;
  for (std::size_t e = 0; e < n_examples; ++e) wins += analysis.records[e * n_comp + idx].fact_wins();
  return static_cast<double>(wins) / static_cast<double>(n_examples);
}

std::vector<BlockPreference> block_preference_profile(const LensAnalysis& analysis) {
  std::vector<BlockPreference> out;
  for (int l = 0; l < analysis.config.n_layers; ++l) {
    out.push_back({l, fact_accuracy(analysis, {ComponentKind::attention, l, -1}) - 0.5,
                   fact_accuracy(analysis, {ComponentKind::mlp, l, -1}) - 0.5});
  }
  return out;
}

std::vector<BlockPreference> block_preference_profile(const ModelWeights& weights,
                                                      const std::vector<ConflictExample>& dataset) {
  if (dataset.empty()) throw std::invalid_argument("block_preference_profile: empty dataset");
  return block_preference_profile(analyze(weights, dataset));
}

MatrixXd head_accuracy(const LensAnalysis& analysis) {
  MatrixXd acc(analysis.config.n_layers, analysis.config.n_heads);
  for (int l = 0; l < acc.rows(); ++l) {
    for (int h = 0; h < acc.cols(); ++h) acc(l, h) = fact_accuracy(analysis, {ComponentKind::head, l, h});
  }
  return acc;
}

double HeadRanking::mean_accuracy(const std::vector<HeadId>& heads) const {
  if (heads.empty()) return std::numeric_limits<double>::quiet_NaN();
  double total = 0.0;
  for (const HeadId& h : heads) total += accuracy(h.layer, h.head);
  return total / static_cast<double>(heads.size());
}

HeadRanking rank_heads(const MatrixXd& head_accuracy, int k) {
  const auto n = static_cast<int>(head_accuracy.size());
  if (k < 0 || 2 * k > n) throw std::invalid_argument("rank_heads: k must lie in [0, L*H/2]");
  std::vector<HeadId> heads;
  for (int l = 0; l < head_accuracy.rows(); ++l) {
    for (int h = 0; h < head_accuracy.cols(); ++h) heads.push_back({l, h});
  }
  auto acc = [&](const HeadId& h) { return head_accuracy(h.layer, h.head); };
  HeadRanking r;
  r.accuracy = head_accuracy;
  std::vector<HeadId> top = heads;
  std::stable_sort(top.begin(), top.end(), [&](const HeadId& a, const HeadId& b) { return acc(a) > acc(b); });
  r.fact_heads.assign(top.begin(), top.begin() + k);
  // Bottom-k from the heads not already chosen, so tied accuracies cannot
  // put one head in both sets.
  std::vector<HeadId> bottom(top.begin() + k, top.end());
  std::sort(bottom.begin(), bottom.end());
  std::stable_sort(bottom.begin(), bottom.end(), [&](const HeadId& a, const HeadId& b) { return acc(a) < acc(b); });
  r.cofa_heads.assign(bottom.begin(), bottom.begin() + k);
  return r;
}

HeadRanking rank_heads(const LensAnalysis& analysis, int k) { return rank_heads(head_accuracy(analysis), k); }

HeadRanking rank_heads(const ModelWeights& weights, const std::vector<ConflictExample>& dataset, int k) {
  if (dataset.empty()) throw std::invalid_argument("rank_heads: empty dataset");
  return rank_heads(analyze(weights, dataset), k);
}

double image_attention(const ForwardTrace& trace, const HeadId& head) {
  const MatrixXd& a = trace.attention.at(head.layer).at(head.head);
  if (trace.n_visual == 0) return 0.0;
  return a.row(a.rows() - 1).head(trace.n_visual).sum();
}

double image_attention_fraction(const std::vector<ForwardTrace>& traces, const std::vector<HeadId>& heads) {
  if (heads.empty()) throw std::invalid_argument("image_attention_fraction: empty head set");
  if (traces.empty()) throw std::invalid_argument("image_attention_fraction: no traces");
  double total = 0.0;
  for (const ForwardTrace& t : traces) {
    for (const HeadId& h : heads) total += image_attention(t, h);
  }
  return total / static_cast<double>(traces.size() * heads.size());
}

std::vector<HeadId> all_heads(const ModelConfig& config) {
  std::vector<HeadId> out;
  for (int l = 0; l < config.n_layers; ++l) {
    for (int h = 0; h < config.n_heads; ++h) out.push_back({l, h});
  }
  return out;
}

void write_lens_csv(std::ostream& out, const LensAnalysis& analysis) {
  CsvWriter csv(out, {"component", "layer", "head", "fact_acc", "pref_strength", "image_attn"});
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (const Component& c : components(analysis.config)) {
    const double acc = fact_accuracy(analysis, c);
    double image = nan;
    if (c.kind == ComponentKind::head) {
      image = image_attention_fraction(analysis.traces, {{c.layer, c.head}});
    } else if (c.kind == ComponentKind::attention) {
      std::vector<HeadId> layer_heads;
      for (int h = 0; h < analysis.config.n_heads; ++h) layer_heads.push_back({c.layer, h});
      image = image_attention_fraction(analysis.traces, layer_heads);
    }
    csv.write(to_string(c.kind), c.layer, c.kind == ComponentKind::head ? std::to_string(c.head) : std::string(), acc,
              acc - 0.5, image);
  }
}

}  // namespace clens
