#include "clens/intervene/intervene.hpp"

#include "clens/util/csv.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>
#include <stdexcept>

namespace clens {

VectorXd apply_intervention(const VectorXd& row, const std::vector<bool>& modality_mask, const HeadId& head,
                            const InterventionSpec& spec) {
  if (static_cast<std::size_t>(row.size()) != modality_mask.size()) {
    throw std::invalid_argument("apply_intervention: row and modality mask differ in length");
  }
  const bool is_fact = std::find(spec.fact_heads.begin(), spec.fact_heads.end(), head) != spec.fact_heads.end();
  const bool is_cofa = std::find(spec.cofa_heads.begin(), spec.cofa_heads.end(), head) != spec.cofa_heads.end();
  if (is_fact && is_cofa) throw std::invalid_argument("apply_intervention: head is in both sets");
  VectorXd out = row;
  if (spec.lambda == 0.0 || !(is_fact || is_cofa)) return out;
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    const bool image = modality_mask[static_cast<std::size_t>(i)];
    if (is_cofa && image) out(i) *= 1.0 + spec.lambda;
    if (is_fact && !image) out(i) *= 1.0 - spec.lambda;
  }
  return out;
}

InterventionSpec steering_spec(std::vector<HeadId> fact_heads, std::vector<HeadId> cofa_heads, double strength) {
  return InterventionSpec{std::move(fact_heads), std::move(cofa_heads), strength == 0.0 ? 0.0 : -strength};
}

Outcome evaluate(const ModelWeights& weights, const std::vector<ConflictExample>& dataset,
                 const InterventionSpec* spec) {
  if (dataset.empty()) throw std::invalid_argument("evaluate: empty dataset");
  Outcome o;
  ForwardOptions options;
  options.intervention = spec;
  for (const ConflictExample& ex : dataset) {
    const VectorXd logits = forward(weights, ex.prompt, options).final_logits();
    const double fact = logits(ex.t_fact);
    o.fact_pair_acc += fact > logits(ex.t_cofa);
    const auto above = (logits.array() > fact).count();
    o.fact_top_rate += above == 0;
    o.mean_rank += 1.0 + static_cast<double>(above);
  }
  const auto n = static_cast<double>(dataset.size());
  o.fact_pair_acc /= n;
  o.fact_top_rate /= n;
  o.mean_rank /= n;
  return o;
}

namespace {

double kl_along(const ModelWeights& weights, const ConflictExample& example, const Generation& base,
                const InterventionSpec& spec) {
  if (spec.is_noop()) return 0.0;
  const std::vector<VectorXd> steered = teacher_forced_log_probs(weights, example.prompt, base.tokens, &spec);
  double total = 0.0;
  for (std::size_t i = 0; i < base.log_probs.size(); ++i) {
    const VectorXd& lp = base.log_probs[i];
    total += (lp.array().exp() * (lp - steered[i]).array()).sum();
  }
  return std::max(0.0, total / static_cast<double>(base.log_probs.size()));
}

}  // namespace

double generation_kl(const ModelWeights& weights, const ConflictExample& example, const InterventionSpec& spec,
                     int n_tokens) {
  if (n_tokens < 1) throw std::invalid_argument("generation_kl: n_tokens must be >= 1");
  if (spec.is_noop()) return 0.0;
  return kl_along(weights, example, generate(weights, example.prompt, n_tokens), spec);
}

double generation_kl(const ModelWeights& weights, const std::vector<ConflictExample>& dataset,
                     const InterventionSpec& spec, int n_tokens) {
  if (dataset.empty()) throw std::invalid_argument("generation_kl: empty dataset");
  double total = 0.0;
  for (const ConflictExample& ex : dataset) total += generation_kl(weights, ex, spec, n_tokens);
  return total / static_cast<double>(dataset.size());
}

namespace {

std::vector<SweepPoint> sweep(const ModelWeights& weights, const std::vector<ConflictExample>& dataset,
                              const std::vector<HeadId>& fact, const std::vector<HeadId>& cofa, int k,
                              const std::string& mode, const SweepOptions& options) {
  if (dataset.empty()) throw std::invalid_argument("sweep: empty dataset");
  if (options.kl_tokens < 1) throw std::invalid_argument("sweep: kl_tokens must be >= 1");
  std::vector<Generation> bases;  // shared by every grid point
  std::vector<SweepPoint> out;
  for (double s : options.grid) {
    const InterventionSpec spec = steering_spec(fact, cofa, s);
    SweepPoint p;
    p.lambda = s;
    p.k = k;
    p.mode = mode;
    p.outcome = evaluate(weights, dataset, &spec);
    if (!spec.is_noop()) {
      if (bases.empty()) {
        for (const ConflictExample& ex : dataset) bases.push_back(generate(weights, ex.prompt, options.kl_tokens));
      }
      double total = 0.0;
      for (std::size_t i = 0; i < dataset.size(); ++i) total += kl_along(weights, dataset[i], bases[i], spec);
      p.mean_kl = total / static_cast<double>(dataset.size());
    }
    p.seed = options.seed;
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace

std::vector<SweepPoint> lambda_sweep(const ModelWeights& weights, const std::vector<ConflictExample>& dataset,
                                     const HeadRanking& ranking, const SweepOptions& options) {
  return sweep(weights, dataset, ranking.fact_heads, ranking.cofa_heads, static_cast<int>(ranking.fact_heads.size()),
               "target", options);
}

std::vector<HeadId> random_heads(const ModelConfig& config, int n_heads, std::uint64_t seed) {
  std::vector<HeadId> heads = all_heads(config);
  if (n_heads < 0 || n_heads > static_cast<int>(heads.size())) {
    throw std::invalid_argument("random_heads: n_heads must lie in [0, L*H]");
  }
  std::mt19937_64 rng(seed);
  // Partial Fisher-Yates with an explicit index draw keeps the order
  // independent of the standard library's shuffle.
  for (int i = 0; i < n_heads; ++i) {
    const auto j = static_cast<std::size_t>(i) + rng() % (heads.size() - static_cast<std::size_t>(i));
    std::swap(heads[static_cast<std::size_t>(i)], heads[j]);
  }
  heads.resize(static_cast<std::size_t>(n_heads));
  return heads;
}

std::vector<SweepPoint> random_head_control(const ModelWeights& weights, const std::vector<ConflictExample>& dataset,
                                            int n_heads, const SweepOptions& options) {
  const std::vector<HeadId> heads = random_heads(weights.config, n_heads, options.seed);
  std::vector<HeadId> fact, cofa;
  for (std::size_t i = 0; i < heads.size(); ++i) (i % 2 == 0 ? fact : cofa).push_back(heads[i]);
  return sweep(weights, dataset, fact, cofa, n_heads, "random", options);
}

int scaled_random_head_count(const ModelConfig& config) {
  const double scaled = 100.0 / 1024.0 * config.total_heads();
  return std::clamp(static_cast<int>(std::lround(scaled)), std::min(2, config.total_heads()), config.total_heads());
}

int head_budget(const ModelConfig& config, double fraction) {
  const int n = config.total_heads();
  if (n < 2) throw std::invalid_argument("head_budget: model needs at least two heads");
  return std::clamp(static_cast<int>(std::lround(fraction * n)), 1, n / 2);
}

std::vector<SweepPoint> vary_k_sweep(const ModelWeights& weights, const std::vector<ConflictExample>& dataset,
                                     const MatrixXd& head_accuracy, const std::vector<int>& k_grid, double strength,
                                     std::uint64_t seed) {
  if (!std::is_sorted(k_grid.begin(), k_grid.end())) throw std::invalid_argument("vary_k_sweep: k grid must ascend");
  std::vector<SweepPoint> out;
  SweepOptions options;
  options.grid = {strength};
  options.kl_tokens = 1;
  options.seed = seed;
  for (int k : k_grid) {
    const HeadRanking ranking = rank_heads(head_accuracy, k);
    SweepPoint p = sweep(weights, dataset, ranking.fact_heads, ranking.cofa_heads, k, "target", options).front();
    out.push_back(std::move(p));
  }
  return out;
}

void write_sweep_csv(std::ostream& out, const std::vector<SweepPoint>& points) {
  CsvWriter csv(out, {"lambda", "k", "mode", "fact_pair_acc", "fact_top_rate", "mean_rank", "mean_kl", "seed"});
  for (const SweepPoint& p : points) {
    csv.write(p.lambda, p.k, p.mode, p.outcome.fact_pair_acc, p.outcome.fact_top_rate, p.outcome.mean_rank, p.mean_kl,
              p.seed);
  }
}

}  // namespace clens
