#include "clens/attribute/attribute.hpp"

#include "clens/util/csv.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace clens {

std::string to_string(AttributionMethod method) {
  switch (method) {
    case AttributionMethod::attention: return "attention";
    case AttributionMethod::gradient: return "gradient";
    case AttributionMethod::random: return "random";
  }
  return "unknown";
}

AttributionMethod attribution_method_from_string(const std::string& name) {
  if (name == "attention") return AttributionMethod::attention;
  if (name == "gradient") return AttributionMethod::gradient;
  if (name == "random") return AttributionMethod::random;
  throw std::invalid_argument("unknown attribution method '" + name + "'");
}

namespace {

void check_tau(double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("tau must lie in [0, 1]");
}

}  // namespace

std::vector<int> threshold_patches(const VectorXd& scores, double tau) {
  check_tau(tau);
  std::vector<int> out;
  if (scores.size() == 0) return out;
  const double peak = scores.maxCoeff();
  if (!(peak > 0.0)) return out;
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    if (scores(i) >= tau * peak) out.push_back(static_cast<int>(i));
  }
  return out;
}

PatchSelection attended_patches(const ForwardTrace& trace, const std::vector<HeadId>& heads, double tau) {
  if (heads.empty()) throw std::invalid_argument("attended_patches: empty head set");
  check_tau(tau);
  const int P = trace.n_visual;
  PatchSelection sel;
  sel.method = AttributionMethod::attention;
  sel.tau = tau;
  sel.scores = VectorXd::Zero(P);
  std::vector<bool> chosen(static_cast<std::size_t>(P), false);
  for (const HeadId& h : heads) {
    const MatrixXd& a = trace.attention.at(h.layer).at(h.head);
    const VectorXd row = a.row(a.rows() - 1).head(P).transpose();
    if (P == 0) continue;
    const double peak = row.maxCoeff();
    if (!(peak > 0.0)) continue;
    for (int p = 0; p < P; ++p) {
      sel.scores(p) = std::max(sel.scores(p), row(p) / peak);
      if (row(p) >= tau * peak) chosen[static_cast<std::size_t>(p)] = true;
    }
  }
  for (int p = 0; p < P; ++p) {
    if (chosen[static_cast<std::size_t>(p)]) sel.patches.push_back(p);
  }
  return sel;
}

VectorXd gradient_scores(const ModelWeights& weights, const TokenSequence& prompt, int target) {
  if (target < 0 || target >= weights.config.vocab_size) throw std::out_of_range("gradient_scores: target out of vocabulary");
  check_sequence(weights.config, prompt);
  const int P = prompt.n_visual();
  if (P == 0) return VectorXd();
  ad::Tape tape;
  const BoundWeights w = bind(tape, weights, false);
  ad::Var visual = tape.leaf(embed_visual(w, prompt.visual).value());
  ad::Var x0 = visual;
  if (!prompt.text.empty()) {
    const ad::Var parts[] = {visual, embed_text(w, prompt.text, 0)};
    x0 = ad::vstack(parts);
  }
  const ad::AttentionLayout layout{1, prompt.length(), weights.config.n_heads, P};
  ad::Var logits = run_layers(w, x0, layout, nullptr, nullptr);
  tape.backward(ad::pick(logits, prompt.length() - 1, target));
  return visual.grad().rowwise().norm();
}

PatchSelection gradient_patches(const ModelWeights& weights, const ConflictExample& example, int target, double tau) {
  check_tau(tau);
  PatchSelection sel;
  sel.method = AttributionMethod::gradient;
  sel.tau = tau;
  sel.scores = gradient_scores(weights, example.prompt, target);
  sel.patches = threshold_patches(sel.scores, tau);
  return sel;
}

PatchSelection random_patches(int n_patches, int size, double tau, std::mt19937_64& rng) {
  if (size < 0 || size > n_patches) throw std::invalid_argument("random_patches: size out of range");
  std::vector<int> cells(static_cast<std::size_t>(n_patches));
  for (int i = 0; i < n_patches; ++i) cells[static_cast<std::size_t>(i)] = i;
  for (int i = 0; i < size; ++i) {
    const auto j = static_cast<std::size_t>(i) + rng() % static_cast<std::size_t>(n_patches - i);
    std::swap(cells[static_cast<std::size_t>(i)], cells[j]);
  }
  PatchSelection sel;
  sel.method = AttributionMethod::random;
  sel.tau = tau;
  sel.patches.assign(cells.begin(), cells.begin() + size);
  std::sort(sel.patches.begin(), sel.patches.end());
  sel.scores = VectorXd::Zero(n_patches);
  for (int p : sel.patches) sel.scores(p) = 1.0;
  return sel;
}

PrecisionRecall attribution_precision(const std::vector<int>& selection, const std::vector<int>& ground_truth) {
  if (ground_truth.empty()) throw std::invalid_argument("attribution_precision: empty ground truth");
  std::size_t hits = 0;
  for (int p : selection) hits += std::find(ground_truth.begin(), ground_truth.end(), p) != ground_truth.end();
  PrecisionRecall pr;
  pr.precision = selection.empty() ? std::numeric_limits<double>::quiet_NaN()
                                   : static_cast<double>(hits) / static_cast<double>(selection.size());
  pr.recall = static_cast<double>(hits) / static_cast<double>(ground_truth.size());
  return pr;
}

std::vector<PatchSelection> select_patches(const ModelWeights& weights, const ConflictExample& example,
                                           const ForwardTrace& trace, const std::vector<HeadId>& cofa_heads,
                                           AttributionMethod method, const std::vector<double>& taus,
                                           std::mt19937_64& rng) {
  std::vector<PatchSelection> out;
  if (method == AttributionMethod::gradient) {
    PatchSelection base;
    base.method = method;
    base.scores = gradient_scores(weights, example.prompt, example.t_cofa);
    for (double tau : taus) {
      PatchSelection sel = base;
      sel.tau = tau;
      sel.patches = threshold_patches(sel.scores, tau);
      out.push_back(std::move(sel));
    }
    return out;
  }
  for (double tau : taus) {
    PatchSelection sel = attended_patches(trace, cofa_heads, tau);
    if (method == AttributionMethod::random) {
      sel = random_patches(trace.n_visual, static_cast<int>(sel.patches.size()), tau, rng);
    }
    out.push_back(std::move(sel));
  }
  return out;
}

double ablated_pair_accuracy(const ModelWeights& weights, const std::vector<ConflictExample>& dataset,
                             const std::vector<std::vector<int>>& ablated, AblationMode mode) {
  if (dataset.empty()) throw std::invalid_argument("ablated_pair_accuracy: empty dataset");
  if (ablated.size() != dataset.size()) throw std::invalid_argument("ablated_pair_accuracy: one patch set per example");
  int wins = 0;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    ForwardOptions options;
    options.ablated_patches = ablated[i];
    options.ablation_mode = mode;
    const VectorXd logits = forward(weights, dataset[i].prompt, options).final_logits();
    wins += logits(dataset[i].t_fact) > logits(dataset[i].t_cofa);
  }
  return static_cast<double>(wins) / static_cast<double>(dataset.size());
}

SelectionTable collect_selections(const ModelWeights& weights, const std::vector<ConflictExample>& dataset,
                                  const std::vector<HeadId>& cofa_heads, AttributionMethod method,
                                  const AblationOptions& options) {
  if (dataset.empty()) throw std::invalid_argument("collect_selections: empty dataset");
  for (double tau : options.taus) check_tau(tau);
  const std::size_t n_tau = options.taus.size();
  SelectionTable table;
  table.patches.assign(n_tau, std::vector<std::vector<int>>(dataset.size()));
  std::vector<double> fraction(n_tau, 0.0), precision(n_tau, 0.0), recall(n_tau, 0.0);
  std::vector<int> n_nonempty(n_tau, 0);
  std::mt19937_64 rng(options.seed);
  for (std::size_t e = 0; e < dataset.size(); ++e) {
    const ConflictExample& ex = dataset[e];
    const ForwardTrace trace = forward(weights, ex.prompt);
    const std::vector<PatchSelection> sels = select_patches(weights, ex, trace, cofa_heads, method, options.taus, rng);
    const double P = ex.prompt.n_visual();
    for (std::size_t t = 0; t < n_tau; ++t) {
      const PrecisionRecall pr = attribution_precision(sels[t].patches, ex.ground_truth_patches);
      fraction[t] += static_cast<double>(sels[t].patches.size()) / P;
      recall[t] += pr.recall;
      if (!std::isnan(pr.precision)) {
        precision[t] += pr.precision;
        ++n_nonempty[t];
      }
      table.patches[t][e] = sels[t].patches;
    }
  }
  const auto n = static_cast<double>(dataset.size());
  for (std::size_t t = 0; t < n_tau; ++t) {
    AblationPoint p;
    p.method = method;
    p.tau = options.taus[t];
    p.mean_fraction = fraction[t] / n;
    p.fact_pair_acc = std::numeric_limits<double>::quiet_NaN();
    p.precision = n_nonempty[t] ? precision[t] / n_nonempty[t] : std::numeric_limits<double>::quiet_NaN();
    p.recall = recall[t] / n;
    table.points.push_back(p);
  }
  return table;
}

std::vector<AblationPoint> ablation_sweep(const ModelWeights& weights, const std::vector<ConflictExample>& dataset,
                                          const std::vector<HeadId>& cofa_heads, AttributionMethod method,
                                          const AblationOptions& options) {
  SelectionTable table = collect_selections(weights, dataset, cofa_heads, method, options);
  for (std::size_t t = 0; t < table.points.size(); ++t) {
    table.points[t].fact_pair_acc = ablated_pair_accuracy(weights, dataset, table.patches[t], options.mode);
  }
  return table.points;
}

double ablation_auc(const std::vector<AblationPoint>& points, double baseline) {
  std::vector<std::pair<double, double>> curve{{0.0, baseline}};
  for (const AblationPoint& p : points) curve.emplace_back(p.mean_fraction, p.fact_pair_acc);
  std::stable_sort(curve.begin(), curve.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  double area = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    area += 0.5 * (curve[i].second + curve[i - 1].second) * (curve[i].first - curve[i - 1].first);
  }
  return area;
}

void write_ablation_csv(std::ostream& out, const std::vector<AblationPoint>& points) {
  CsvWriter csv(out, {"method", "tau", "mean_fraction", "fact_pair_acc", "precision", "recall"});
  for (const AblationPoint& p : points) {
    csv.write(to_string(p.method), p.tau, p.mean_fraction, p.fact_pair_acc, p.precision, p.recall);
  }
}

std::string heatmap_filename(const ConflictExample& example, const PatchSelection& selection) {
  char tau[32];
  std::snprintf(tau, sizeof tau, "%.2f", selection.tau);
  return std::to_string(example.id) + "_" + to_string(selection.method) + "_" + tau + ".svg";
}

std::string emit_heatmap(const ConflictExample& example, const PatchSelection& selection) {
  const Scene& scene = example.scene;
  constexpr int cell = 48;
  constexpr int margin = 8;
  const int width = scene.cols * cell + 2 * margin;
  const int height = scene.rows * cell + 2 * margin + 20;
  double peak = 0.0;
  for (int p : selection.patches) peak = std::max(peak, selection.scores.size() > p ? selection.scores(p) : 0.0);

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (int r = 0; r < scene.rows; ++r) {
    for (int c = 0; c < scene.cols; ++c) {
      const int p = r * scene.cols + c;
      const int x = margin + c * cell, y = margin + r * cell;
      svg << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell << "\" height=\"" << cell
          << "\" fill=\"none\" stroke=\"#bbbbbb\" stroke-width=\"1\"/>\n";
      if (std::find(selection.patches.begin(), selection.patches.end(), p) != selection.patches.end()) {
        const double s = peak > 0.0 ? selection.scores(p) / peak : 1.0;
        char opacity[16];
        std::snprintf(opacity, sizeof opacity, "%.3f", 0.15 + 0.75 * s);
        svg << "<rect class=\"score\" x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell << "\" height=\"" << cell
            << "\" fill=\"#d62728\" fill-opacity=\"" << opacity << "\"/>\n";
      }
      const int code = scene.cells[static_cast<std::size_t>(p)];
      if (code != FactWorld::background_code()) {
        svg << "<text x=\"" << x + cell / 2 << "\" y=\"" << y + cell / 2 + 4
            << "\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"middle\">" << code << "</text>\n";
      }
    }
  }
  for (int p : example.ground_truth_patches) {
    const int x = margin + (p % scene.cols) * cell, y = margin + (p / scene.cols) * cell;
    svg << "<rect class=\"truth\" x=\"" << x + 2 << "\" y=\"" << y + 2 << "\" width=\"" << cell - 4 << "\" height=\""
        << cell - 4 << "\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"3\"/>\n";
  }
  char tau[32];
  std::snprintf(tau, sizeof tau, "%.2f", selection.tau);
  svg << "<text x=\"" << margin << "\" y=\"" << height - 8 << "\" font-family=\"monospace\" font-size=\"11\">example "
      << example.id << " " << to_string(selection.method) << " tau=" << tau << "</text>\n";
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace clens
