#include "clens/report/pipeline.hpp"

#include "clens/model/checkpoint.hpp"
#include "clens/report/plot.hpp"
#include "clens/util/csv.hpp"
#include "clens/world/corpus.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>

namespace clens {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

// JSON has no NaN; missing values become null.
ordered_json number(double v) { return std::isfinite(v) ? ordered_json(v) : ordered_json(nullptr); }

ordered_json outcome_json(const Outcome& o) {
  return {{"fact_pair_acc", o.fact_pair_acc}, {"fact_top_rate", o.fact_top_rate}, {"mean_rank", o.mean_rank}};
}

ordered_json heads_json(const std::vector<HeadId>& heads) {
  ordered_json out = ordered_json::array();
  for (const HeadId& h : heads) out.push_back({h.layer, h.head});
  return out;
}

std::vector<ForwardTrace> traces_of(const ModelWeights& weights, const std::vector<ConflictExample>& examples) {
  std::vector<ForwardTrace> out;
  out.reserve(examples.size());
  for (const ConflictExample& ex : examples) out.push_back(forward(weights, ex.prompt));
  return out;
}

std::string to_string(AblationMode mode) { return mode == AblationMode::full ? "full" : "object_only"; }

}  // namespace

void write_heads_csv(std::ostream& out, const HeadRanking& ranking, const std::vector<ForwardTrace>& traces) {
  CsvWriter csv(out, {"role", "layer", "head", "fact_acc", "image_attn"});
  auto rows = [&](const char* role, const std::vector<HeadId>& heads) {
    for (const HeadId& h : heads) {
      csv.write(role, h.layer, h.head, ranking.accuracy(h.layer, h.head), image_attention_fraction(traces, {h}));
    }
  };
  rows("fact", ranking.fact_heads);
  rows("cofa", ranking.cofa_heads);
  // Set-level rows: mean accuracy and image-attention fraction of each set.
  const std::vector<HeadId> every = [&] {
    std::vector<HeadId> v;
    for (int l = 0; l < ranking.accuracy.rows(); ++l) {
      for (int h = 0; h < ranking.accuracy.cols(); ++h) v.push_back({l, h});
    }
    return v;
  }();
  auto set_row = [&](const char* role, const std::vector<HeadId>& heads) {
    if (heads.empty()) return;
    csv.write(role, "", "", ranking.mean_accuracy(heads), image_attention_fraction(traces, heads));
  };
  set_row("fact_set", ranking.fact_heads);
  set_row("cofa_set", ranking.cofa_heads);
  set_row("all", every);
}

fs::path resolve_out_dir(const std::string& flag, const RunConfig& config) {
  if (!flag.empty()) return flag;
  if (const char* root = std::getenv("CONFLICT_LENS_OUT"); root && *root) {
    const fs::path configured(config.output_dir);
    return configured.is_absolute() ? configured : fs::path(root) / configured;
  }
  return config.output_dir;
}

Pipeline::Pipeline(RunConfig config, fs::path out_dir, std::ostream* log)
    : config_(std::move(config)),
      out_dir_(std::move(out_dir)),
      log_(log),
      summary_(RunSummary::open(out_dir_, config_.hash())) {
  config_.validate();
  fs::create_directories(out_dir_);
}

template <typename Body>
void Pipeline::stage(const std::string& name, Body body) {
  note("[" + name + "] start");
  const auto t0 = std::chrono::steady_clock::now();
  ordered_json metrics = body();
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  summary_.set_stage(name, std::move(metrics), seconds);
  summary_.save();
  std::ostringstream line;
  line << "[" << name << "] done in " << seconds << " s";
  note(line.str());
}

void Pipeline::note(const std::string& line) const {
  if (log_) *log_ << line << std::endl;
}

void Pipeline::write_text(const std::string& relative, const std::string& text, const std::string& stage_name) {
  const fs::path path = out_dir_ / relative;
  fs::create_directories(path.parent_path());
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
  }
  summary_.record_artifact(relative, stage_name);
}

FactWorld Pipeline::world() const { return FactWorld::generate(config_.world_config()); }

ModelWeights Pipeline::load_model() const { return load_checkpoint(summary_.require(artifact::checkpoint)); }

std::vector<ConflictExample> Pipeline::load_examples() const {
  return load_dataset(summary_.require(artifact::dataset));
}

AblationMode Pipeline::ablation_mode() const {
  return config_.analysis.ablation_mode == "full" ? AblationMode::full : AblationMode::object_only;
}

HeadRanking Pipeline::load_ranking() const {
  const CsvTable lens = read_csv(summary_.require(artifact::lens));
  const CsvTable heads = read_csv(summary_.require(artifact::heads));
  const ModelConfig model = world().model_config(config_.model);
  HeadRanking r;
  r.accuracy = MatrixXd::Constant(model.n_layers, model.n_heads, std::numeric_limits<double>::quiet_NaN());
  const auto kind = lens.column("component"), layer = lens.column("layer"), head = lens.column("head"),
             acc = lens.column("fact_acc");
  for (const auto& row : lens.rows) {
    if (row[kind] != "head") continue;
    const int l = std::stoi(row[layer]), h = std::stoi(row[head]);
    if (l < 0 || l >= model.n_layers || h < 0 || h >= model.n_heads) {
      throw MissingArtifact("lens.csv does not match the configured model shape");
    }
    r.accuracy(l, h) = std::strtod(row[acc].c_str(), nullptr);
  }
  if (r.accuracy.hasNaN()) throw MissingArtifact("lens.csv lacks head rows for the configured model");
  const auto role = heads.column("role"), hl = heads.column("layer"), hh = heads.column("head");
  for (const auto& row : heads.rows) {
    if (row[role] == "fact") r.fact_heads.push_back({std::stoi(row[hl]), std::stoi(row[hh])});
    if (row[role] == "cofa") r.cofa_heads.push_back({std::stoi(row[hl]), std::stoi(row[hh])});
  }
  return r;
}

void Pipeline::train() {
  stage("train", [&] {
    const FactWorld w = world();
    const ModelConfig model = w.model_config(config_.model);
    const auto corpus = build_training_corpus(w, config_.corpus.text_reps, config_.corpus.caption_reps,
                                              config_.derived_seed("corpus"), config_.corpus.scene_reps);
    const TrainConfig tc = config_.train_config();
    note("[train] " + std::to_string(corpus.size()) + " sequences, " + std::to_string(model.total_heads()) + " heads");
    TrainResult result = clens::train(tc, w, corpus, ModelWeights::random(model, config_.derived_seed("init")));
    const TrainReport& rep = result.report;

    fs::create_directories(out_dir_);
    save_checkpoint(out_dir_ / artifact::checkpoint, result.weights);
    summary_.record_artifact(artifact::checkpoint, "train");

    std::ostringstream csv_text;
    CsvWriter csv(csv_text, {"step", "batch_loss", "monitor_loss"});
    for (int s = 0; s <= rep.steps; ++s) {
      const auto monitor_index = static_cast<std::size_t>(s / 10);
      const bool monitored = s % 10 == 0 && monitor_index < rep.monitor_loss.size();
      const double batch = s < rep.steps ? rep.batch_loss[static_cast<std::size_t>(s)]
                                         : std::numeric_limits<double>::quiet_NaN();
      csv.write(s, batch, monitored ? rep.monitor_loss[monitor_index] : std::numeric_limits<double>::quiet_NaN());
    }
    write_text(artifact::train_loss, csv_text.str(), "train");

    ordered_json m;
    m["steps"] = rep.steps;
    m["n_sequences"] = corpus.size();
    m["fact_accuracy"] = rep.fact_accuracy;
    m["caption_accuracy"] = rep.caption_accuracy;
    m["converged"] = rep.converged;
    m["final_batch_loss"] = rep.batch_loss.empty() ? ordered_json(nullptr) : ordered_json(rep.batch_loss.back());
    m["monitor_loss"] = rep.monitor_loss;
    m["parameters"] = result.weights.parameter_count();
    return m;
  });
}

void Pipeline::build_dataset() {
  stage("build_dataset", [&] {
    const ModelWeights weights = load_model();
    const FactWorld w = world();
    const Dataset data = clens::build_dataset(weights, w, config_.analysis.n_candidates, config_.derived_seed("dataset"));
    save_dataset(out_dir_ / artifact::dataset, data.examples);
    summary_.record_artifact(artifact::dataset, "build_dataset");

    ordered_json m;
    m["n_candidates"] = data.stats.n_candidates;
    m["dropped_ambiguous"] = data.stats.dropped_ambiguous;
    m["dropped_not_induced"] = data.stats.dropped_not_induced;
    m["retained"] = data.stats.retained;
    m["retention"] = data.stats.retention();
    m["text_fact_accuracy"] = text_fact_accuracy(weights, w);
    if (!data.examples.empty()) {
      std::vector<ConflictExample> text_only = data.examples;
      for (ConflictExample& ex : text_only) ex.prompt = ex.text_prompt();
      m["text_only"] = outcome_json(evaluate(weights, text_only));
      m["with_image"] = outcome_json(evaluate(weights, data.examples));
    }
    return m;
  });
}

void Pipeline::lens() {
  stage("lens", [&] {
    const ModelWeights weights = load_model();
    const auto examples = load_examples();
    if (examples.empty()) throw AcceptanceFailure("lens: the conflict dataset is empty");
    const LensAnalysis analysis = analyze(weights, examples, LensOptions{config_.analysis.lens_final_norm});
    std::ostringstream text;
    write_lens_csv(text, analysis);
    write_text(artifact::lens, text.str(), "lens");

    ordered_json m;
    ordered_json profile = ordered_json::array();
    for (const BlockPreference& b : block_preference_profile(analysis)) {
      profile.push_back({{"layer", b.layer}, {"attention", b.attention}, {"mlp", b.mlp}});
    }
    m["block_preference"] = profile;
    m["final_residual_fact_acc"] = fact_accuracy(analysis, {ComponentKind::residual, weights.config.n_layers, -1});
    return m;
  });
}

void Pipeline::heads() {
  stage("heads", [&] {
    const ModelWeights weights = load_model();
    const auto examples = load_examples();
    // Head accuracies come from lens.csv so the ranking matches the table.
    const CsvTable lens = read_csv(summary_.require(artifact::lens));
    MatrixXd acc = MatrixXd::Zero(weights.config.n_layers, weights.config.n_heads);
    for (const auto& row : lens.rows) {
      if (row[lens.column("component")] != "head") continue;
      acc(std::stoi(row[lens.column("layer")]), std::stoi(row[lens.column("head")])) =
          std::strtod(row[lens.column("fact_acc")].c_str(), nullptr);
    }
    const int k = head_budget(weights.config, config_.analysis.head_fraction);
    const HeadRanking ranking = rank_heads(acc, k);
    const auto traces = traces_of(weights, examples);
    std::ostringstream text;
    write_heads_csv(text, ranking, traces);
    write_text(artifact::heads, text.str(), "heads");

    ordered_json m;
    m["k"] = k;
    m["fact_heads"] = heads_json(ranking.fact_heads);
    m["cofa_heads"] = heads_json(ranking.cofa_heads);
    m["mean_accuracy_all"] = ranking.mean_accuracy();
    m["mean_accuracy_fact"] = ranking.mean_accuracy(ranking.fact_heads);
    m["mean_accuracy_cofa"] = ranking.mean_accuracy(ranking.cofa_heads);
    m["image_attention_all"] = image_attention_fraction(traces, all_heads(weights.config));
    m["image_attention_fact"] = image_attention_fraction(traces, ranking.fact_heads);
    m["image_attention_cofa"] = image_attention_fraction(traces, ranking.cofa_heads);
    return m;
  });
}

void Pipeline::intervene() {
  stage("intervene", [&] {
    const ModelWeights weights = load_model();
    const auto examples = load_examples();
    const HeadRanking ranking = load_ranking();
    const AnalysisConfig& a = config_.analysis;

    SweepOptions options;
    options.grid = a.lambda_grid;
    options.kl_tokens = a.kl_tokens;
    options.seed = config_.seed;
    std::vector<SweepPoint> points = lambda_sweep(weights, examples, ranking, options);
    note("[intervene] ranked heads done");

    const int n_random = a.n_random_heads > 0 ? a.n_random_heads : scaled_random_head_count(weights.config);
    double max_random_deviation = 0.0;
    const Outcome baseline = evaluate(weights, examples);
    for (int seed : a.control_seeds) {
      SweepOptions control = options;
      control.seed = static_cast<std::uint64_t>(seed);
      for (SweepPoint& p : random_head_control(weights, examples, n_random, control)) {
        max_random_deviation =
            std::max(max_random_deviation, std::abs(p.outcome.fact_pair_acc - baseline.fact_pair_acc));
        points.push_back(std::move(p));
      }
    }
    std::ostringstream text;
    write_sweep_csv(text, points);
    write_text(artifact::intervene, text.str(), "intervene");

    const auto k_points =
        vary_k_sweep(weights, examples, ranking.accuracy, a.k_grid, a.k_sweep_lambda, config_.seed);
    std::ostringstream k_text;
    write_sweep_csv(k_text, k_points);
    write_text(artifact::intervene_k, k_text.str(), "intervene");

    ordered_json m;
    m["baseline"] = outcome_json(baseline);
    ordered_json target = ordered_json::array();
    for (const SweepPoint& p : points) {
      if (p.mode != "target") continue;
      target.push_back({{"lambda", p.lambda}, {"fact_pair_acc", p.outcome.fact_pair_acc}, {"mean_kl", p.mean_kl}});
    }
    m["target"] = target;
    m["n_random_heads"] = n_random;
    m["max_random_deviation"] = max_random_deviation;
    return m;
  });
}

void Pipeline::attribute() {
  stage("attribute", [&] {
    const ModelWeights weights = load_model();
    const auto examples = load_examples();
    const HeadRanking ranking = load_ranking();
    const AnalysisConfig& a = config_.analysis;

    AblationOptions options;
    options.taus = a.tau_grid;
    options.mode = ablation_mode();
    options.seed = config_.derived_seed("attribute");
    std::vector<AblationPoint> points;
    for (AttributionMethod method : {AttributionMethod::attention, AttributionMethod::gradient}) {
      const SelectionTable table = collect_selections(weights, examples, ranking.cofa_heads, method, options);
      points.insert(points.end(), table.points.begin(), table.points.end());
    }
    std::ostringstream text;
    write_ablation_csv(text, points);
    write_text(artifact::attribution, text.str(), "attribute");

    // Heatmaps for the first few examples.
    const auto n_maps = std::min<std::size_t>(examples.size(), static_cast<std::size_t>(std::max(0, a.n_heatmaps)));
    std::mt19937_64 rng(config_.derived_seed("heatmaps"));
    int n_written = 0;
    for (std::size_t i = 0; i < n_maps; ++i) {
      const ForwardTrace trace = forward(weights, examples[i].prompt);
      for (AttributionMethod method : {AttributionMethod::attention, AttributionMethod::gradient}) {
        for (const PatchSelection& sel :
             select_patches(weights, examples[i], trace, ranking.cofa_heads, method, a.heatmap_taus, rng)) {
          write_text(std::string(artifact::heatmap_dir) + "/" + heatmap_filename(examples[i], sel),
                     emit_heatmap(examples[i], sel), "attribute");
          ++n_written;
        }
      }
    }

    double gt_fraction = 0.0;
    for (const ConflictExample& ex : examples) {
      gt_fraction += static_cast<double>(ex.ground_truth_patches.size()) / ex.scene.cells.size();
    }
    gt_fraction /= static_cast<double>(std::max<std::size_t>(1, examples.size()));

    ordered_json m;
    m["random_precision_baseline"] = gt_fraction;
    ordered_json rows = ordered_json::array();
    for (const AblationPoint& p : points) {
      rows.push_back({{"method", to_string(p.method)},
                      {"tau", p.tau},
                      {"mean_fraction", p.mean_fraction},
                      {"precision", number(p.precision)},
                      {"recall", p.recall}});
    }
    m["precision"] = rows;
    m["n_heatmaps"] = n_written;
    return m;
  });
}

void Pipeline::ablate() {
  stage("ablate", [&] {
    const ModelWeights weights = load_model();
    const auto examples = load_examples();
    const HeadRanking ranking = load_ranking();
    AblationOptions options;
    options.taus = config_.analysis.tau_grid;
    options.mode = ablation_mode();
    options.seed = config_.derived_seed("ablate");
    const double baseline = evaluate(weights, examples).fact_pair_acc;

    std::vector<AblationPoint> points;
    ordered_json auc;
    for (AttributionMethod method :
         {AttributionMethod::attention, AttributionMethod::gradient, AttributionMethod::random}) {
      const auto curve = ablation_sweep(weights, examples, ranking.cofa_heads, method, options);
      auc[to_string(method)] = ablation_auc(curve, baseline);
      points.insert(points.end(), curve.begin(), curve.end());
      note("[ablate] " + to_string(method) + " done");
    }
    std::ostringstream text;
    write_ablation_csv(text, points);
    write_text(artifact::ablation, text.str(), "ablate");

    ordered_json m;
    m["baseline"] = baseline;
    m["mode"] = to_string(options.mode);
    m["auc"] = auc;
    return m;
  });
}

namespace {

struct Table {
  CsvTable csv;
  std::vector<std::pair<std::string, std::string>> pairs(const std::string& x, const std::string& y,
                                                         const std::map<std::string, std::string>& where = {}) const {
    std::vector<std::pair<std::string, std::string>> out;
    const auto xi = csv.column(x), yi = csv.column(y);
    for (const auto& row : csv.rows) {
      bool keep = true;
      for (const auto& [col, value] : where) keep = keep && row[csv.column(col)] == value;
      if (keep && !row[xi].empty() && !row[yi].empty()) out.emplace_back(row[xi], row[yi]);
    }
    return out;
  }
};

std::string fmt(const ordered_json& v) {
  if (v.is_null()) return "n/a";
  if (v.is_number_float()) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", v.get<double>());
    return buf;
  }
  return v.dump();
}

}  // namespace

void Pipeline::report() {
  stage("report", [&] {
    for (const char* s : {"train", "build_dataset", "lens", "heads", "intervene", "attribute", "ablate"}) {
      if (!summary_.has_stage(s)) throw MissingArtifact("report: summary has no record of stage '" + std::string(s) + "'");
    }
    const Table loss{read_csv(summary_.require(artifact::train_loss))};
    const Table lens_t{read_csv(summary_.require(artifact::lens))};
    const Table heads_t{read_csv(summary_.require(artifact::heads))};
    const Table sweep{read_csv(summary_.require(artifact::intervene))};
    const Table k_sweep{read_csv(summary_.require(artifact::intervene_k))};
    const Table attribution{read_csv(summary_.require(artifact::attribution))};
    const Table ablation{read_csv(summary_.require(artifact::ablation))};
    const ModelConfig model = world().model_config(config_.model);
    const std::string dir = std::string(artifact::plot_dir) + "/";
    std::vector<std::string> plots;
    auto plot = [&](const std::string& name, const std::string& svg) {
      write_text(dir + name, svg, "report");
      plots.push_back(name);
    };

    plot("train_loss.svg", line_chart({"Monitor-batch loss", "step", "loss"},
                                      {{"monitor", loss.pairs("step", "monitor_loss")}}));
    plot("block_preference.svg",
         line_chart({"Block preference for the fact", "layer", "fact_acc - 0.5"},
                    {{"attention", lens_t.pairs("layer", "pref_strength", {{"component", "attention"}})},
                     {"mlp", lens_t.pairs("layer", "pref_strength", {{"component", "mlp"}})}}));
    {
      std::vector<std::string> cells(static_cast<std::size_t>(model.n_layers * model.n_heads));
      const auto kind = lens_t.csv.column("component"), layer = lens_t.csv.column("layer"),
                 head = lens_t.csv.column("head"), acc = lens_t.csv.column("fact_acc");
      for (const auto& row : lens_t.csv.rows) {
        if (row[kind] != "head") continue;
        const int l = std::stoi(row[layer]), h = std::stoi(row[head]);
        if (l >= 0 && l < model.n_layers && h >= 0 && h < model.n_heads) {
          cells[static_cast<std::size_t>(l * model.n_heads + h)] = row[acc];
        }
      }
      plot("head_accuracy.svg", heatmap_chart({"Head fact accuracy", "head", "layer"}, model.n_layers,
                                              model.n_heads, cells));
    }
    {
      std::vector<Series> series{{"ranked heads", sweep.pairs("lambda", "fact_pair_acc", {{"mode", "target"}})}};
      std::vector<Series> kl{{"ranked heads", sweep.pairs("lambda", "mean_kl", {{"mode", "target"}})}};
      const auto seed_col = sweep.csv.column("seed"), mode_col = sweep.csv.column("mode");
      std::vector<std::string> seeds;
      for (const auto& row : sweep.csv.rows) {
        if (row[mode_col] == "random" && std::find(seeds.begin(), seeds.end(), row[seed_col]) == seeds.end()) {
          seeds.push_back(row[seed_col]);
        }
      }
      for (const std::string& s : seeds) {
        series.push_back({"random seed " + s, sweep.pairs("lambda", "fact_pair_acc", {{"mode", "random"}, {"seed", s}})});
      }
      plot("lambda_sweep.svg", line_chart({"Steering strength sweep", "steering strength", "fact_pair_acc"}, series));
      plot("kl.svg", line_chart({"Generation KL", "steering strength", "mean KL"}, kl));
    }
    plot("vary_k.svg", line_chart({"Heads per role", "k", "fact_pair_acc"},
                                  {{"ranked heads", k_sweep.pairs("k", "fact_pair_acc")}}));
    {
      std::vector<Series> curves, precision;
      for (const char* method : {"attention", "gradient", "random"}) {
        curves.push_back({method, ablation.pairs("mean_fraction", "fact_pair_acc", {{"method", method}})});
      }
      for (const char* method : {"attention", "gradient"}) {
        precision.push_back({method, attribution.pairs("tau", "precision", {{"method", method}})});
      }
      plot("ablation.svg", line_chart({"Patch ablation", "ablated fraction", "fact_pair_acc"}, curves));
      plot("precision.svg", line_chart({"Attribution precision", "tau", "precision"}, precision));
    }

    const ordered_json& tr = summary_.stage_metrics("train");
    const ordered_json& ds = summary_.stage_metrics("build_dataset");
    const ordered_json& hd = summary_.stage_metrics("heads");
    const ordered_json& iv = summary_.stage_metrics("intervene");
    const ordered_json& at = summary_.stage_metrics("attribute");
    const ordered_json& ab = summary_.stage_metrics("ablate");

    std::ostringstream md;
    md << "# Conflict lens report\n\n";
    md << "Config hash `" << config_.hash() << "`, seed " << config_.seed << ".\n\n";
    md << "Model: " << model.n_layers << " layers, " << model.n_heads << " heads, d_model " << model.d_model
       << ", vocabulary " << model.vocab_size << ".\n\n";
    md << "## Training\n\n| metric | value |\n|---|---|\n";
    for (const char* key : {"steps", "fact_accuracy", "caption_accuracy", "final_batch_loss"}) {
      md << "| " << key << " | " << fmt(tr[key]) << " |\n";
    }
    md << "\n![loss](plots/train_loss.svg)\n\n";
    md << "## Conflict dataset\n\n| metric | value |\n|---|---|\n";
    for (const char* key : {"n_candidates", "retained", "retention", "text_fact_accuracy"}) {
      md << "| " << key << " | " << fmt(ds[key]) << " |\n";
    }
    if (ds.contains("with_image")) {
      md << "| fact_top_rate with image | " << fmt(ds["with_image"]["fact_top_rate"]) << " |\n";
      md << "| fact_pair_acc with image | " << fmt(ds["with_image"]["fact_pair_acc"]) << " |\n";
    }
    md << "\n## Logit lens\n\n![blocks](plots/block_preference.svg)\n\n![heads](plots/head_accuracy.svg)\n\n";
    md << "| head set | mean fact accuracy | image attention |\n|---|---|---|\n";
    md << "| all | " << fmt(hd["mean_accuracy_all"]) << " | " << fmt(hd["image_attention_all"]) << " |\n";
    md << "| factual (k=" << hd["k"].dump() << ") | " << fmt(hd["mean_accuracy_fact"]) << " | "
       << fmt(hd["image_attention_fact"]) << " |\n";
    md << "| counterfactual | " << fmt(hd["mean_accuracy_cofa"]) << " | " << fmt(hd["image_attention_cofa"]) << " |\n";
    md << "\n## Attention steering\n\nPositive strength amplifies factual heads' text attention and damps "
          "counterfactual heads' image attention.\n\n";
    md << "| strength | fact_pair_acc | mean KL |\n|---|---|---|\n";
    for (const auto& p : iv["target"]) {
      md << "| " << p["lambda"].dump() << " | " << fmt(p["fact_pair_acc"]) << " | " << fmt(p["mean_kl"]) << " |\n";
    }
    md << "\nRandom control: " << iv["n_random_heads"].dump() << " heads, largest deviation from baseline "
       << fmt(iv["max_random_deviation"]) << ".\n\n";
    md << "![sweep](plots/lambda_sweep.svg)\n\n![kl](plots/kl.svg)\n\n![k](plots/vary_k.svg)\n\n";
    md << "## Attribution\n\nRandom precision baseline |gt|/P = " << fmt(at["random_precision_baseline"])
       << ".\n\n![precision](plots/precision.svg)\n\n";
    md << "| method | AUC |\n|---|---|\n";
    for (const auto& [method, value] : ab["auc"].items()) md << "| " << method << " | " << fmt(value) << " |\n";
    md << "\nBaseline fact_pair_acc " << fmt(ab["baseline"]) << ", ablation mode " << ab["mode"].get<std::string>()
       << ".\n\n![ablation](plots/ablation.svg)\n";
    write_text(artifact::report, md.str(), "report");

    ordered_json m;
    m["plots"] = plots;
    return m;
  });
}

void Pipeline::run_all() {
  train();
  build_dataset();
  lens();
  heads();
  intervene();
  attribute();
  ablate();
  report();
}

}  // namespace clens
