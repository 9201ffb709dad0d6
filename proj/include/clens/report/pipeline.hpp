#pragma once

#include "clens/attribute/attribute.hpp"
#include "clens/intervene/intervene.hpp"
#include "clens/report/run_config.hpp"
#include "clens/report/summary.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace clens {

class AcceptanceFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ExitCode : int { ok = 0, failure = 1, config = 2, missing_artifact = 3, acceptance = 4 };

// Artifact names inside the output directory.
namespace artifact {
inline constexpr const char* checkpoint = "model.ckpt";
inline constexpr const char* train_loss = "train_loss.csv";
inline constexpr const char* dataset = "dataset.jsonl";
inline constexpr const char* lens = "lens.csv";
inline constexpr const char* heads = "heads.csv";
inline constexpr const char* intervene = "intervene.csv";
inline constexpr const char* intervene_k = "intervene_k.csv";
inline constexpr const char* attribution = "attribution.csv";
inline constexpr const char* ablation = "ablation.csv";
inline constexpr const char* report = "report.md";
inline constexpr const char* heatmap_dir = "heatmaps";
inline constexpr const char* plot_dir = "plots";
}  // namespace artifact

// Every stage reads its inputs from out_dir (checked against the summary
// manifest), writes its outputs there and records metrics in summary.json.
class Pipeline {
 public:
  Pipeline(RunConfig config, std::filesystem::path out_dir, std::ostream* log = nullptr);

  void train();
  void build_dataset();
  void lens();
  void heads();
  void intervene();
  void attribute();
  void ablate();
  void report();
  void run_all();

  const RunConfig& config() const { return config_; }
  const RunSummary& summary() const { return summary_; }
  const std::filesystem::path& out_dir() const { return out_dir_; }

  FactWorld world() const;
  ModelWeights load_model() const;
  std::vector<ConflictExample> load_examples() const;
  HeadRanking load_ranking() const;  // from lens.csv and heads.csv
  AblationMode ablation_mode() const;

 private:
  template <typename Body>
  void stage(const std::string& name, Body body);
  void note(const std::string& line) const;
  void write_text(const std::string& relative, const std::string& text, const std::string& stage);

  RunConfig config_;
  std::filesystem::path out_dir_;
  std::ostream* log_;
  RunSummary summary_;
};

// Heads file: role,layer,head,fact_acc,image_attn
void write_heads_csv(std::ostream& out, const HeadRanking& ranking, const std::vector<ForwardTrace>& traces);

// Output directory from --out, else $CONFLICT_LENS_OUT, else the config.
std::filesystem::path resolve_out_dir(const std::string& flag, const RunConfig& config);

}  // namespace clens
