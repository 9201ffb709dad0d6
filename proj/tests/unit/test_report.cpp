#include "clens/report/checksum.hpp"
#include "clens/report/plot.hpp"
#include "clens/report/run_config.hpp"
#include "clens/report/summary.hpp"
#include "clens/util/csv.hpp"

#include "helpers.hpp"

#include <cstdio>
#include <fstream>
#include <regex>
#include <sstream>
#include <sys/wait.h>

using namespace clens;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("clens_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> attribute_values(const std::string& svg, const std::string& name) {
  const std::regex re(name + "=\"([^\"]*)\"");
  std::vector<std::string> out;
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), re); it != std::sregex_iterator(); ++it) {
    out.push_back((*it)[1]);
  }
  return out;
}

struct CliResult {
  int exit_code = -1;
  std::string err;
};

CliResult run_cli(const std::string& args, const fs::path& dir) {
  const fs::path err = dir / "stderr.txt";
  const std::string cmd = std::string("\"") + CLENS_CLI_PATH + "\" " + args + " 2> \"" + err.string() + "\" > /dev/null";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, read_file(err)};
}

}  // namespace

TEST_CASE("config text round trip") {
  const RunConfig defaults;
  const std::string text = defaults.serialize();
  const RunConfig back = RunConfig::parse(text);
  CHECK(back.serialize() == text);
  CHECK(back.hash() == defaults.hash());
  CHECK(defaults.hash().size() == 64);

  RunConfig changed = defaults;
  changed.seed = 2;
  changed.analysis.lambda_grid = {-1.5, 0, 2.25};
  changed.output_dir = "elsewhere";
  const RunConfig parsed = RunConfig::parse(changed.serialize());
  CHECK(parsed.seed == 2);
  CHECK(parsed.analysis.lambda_grid == std::vector<double>{-1.5, 0, 2.25});
  CHECK(parsed.output_dir == "elsewhere");
  CHECK(changed.hash() != defaults.hash());
}

TEST_CASE("config errors") {
  const std::string text = RunConfig{}.serialize();
  CHECK_THROWS_AS(RunConfig::parse(text + "model.colour = 3\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse(text + "seed = 4\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("seed = 1\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("schema_version = 99\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("schema_version = 1\nseed = \"one\"\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("schema_version = 1\nmodel.n_layers = 2.5\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("schema_version = 1\nthis is not a line\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("schema_version = 1\nmodel.d_model = 63\n"), ConfigError);
  CHECK_NOTHROW(RunConfig::parse("schema_version = 1\n# comment\n\nseed = 9\n"));
  CHECK(RunConfig::parse("schema_version = 1\nseed = 9\n").seed == 9);
}

TEST_CASE("derived seeds") {
  const RunConfig c;
  CHECK(c.derived_seed("train") == RunConfig{}.derived_seed("train"));
  CHECK(c.derived_seed("train") != c.derived_seed("dataset"));
  RunConfig other;
  other.seed = 2;
  CHECK(other.derived_seed("train") != c.derived_seed("train"));
}

TEST_CASE("checksums") {
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  const fs::path dir = scratch_dir("checksum");
  write_file(dir / "a.txt", "abc");
  CHECK(sha256_file(dir / "a.txt") == sha256_hex("abc"));
}

TEST_CASE("number formatting round trips") {
  for (double v : {0.0, 1.0, -3.0, 0.1, 1.0 / 3.0, 2.5e-17, 123456789.125, -0.046875}) {
    const std::string s = format_number(v);
    CHECK(std::strtod(s.c_str(), nullptr) == v);
  }
  CHECK(format_number(0.5) == "0.5");
  CHECK(format_number(std::nan("")).empty());
}

TEST_CASE("line charts carry the exact source values") {
  const Series a{"target", {{"-3", "0.25"}, {"0", "0.046875"}, {"3", "0.75"}}};
  const Series b{"random seed 1", {{"-3", "0.1"}, {"3", ""}}};
  const std::string svg = line_chart({"t", "x", "y"}, {a, b});
  CHECK(svg == line_chart({"t", "x", "y"}, {a, b}));
  CHECK(attribute_values(svg, "data-x") == std::vector<std::string>{"-3", "0", "3", "-3"});
  CHECK(attribute_values(svg, "data-y") == std::vector<std::string>{"0.25", "0.046875", "0.75", "0.1"});

  CHECK(line_chart({"t", "x", "y"}, {}).find("no-data") != std::string::npos);
  CHECK(line_chart({"t", "x", "y"}, {Series{"e", {}}}).find("no-data") != std::string::npos);
  CHECK(no_data_panel("t").find("no-data") != std::string::npos);
}

TEST_CASE("heatmap chart draws one cell per entry") {
  std::vector<std::string> cells;
  for (int i = 0; i < 4 * 8; ++i) cells.push_back(format_number(i / 32.0));
  cells[5] = "";
  const std::string svg = heatmap_chart({"heads", "head", "layer"}, 4, 8, cells);
  const auto values = attribute_values(svg, "data-value");
  CHECK(values == cells);
  CHECK(heatmap_chart({"heads", "head", "layer"}, 4, 7, cells).find("no-data") != std::string::npos);
  CHECK(heatmap_chart({"heads", "head", "layer"}, 1, 1, {""}).find("no-data") != std::string::npos);
}

TEST_CASE("run summary") {
  const fs::path dir = scratch_dir("summary");
  RunSummary s(dir, "hash-a");
  write_file(dir / "x.csv", "a,b\n1,2\n");
  s.record_artifact("x.csv", "lens");
  s.set_stage("lens", {{"acc", 0.5}}, 1.25);
  s.save();
  CHECK(s.require("x.csv") == dir / "x.csv");
  CHECK_THROWS_AS(s.require("y.csv"), MissingArtifact);
  CHECK(s.has_stage("lens"));
  CHECK(s.stage_metrics("lens")["acc"] == 0.5);

  const RunSummary reopened = RunSummary::open(dir, "hash-a");
  CHECK(reopened.require("x.csv") == dir / "x.csv");
  CHECK(reopened.json()["manifest"]["x.csv"]["sha256"] == sha256_hex("a,b\n1,2\n"));

  const auto plain = RunSummary::without_timings(reopened.json());
  CHECK(!plain["stages"]["lens"].contains("wall_seconds"));
  CHECK(plain["stages"]["lens"]["metrics"]["acc"] == 0.5);

  // A different config drops the old records.
  const RunSummary other = RunSummary::open(dir, "hash-b");
  CHECK(!other.has_stage("lens"));
  CHECK_THROWS_AS(other.require("x.csv"), MissingArtifact);

  // Edited artifacts no longer match their checksum.
  write_file(dir / "x.csv", "a,b\n1,3\n");
  CHECK_THROWS_AS(reopened.require("x.csv"), MissingArtifact);
  fs::remove(dir / "x.csv");
  CHECK_THROWS_AS(reopened.require("x.csv"), MissingArtifact);
}

TEST_CASE("command line failures are structured") {
  const fs::path dir = scratch_dir("cli");
  const CliResult missing = run_cli("lens --out \"" + (dir / "out").string() + "\" -q", dir);
  CHECK(missing.exit_code == 3);
  const auto record = nlohmann::json::parse(missing.err.substr(missing.err.find('{')));
  CHECK(record["exit_code"] == 3);
  CHECK(record.contains("error"));
  CHECK(record.contains("message"));

  write_file(dir / "bad.toml", "schema_version = 1\nmodel.unknown = 1\n");
  const CliResult bad = run_cli("train --config \"" + (dir / "bad.toml").string() + "\" -q", dir);
  CHECK(bad.exit_code == 2);
  CHECK(bad.err.find("\"exit_code\"") != std::string::npos);

  CHECK(run_cli("no-such-stage", dir).exit_code == 2);
  CHECK(run_cli("report --out \"" + (dir / "empty").string() + "\" -q", dir).exit_code == 3);
}
