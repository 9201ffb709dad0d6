#include "clens/report/pipeline.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <functional>
#include <iostream>
#include <map>

using namespace clens;

namespace {

int fail(ExitCode code, const std::string& kind, const std::string& message) {
  nlohmann::ordered_json record;
  record["error"] = kind;
  record["exit_code"] = static_cast<int>(code);
  record["message"] = message;
  std::cerr << record.dump() << std::endl;
  return static_cast<int>(code);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Knowledge-conflict analysis of a toy vision-language transformer"};
  app.require_subcommand(1);
  std::string config_path, out_flag;
  std::optional<std::uint64_t> seed;
  bool quiet = false;

  const std::map<std::string, std::function<void(Pipeline&)>> stages{
      {"train", &Pipeline::train},         {"build-dataset", &Pipeline::build_dataset},
      {"lens", &Pipeline::lens},           {"heads", &Pipeline::heads},
      {"intervene", &Pipeline::intervene}, {"attribute", &Pipeline::attribute},
      {"ablate", &Pipeline::ablate},       {"report", &Pipeline::report},
      {"run-all", &Pipeline::run_all},
  };
  for (const auto& [name, _] : stages) {
    CLI::App* sub = app.add_subcommand(name, "run the " + name + " stage");
    sub->add_option("--config", config_path, "config file (defaults apply when omitted)");
    sub->add_option("--seed", seed, "override the global seed");
    sub->add_option("--out", out_flag, "output directory");
    sub->add_flag("-q,--quiet", quiet, "no progress output");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return fail(ExitCode::config, "usage", e.what());
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    RunConfig config = config_path.empty() ? RunConfig{} : RunConfig::load(config_path);
    if (seed) config.seed = *seed;
    config.validate();
    Pipeline pipeline(config, resolve_out_dir(out_flag, config), quiet ? nullptr : &std::cerr);
    stages.at(name)(pipeline);
    return static_cast<int>(ExitCode::ok);
  } catch (const ConfigError& e) {
    return fail(ExitCode::config, "config", e.what());
  } catch (const MissingArtifact& e) {
    return fail(ExitCode::missing_artifact, "missing_artifact", e.what());
  } catch (const AcceptanceFailure& e) {
    return fail(ExitCode::acceptance, "acceptance", e.what());
  } catch (const TrainingError& e) {
    if (e.kind() == TrainingError::Kind::threshold) return fail(ExitCode::acceptance, "acceptance", e.what());
    return fail(ExitCode::failure, "training", e.what());
  } catch (const std::exception& e) {
    return fail(ExitCode::failure, "failure", e.what());
  }
}
