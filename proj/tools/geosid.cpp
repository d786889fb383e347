#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "geosid/pipeline.hpp"

namespace {

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  std::replace(s.begin(), s.end(), '\r', ' ');
  return s;
}

void print(const geosid::StageReport& r) {
  if (r.skipped_disabled)
    std::printf("%s: disabled\n", r.stage.c_str());
  else if (r.ran)
    std::printf("%s: done (%.2fs)\n", r.stage.c_str(), r.seconds);
  else
    std::printf("%s: up to date\n", r.stage.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"geosid: geographic semantic-ID pipeline"};
  app.require_subcommand(1, 1);
  std::string config, workdir;
  bool force = false;
  for (const auto& name : geosid::stage_names()) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config, "pipeline config (JSON)")->required();
    sub->add_option("--workdir", workdir, "artifact directory (overrides the config)");
    sub->add_flag("--force", force, "rerun even when inputs are unchanged");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error: %s\n", one_line(e.what()).c_str());
    return 2;
  }
  const std::string stage = app.get_subcommands().front()->get_name();
  try {
    const auto cfg = geosid::PipelineConfig::load(config);
    std::filesystem::path dir = workdir.empty() ? cfg.workdir : workdir;
    if (dir.empty()) throw geosid::Error("no workdir given (use --workdir or the config's workdir)");
    if (stage == "bench") {
      for (const auto& r : geosid::run_bench(cfg, dir, force)) print(r);
      std::printf("bench: wrote %s\n", (dir / "bench_metrics.json").string().c_str());
    } else {
      print(geosid::run_stage(stage, cfg, dir, force));
    }
  } catch (const std::exception& e) {
    std::fflush(stdout);
    std::fprintf(stderr, "error: %s\n", one_line(e.what()).c_str());
    return 1;
  }
  return 0;
}
