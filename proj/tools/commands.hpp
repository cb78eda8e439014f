#pragma once

// The `headsteer` subcommands. Each writes its artifacts under
// <outdir>/<persona>/<command>/ and returns that directory. Later commands
// read what earlier ones wrote: localize and steer need extract, ablate and
// head site sets need localize, pareto needs steer.

#include <cstdint>
#include <filesystem>

#include "run_config.hpp"

namespace headsteer::cli {

std::filesystem::path cmd_extract(const RunConfig& config);
std::filesystem::path cmd_localize(const RunConfig& config);
std::filesystem::path cmd_steer(const RunConfig& config);
std::filesystem::path cmd_ablate(const RunConfig& config);
std::filesystem::path cmd_pareto(const RunConfig& config);
std::filesystem::path cmd_report(const RunConfig& config);

struct FixtureOptions {
  std::filesystem::path spec;  // PlantedModelSpec JSON; empty for the reference spec
  std::uint64_t seed = 0;
  std::filesystem::path outdir = "out";
};

// Planted model, persona and a ready-to-run config (run.json) pointing at
// them.
std::filesystem::path cmd_fixture(const FixtureOptions& options);

}  // namespace headsteer::cli
