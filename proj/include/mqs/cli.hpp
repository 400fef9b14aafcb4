#pragma once

#include <filesystem>

#include "mqs/certify.hpp"

namespace mqs {

/// Writes energy_vs_time.csv and bounds_vs_time.csv into dir.
void write_plot_data(const Assembly& assembly, const Trajectory& traj,
                     const ConstantsReport& constants, const std::filesystem::path& dir);

/// Entry point of the mqs command line tool. Returns the process exit code:
/// 0 all audits pass, 2 an audit failed, 1 configuration or runtime error.
int run(int argc, char** argv);

} // namespace mqs
