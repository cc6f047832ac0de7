// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: synth, train, track, eval, ablate-steps,
// ablate-memory and info.

#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "detrack/data_pipeline.hpp"

namespace detrack {

/// A directory holding groundtruth.txt is one sequence; otherwise every
/// subdirectory that holds one is loaded, sorted by name.
std::vector<AnnotatedSequence> load_sequences(const std::filesystem::path& dir);

/// Returns the process exit code. Errors are reported as one line on `err`.
int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace detrack
