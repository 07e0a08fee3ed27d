#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace thzmec {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitMissingArtifact = 3,
  kExitInfeasible = 4,
};

/// Runs the command-line front end. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Deterministic ustar archive (sorted members, mtime 0, fixed owner).
/// `files` are (archive name, path on disk) pairs.
void write_tar(const std::string& path, std::vector<std::pair<std::string, std::string>> files);

}  // namespace thzmec
