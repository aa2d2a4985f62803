#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mtf {

/// Exit codes, one per failure class.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitUsage = 2,
  kExitConfigFile = 3,
  kExitConfigSchema = 4,
  kExitArtifact = 5,
  kExitTraining = 6,
};

/// `args` excludes the program name. Diagnostics go to `err`, progress to `out`.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int dispatch(int argc, char** argv);

}  // namespace mtf
