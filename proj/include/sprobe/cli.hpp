#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace sprobe {

inline constexpr const char* kToolVersion = "0.1.0";

enum ExitCode : int { kExitOk = 0, kExitValidation = 1, kExitUsage = 2 };

// args excludes the program name. Returns 0 on success, 1 on validation or
// bundle-integrity failure, 2 on usage or IO errors.
int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int cli_dispatch(int argc, char** argv);

}  // namespace sprobe
