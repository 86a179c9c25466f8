#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace vgkit {

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitDataError = 1;
inline constexpr int kExitUsage = 2;

// Entry point of the `vgkit` tool. `args` excludes the program name.
// Subcommands: synth | analyze | triage | knockout | render.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace vgkit
