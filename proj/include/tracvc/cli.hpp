#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace tracvc {

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;    // bad flags or malformed input
inline constexpr int kExitRuntime = 3;  // failure while computing

// Environment variable supplying out_dir when neither config nor flags do.
inline constexpr const char* kOutDirEnv = "TRACVC_OUT_DIR";

// Entry point behind the `tracvc` binary. args[0] is the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Flag spelling of a config key: "pre_corpus" -> "--pre-corpus".
std::string config_flag(const std::string& key);

}  // namespace tracvc
