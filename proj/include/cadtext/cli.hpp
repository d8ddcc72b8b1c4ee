#pragma once

// The cadtext command-line front end. Subcommands: preprocess, make-pairs,
// train, sweep, eval-zeroshot, generate-synth.
//
// Exit codes: 0 success, 1 usage or config error, 2 data error, 3 runtime
// failure (divergence, I/O).

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

namespace cadtext::cli {

inline constexpr const char* kToolkitVersion = "0.1.0";
inline constexpr const char* kDataDirEnv = "CADTEXT_DATA_DIR";

enum ExitCode : int { kOk = 0, kConfigExit = 1, kDataExit = 2, kRuntimeExit = 3 };

struct RunManifest {
  std::string command;
  nlohmann::json config = nlohmann::json::object();
  std::map<std::string, std::string> inputs;
  std::map<std::string, std::string> outputs;
  std::uint64_t seed = 0;
  double wall_clock_seconds = 0;

  nlohmann::json to_json() const;
  void write(const std::filesystem::path& path) const;
};

// Relative input paths that do not exist as given are looked up under
// $CADTEXT_DATA_DIR when it is set.
std::filesystem::path resolve_input(const std::string& path);

// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int main(int argc, char** argv);

}  // namespace cadtext::cli
