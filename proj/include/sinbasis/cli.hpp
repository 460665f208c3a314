#pragma once

// The `sinbasis` command: gen | train | eval | perturb | verify | report.
//
//   sinbasis <cmd> --config PATH [--seed N] [--out DIR] [--override SECTION.KEY=VAL]...
//
// Configuration is an INI file with sections [run] [data] [model] [train]
// [eval] [perturb] [verify] [report]. Every key has a default except the few
// each command cannot guess (see required_keys); unknown keys are rejected.
// Each command writes <out>/manifest.ini before doing any work. The manifest
// holds the fully resolved configuration and can be passed back as --config to
// reproduce the run; wall-clock data lives only in its [manifest] section.
//
// Exit codes: 0 success, 2 configuration or input error, 3 numerical failure,
// 4 a verification check failed.

#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace sinbasis::cli {

enum ExitCode : int { kOk = 0, kInternal = 1, kConfigError = 2, kNumericalFailure = 3, kCheckFailure = 4 };

/// Bad or missing configuration. The message names the offending key.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using Sections = std::map<std::string, std::map<std::string, std::string>>;

/// Keys a command needs that have no default, as "section.key".
std::vector<std::string> required_keys(const std::string& command);

/// Parses an INI file into sections; throws ConfigError if it cannot be read.
Sections load_config(const std::string& path);

/// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace sinbasis::cli
