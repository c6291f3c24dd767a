#pragma once

#include "squad/exit_gate.hpp"
#include "squad/kv_config.hpp"
#include "squad/quest.hpp"

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace squad {

/// Bad flags or flag values; maps to exit code 2.
class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Thrown by parse_command_line for --help; what() holds the help text.
class HelpRequested : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Documented tau presets for sweeps.
inline const std::vector<double> kTauPresets{0.3, 0.6, 0.95};

struct RunConfig {
    std::string subcommand;
    std::filesystem::path bundle;
    std::filesystem::path task;
    std::filesystem::path out;
    std::filesystem::path config;

    /// infer uses the first entry; sweep may list both.
    std::vector<CriterionKind> criteria{CriterionKind::TTestLCB};
    /// infer: one global value or one per stage. sweep: the grid.
    std::vector<double> tau{0.6};
    double alpha = 0.05;
    std::size_t bins = 15;
    std::uint64_t seed = kDefaultSeed;

    SyntheticTask synthetic;
    std::size_t learners = 3;
    std::size_t exits = 3;
    JointLossConfig train;
    SearchConfig search;
};

/// Flags override values read from --config; the result is validated.
RunConfig parse_command_line(const std::vector<std::string>& args);

/// Every setting that affects the outputs, in a fixed order.
KeyValueConfig describe(const RunConfig& cfg);

void cmd_gen_data(const RunConfig& cfg, std::ostream& log);
void cmd_train(const RunConfig& cfg, std::ostream& log);
void cmd_infer(const RunConfig& cfg, std::ostream& log);
void cmd_sweep(const RunConfig& cfg, std::ostream& log);
void cmd_search(const RunConfig& cfg, std::ostream& log);

/// Parses and dispatches; returns the process exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace squad
