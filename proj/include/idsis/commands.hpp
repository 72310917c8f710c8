#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "idsis/config.hpp"

namespace idsis::cli {

struct CommandOptions {
    std::string role;                  // train-fr
    std::string record;                // reconstruct, attn-maps
    std::string attacker;              // swap-id, swap-style
    std::string target;                // swap-id, swap-style
    std::string swap_set = "FullSwap"; // swap-style
    bool resume = false;               // train
};

const std::vector<std::string>& command_names();

// Runs one command. Throws idsis::Error subclasses; the exit code is taken from the error.
void run_command(const std::string& name, const RunConfig& cfg, const CommandOptions& options, std::ostream& log);

// Full command-line entry point: parses arguments, runs, maps errors to exit codes.
int cli_main(int argc, const char* const* argv);

// Helpers shared with tests.
nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& value);

}  // namespace idsis::cli
