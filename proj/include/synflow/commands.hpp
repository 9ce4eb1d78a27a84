// Subcommands of the synflow binary. Each writes its artifacts into the
// configured output directory and returns a process exit status.
#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "synflow/config.hpp"

namespace synflow::commands {

struct CommandOptions {
  std::optional<std::filesystem::path> checkpoint;
};

const std::vector<std::string>& verbs();

/// Throws Error (or a subclass) on any failure.
int run_command(const std::string& verb, const config::RunConfig& config, const CommandOptions& options,
                std::ostream& out);

/// Reads one canonicalizable SMILES per line ('#' comments and blank lines skipped).
std::vector<std::string> read_smiles_list(const std::filesystem::path& path);

}  // namespace synflow::commands
