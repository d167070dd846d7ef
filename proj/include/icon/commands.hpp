#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "icon/config.hpp"

namespace icon {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitDivergence = 3;

struct CommandOptions {
  std::optional<std::string> config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool no_kl = false;
  std::optional<std::string> data;
  std::vector<std::string> checkpoints;
  std::optional<int> tasks;  // gen: overrides data.n_tasks
  std::optional<int> n;      // gen: overrides data.n_per_task
};

// Config from --config (or defaults) with the command-line overrides applied.
RunConfig resolve_config(const CommandOptions& opts);

// A trained bank on disk: ata.flow, pta_{t}.flow, checkpoint.json.
void save_checkpoint(const std::filesystem::path& dir, const ModelBank& bank, const nlohmann::json& meta);
ModelBank load_checkpoint(const std::filesystem::path& dir, nlohmann::json* meta = nullptr);

void cmd_gen(const RunConfig& cfg, const std::filesystem::path& out);
void cmd_train(const RunConfig& cfg, const std::filesystem::path& data, const std::filesystem::path& out, bool no_kl);
void cmd_eval(const RunConfig& cfg, const std::filesystem::path& data, const std::vector<std::string>& checkpoints,
              const std::filesystem::path& out);
void cmd_verify(const RunConfig& cfg, const std::filesystem::path& data, const std::optional<std::string>& checkpoint,
                const std::filesystem::path& out);
void cmd_export(const RunConfig& cfg, const std::filesystem::path& data, const std::vector<std::string>& checkpoints,
                const std::filesystem::path& out);
void cmd_classify(const RunConfig& cfg, const std::optional<std::string>& data, const std::filesystem::path& out, bool no_kl);

// Validates the options, runs the named subcommand and maps exceptions to exit
// codes: 2 for validation and ingestion errors, 3 for numeric divergence.
// Outputs are staged next to --out and moved into place only on success.
int run_command(const std::string& name, const CommandOptions& opts, std::ostream& err);

}  // namespace icon
