#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "madmil/experiment.hpp"

namespace madmil {

/// Exit codes shared by every subcommand.
enum ExitCode : int { kExitOk = 0, kExitConfig = 2, kExitNumerical = 3 };

struct CommandOptions {
  std::filesystem::path out_dir;
  std::size_t jobs = 1;
  std::optional<std::uint64_t> seed;
};

// Each command writes its artifacts under `options.out_dir` and reports to
// `log`. Errors propagate as exceptions; run_cli maps them to exit codes.

/// train/val/test manifests and bag CSVs for the soft-bag dataset.
void cmd_generate(const ExperimentConfig& config, const CommandOptions& options, std::ostream& log);

/// history.csv, results.csv, summary.csv (+ grid.csv when searching, and one
/// params file per seed).
void cmd_train(const ExperimentConfig& config, const CommandOptions& options, std::ostream& log);

/// accounting.csv for the configured model.
void cmd_count(const ExperimentConfig& config, const CommandOptions& options, std::ostream& log);

/// sweep.csv over sweep.heads, prints the selected M.
void cmd_sweep(const ExperimentConfig& config, const CommandOptions& options, std::ostream& log);

/// attention.csv (+ one PGM montage per head and bag for MNIST bags).
void cmd_heatmap(const ExperimentConfig& config, const CommandOptions& options, std::ostream& log);

/// Full command line: `madmil <subcommand> --config <path> [--out dir]
/// [--jobs n] [--seed n]`. Returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Grayscale P5 image.
void write_pgm(const std::filesystem::path& path, std::size_t width, std::size_t height,
               const std::vector<std::uint8_t>& pixels);

}  // namespace madmil
