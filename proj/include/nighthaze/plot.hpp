#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace nighthaze {

/// One line of a training log: `step<TAB>lr<TAB>name=value ...`.
struct LogEntry {
    std::uint64_t step = 0;
    double lr = 0;
    std::map<std::string, double> values;
};

std::vector<LogEntry> read_training_log(const std::filesystem::path& path);

/// Draws `term` against step as a line plot (axes box, light grid, curve)
/// and writes it as an RGB PNG. Throws DataError if no entry carries `term`.
void plot_training_curve(const std::vector<LogEntry>& log, const std::filesystem::path& png,
                         const std::string& term = "total", int width = 480, int height = 320);

}  // namespace nighthaze
