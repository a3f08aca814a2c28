#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace facd::plot {

struct PlotResult {
    std::vector<std::filesystem::path> written;
    std::vector<std::string> notices;  // one line per skipped figure
};

// Renders SVG figures from a completed run directory into out_dir (the run
// directory itself when empty). Throws DataError for missing artifacts.
PlotResult plot_run(const std::filesystem::path& run_dir, const std::filesystem::path& out_dir = {});

}  // namespace facd::plot
