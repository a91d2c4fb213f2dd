#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace survope {

struct ReportOutput {
  std::vector<std::filesystem::path> tidy_files;
  std::filesystem::path summary_file;
  std::string summary;
};

/// Turns the sweep CSVs in `results_dir` (ope_*.csv, opl_*.csv,
/// constrained.csv) into long-format tidy_*.csv files with columns
/// axis, axis_value, estimator, metric, value, plus summary.txt.
ReportOutput write_report(const std::filesystem::path& results_dir);

}  // namespace survope
