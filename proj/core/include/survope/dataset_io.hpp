#pragma once

#include <filesystem>

#include "survope/types.hpp"

namespace survope {

/// Reads the dataset CSV format:
///
///   # d=<d> K=<K>
///   context_0,...,context_{d-1},action,observed_time,event[,cost]
///   <rows>
///
/// Errors name the offending 1-based line number.
Dataset load_dataset_csv(const std::filesystem::path& path);

/// Writes the format above with 17 significant digits, LF line endings. The
/// cost column is written iff every record carries a cost.
void save_dataset_csv(const Dataset& dataset, const std::filesystem::path& path);

}  // namespace survope
