#include <cmath>
#include <string>

#include "survope/types.hpp"

namespace survope {

Dataset::Dataset(std::size_t dim, std::size_t num_actions) : dim_(dim), num_actions_(num_actions) {
  if (num_actions == 0) throw Error("dataset: action space must be nonempty");
}

Dataset::Dataset(std::size_t dim, std::size_t num_actions, std::vector<LoggedRecord> records)
    : Dataset(dim, num_actions) {
  for (const auto& r : records) validate(r);
  records_ = std::move(records);
}

void Dataset::push_back(LoggedRecord record) {
  validate(record);
  records_.push_back(std::move(record));
}

void Dataset::validate(const LoggedRecord& r) const {
  if (r.context.size() != dim_) {
    throw Error("dataset: context has dimension " + std::to_string(r.context.size()) +
                ", expected " + std::to_string(dim_));
  }
  if (r.action >= num_actions_) {
    throw Error("dataset: action " + std::to_string(r.action) + " out of range [0, " +
                std::to_string(num_actions_) + ")");
  }
  if (!(r.observed_time > 0.0) || !std::isfinite(r.observed_time)) {
    throw Error("dataset: observed_time must be positive and finite");
  }
  if (r.cost && (!(*r.cost >= 0.0) || !std::isfinite(*r.cost))) {
    throw Error("dataset: cost must be nonnegative and finite");
  }
}

bool Dataset::has_costs() const {
  if (records_.empty()) return false;
  for (const auto& r : records_) {
    if (!r.cost) return false;
  }
  return true;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out(dim_, num_actions_);
  out.records_.reserve(indices.size());
  for (auto i : indices) out.records_.push_back(records_.at(i));
  return out;
}

void require_nonempty(const Dataset& dataset, const char* what) {
  if (dataset.empty()) throw Error(std::string(what) + ": dataset is empty");
}

}  // namespace survope
