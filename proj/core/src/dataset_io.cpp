#include "survope/dataset_io.hpp"

#include <charconv>
#include <filesystem>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace survope {
namespace {

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

[[noreturn]] void fail(const std::filesystem::path& path, std::size_t line, const std::string& msg) {
  throw Error(path.string() + ":" + std::to_string(line) + ": " + msg);
}

double parse_double(std::string_view field, const std::filesystem::path& path, std::size_t line,
                    std::string_view column) {
  field = trim(field);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size()) {
    fail(path, line, "malformed number '" + std::string(field) + "' in column " + std::string(column));
  }
  return value;
}

std::size_t parse_size(std::string_view field, const std::filesystem::path& path, std::size_t line,
                       std::string_view column) {
  field = trim(field);
  std::size_t value = 0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size()) {
    fail(path, line, "malformed integer '" + std::string(field) + "' in column " + std::string(column));
  }
  return value;
}

void format_double(std::string& out, double v) {
  char buf[40];
  const int len = std::snprintf(buf, sizeof(buf), "%.17g", v);
  out.append(buf, static_cast<std::size_t>(len));
}

}  // namespace

Dataset load_dataset_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open dataset file " + path.string());

  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line)) fail(path, 1, "empty file");
  std::size_t dim = 0;
  std::size_t num_actions = 0;
  {
    const auto meta = trim(line);
    if (meta.empty() || meta.front() != '#') fail(path, 1, "expected metadata line '# d=<d> K=<K>'");
    std::istringstream ss{std::string(meta.substr(1))};
    std::string token;
    bool have_d = false;
    bool have_k = false;
    while (ss >> token) {
      if (token.rfind("d=", 0) == 0) {
        dim = parse_size(std::string_view(token).substr(2), path, 1, "d");
        have_d = true;
      } else if (token.rfind("K=", 0) == 0) {
        num_actions = parse_size(std::string_view(token).substr(2), path, 1, "K");
        have_k = true;
      }
    }
    if (!have_d || !have_k) fail(path, 1, "metadata line must declare d and K");
    if (num_actions == 0) fail(path, 1, "K must be positive");
  }

  ++line_no;
  if (!std::getline(in, line)) fail(path, line_no, "missing header row");
  const auto header = split_commas(trim(line));
  bool has_cost = false;
  {
    std::vector<std::string> expected;
    for (std::size_t j = 0; j < dim; ++j) expected.push_back("context_" + std::to_string(j));
    expected.insert(expected.end(), {"action", "observed_time", "event"});
    if (header.size() == expected.size() + 1 && trim(header.back()) == "cost") {
      has_cost = true;
    } else if (header.size() != expected.size()) {
      fail(path, line_no, "header has " + std::to_string(header.size()) + " columns, expected " +
                              std::to_string(expected.size()) + " (or one more for cost)");
    }
    for (std::size_t j = 0; j < expected.size(); ++j) {
      if (trim(header[j]) != expected[j]) {
        fail(path, line_no, "header column " + std::to_string(j) + " is '" +
                                std::string(trim(header[j])) + "', expected '" + expected[j] + "'");
      }
    }
  }
  const std::size_t num_columns = header.size();

  Dataset dataset(dim, num_actions);
  while (std::getline(in, line)) {
    ++line_no;
    const auto row = trim(line);
    if (row.empty()) continue;
    const auto fields = split_commas(row);
    if (fields.size() != num_columns) {
      fail(path, line_no, "row has " + std::to_string(fields.size()) + " columns, expected " +
                              std::to_string(num_columns));
    }
    LoggedRecord rec;
    rec.context.resize(dim);
    for (std::size_t j = 0; j < dim; ++j) rec.context[j] = parse_double(fields[j], path, line_no, "context");
    rec.action = parse_size(fields[dim], path, line_no, "action");
    if (rec.action >= num_actions) fail(path, line_no, "action out of range [0, K)");
    rec.observed_time = parse_double(fields[dim + 1], path, line_no, "observed_time");
    if (!(rec.observed_time > 0.0)) fail(path, line_no, "observed_time must be positive");
    const auto ev = trim(fields[dim + 2]);
    if (ev == "1") {
      rec.event = true;
    } else if (ev == "0") {
      rec.event = false;
    } else {
      fail(path, line_no, "event must be 0 or 1");
    }
    if (has_cost) {
      const double c = parse_double(fields[dim + 3], path, line_no, "cost");
      if (!(c >= 0.0)) fail(path, line_no, "cost must be nonnegative");
      rec.cost = c;
    }
    try {
      dataset.push_back(std::move(rec));
    } catch (const Error& e) {
      fail(path, line_no, e.what());
    }
  }
  return dataset;
}

void save_dataset_csv(const Dataset& dataset, const std::filesystem::path& path) {
  bool any_cost = false;
  for (const auto& r : dataset) any_cost = any_cost || r.cost.has_value();
  const bool with_cost = dataset.has_costs();
  if (any_cost && !with_cost) throw Error("save_dataset_csv: costs present on only some records");

  std::string out;
  out.reserve(64 + dataset.size() * (dataset.dim() + 4) * 24);
  out += "# d=" + std::to_string(dataset.dim()) + " K=" + std::to_string(dataset.num_actions()) + "\n";
  for (std::size_t j = 0; j < dataset.dim(); ++j) out += "context_" + std::to_string(j) + ",";
  out += "action,observed_time,event";
  if (with_cost) out += ",cost";
  out += "\n";
  for (const auto& r : dataset) {
    for (double x : r.context) {
      format_double(out, x);
      out += ',';
    }
    out += std::to_string(r.action);
    out += ',';
    format_double(out, r.observed_time);
    out += r.event ? ",1" : ",0";
    if (with_cost) {
      out += ',';
      format_double(out, *r.cost);
    }
    out += '\n';
  }

  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw Error("cannot open " + path.string() + " for writing");
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw Error("failed writing " + path.string());
}

}  // namespace survope
