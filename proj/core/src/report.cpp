#include "survope/report.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "survope/experiment.hpp"
#include "survope/types.hpp"

namespace survope {

namespace {

enum class Kind { kOpe, kOpl, kConstrained };

struct Schema {
  std::vector<std::string> columns;
  std::string method_column;
  std::vector<std::string> metrics;
  /// +1 when larger is better, -1 when smaller is better.
  std::vector<int> better;
};

Schema schema_for(Kind kind) {
  switch (kind) {
    case Kind::kOpe:
      return {{"axis", "axis_value", "estimator", "mse", "squared_bias", "variance"},
              "estimator",
              {"mse", "squared_bias", "variance"},
              {-1, -1, -1}};
    case Kind::kOpl:
      return {{"axis", "axis_value", "learner", "ratio_mean", "ratio_std"},
              "learner",
              {"ratio_mean", "ratio_std"},
              {+1, 0}};
    case Kind::kConstrained:
      return {{"learner", "rmst_mean", "rmst_std", "cost_mean", "cost_std", "feasible_rate"},
              "learner",
              {"rmst_mean", "rmst_std", "cost_mean", "cost_std", "feasible_rate"},
              {+1, 0, -1, 0, +1}};
  }
  return {};
}

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

std::string title_for(Kind kind, const std::string& axis) {
  switch (kind) {
    case Kind::kOpe: return "Off-policy evaluation, sweep over " + axis;
    case Kind::kOpl: return "Off-policy learning, sweep over " + axis;
    case Kind::kConstrained: return "Budget-constrained learning";
  }
  return {};
}

/// Text block for one input file; `*` marks the best value of each metric
/// within a sweep value.
std::string summarize(Kind kind, const CsvTable& t, const std::string& name) {
  const auto schema = schema_for(kind);
  const bool has_axis = kind != Kind::kConstrained;
  const std::string axis = has_axis && !t.rows.empty() ? t.rows.front()[t.column("axis")] : "";
  std::ostringstream out;
  out << "== " << title_for(kind, axis) << " (" << name << ")\n";

  std::vector<std::string> header;
  if (has_axis) header.push_back(axis);
  header.push_back(schema.method_column);
  for (const auto& m : schema.metrics) header.push_back(m);

  std::map<std::string, std::vector<std::size_t>> groups;
  std::vector<std::string> order;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const std::string g = has_axis ? t.rows[r][t.column("axis_value")] : "";
    if (!groups.count(g)) order.push_back(g);
    groups[g].push_back(r);
  }

  std::vector<std::vector<std::string>> cells;
  for (const auto& g : order) {
    const auto& rows = groups[g];
    std::vector<std::size_t> best(schema.metrics.size(), rows.front());
    for (std::size_t m = 0; m < schema.metrics.size(); ++m) {
      if (schema.better[m] == 0) continue;
      const auto col = t.column(schema.metrics[m]);
      for (auto r : rows) {
        const double v = std::stod(t.rows[r][col]);
        const double b = std::stod(t.rows[best[m]][col]);
        if (schema.better[m] * (v - b) > 0.0) best[m] = r;
      }
    }
    for (auto r : rows) {
      std::vector<std::string> line;
      if (has_axis) line.push_back(g);
      line.push_back(t.rows[r][t.column(schema.method_column)]);
      for (std::size_t m = 0; m < schema.metrics.size(); ++m) {
        std::ostringstream v;
        v.precision(5);
        v << std::stod(t.rows[r][t.column(schema.metrics[m])]);
        std::string s = v.str();
        if (schema.better[m] != 0 && best[m] == r && rows.size() > 1) s += " *";
        line.push_back(s);
      }
      cells.push_back(std::move(line));
    }
  }
  std::vector<std::size_t> width(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) {
    width[c] = header[c].size();
    for (const auto& line : cells) width[c] = std::max(width[c], line[c].size());
  }
  for (std::size_t c = 0; c < header.size(); ++c) out << pad(header[c], width[c] + 2);
  out << '\n';
  for (const auto& line : cells) {
    for (std::size_t c = 0; c < line.size(); ++c) out << pad(line[c], width[c] + 2);
    out << '\n';
  }
  out << '\n';
  return out.str();
}

CsvTable tidy(Kind kind, const CsvTable& t) {
  const auto schema = schema_for(kind);
  CsvTable out;
  out.header = {"axis", "axis_value", "estimator", "metric", "value"};
  for (const auto& row : t.rows) {
    const std::string axis = kind == Kind::kConstrained ? "none" : row[t.column("axis")];
    const std::string value = kind == Kind::kConstrained ? "" : row[t.column("axis_value")];
    for (const auto& m : schema.metrics) {
      out.rows.push_back({axis, value, row[t.column(schema.method_column)], m, row[t.column(m)]});
    }
  }
  return out;
}

}  // namespace

ReportOutput write_report(const std::filesystem::path& results_dir) {
  if (!std::filesystem::is_directory(results_dir)) {
    throw Error("results directory " + results_dir.string() + " does not exist");
  }
  std::vector<std::filesystem::path> inputs;
  for (const auto& entry : std::filesystem::directory_iterator(results_dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".csv") continue;
    const auto stem = entry.path().stem().string();
    if (stem.rfind("ope_", 0) == 0 || stem.rfind("opl_", 0) == 0 || stem == "constrained") {
      inputs.push_back(entry.path());
    }
  }
  if (inputs.empty()) throw Error("no sweep results (ope_*.csv, opl_*.csv, constrained.csv) in " +
                                  results_dir.string());
  std::sort(inputs.begin(), inputs.end());

  ReportOutput report;
  for (const auto& path : inputs) {
    const auto stem = path.stem().string();
    const Kind kind = stem.rfind("ope_", 0) == 0   ? Kind::kOpe
                      : stem.rfind("opl_", 0) == 0 ? Kind::kOpl
                                                   : Kind::kConstrained;
    const auto table = CsvTable::read(path);
    for (const auto& c : schema_for(kind).columns) {
      if (std::find(table.header.begin(), table.header.end(), c) == table.header.end()) {
        throw Error(path.filename().string() + ": missing column '" + c + "'");
      }
    }
    const auto out_path = results_dir / ("tidy_" + stem + ".csv");
    tidy(kind, table).write(out_path);
    report.tidy_files.push_back(out_path);
    report.summary += summarize(kind, table, path.filename().string());
  }
  report.summary_file = results_dir / "summary.txt";
  std::ofstream out(report.summary_file, std::ios::binary);
  out << report.summary;
  if (!out) throw Error("cannot write " + report.summary_file.string());
  return report;
}

}  // namespace survope
