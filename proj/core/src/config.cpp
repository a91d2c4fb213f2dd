#include "survope/config.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace survope {

std::string to_string(ExperimentMode mode) {
  switch (mode) {
    case ExperimentMode::kOpe: return "ope";
    case ExperimentMode::kOpl: return "opl";
    case ExperimentMode::kConstrained: return "constrained";
  }
  return "unknown";
}

std::string to_string(NuisanceMode mode) {
  return mode == NuisanceMode::kOracle ? "oracle" : "fitted";
}

std::string to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::kN: return "n";
    case SweepAxis::kRho1: return "rho1";
    case SweepAxis::kEpsilon: return "epsilon";
    case SweepAxis::kBeta: return "beta";
  }
  return "unknown";
}

SweepAxis sweep_axis_from_string(const std::string& name) {
  for (auto a : {SweepAxis::kN, SweepAxis::kRho1, SweepAxis::kEpsilon, SweepAxis::kBeta}) {
    if (to_string(a) == name) return a;
  }
  throw ConfigError("unknown sweep axis '" + name + "' (expected n, rho1, epsilon, beta)");
}

std::vector<double> default_sweep_values(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::kN: return {500, 1000, 2000, 5000, 10000};
    case SweepAxis::kRho1: return {0.1, 0.2, 0.3, 0.4, 0.5};
    case SweepAxis::kEpsilon: return {0.1, 0.2, 0.3, 0.4, 0.5};
    case SweepAxis::kBeta: return {0.0, 0.5, 1.0, 1.5, 2.0};
  }
  return {};
}

std::size_t ExperimentConfig::trials() const {
  if (n_trials) return *n_trials;
  if (paper_scale) return 100;
  return mode == ExperimentMode::kOpe ? 50 : 10;
}

std::size_t ExperimentConfig::test_size() const {
  if (n_test) return *n_test;
  return paper_scale ? 100'000 : 50'000;
}

std::vector<double> ExperimentConfig::resolved_sweep() const {
  if (!sweep_values.empty()) return sweep_values;
  switch (axis) {
    case SweepAxis::kN: return {static_cast<double>(defaults.n)};
    case SweepAxis::kRho1: return {defaults.rho1};
    case SweepAxis::kEpsilon: return {defaults.epsilon};
    case SweepAxis::kBeta: return {defaults.beta};
  }
  return {};
}

std::vector<std::string> ExperimentConfig::resolved_methods() const {
  if (!estimators.empty()) return estimators;
  switch (mode) {
    case ExperimentMode::kOpe: return {"dm", "ips", "dr", "ipcw_ips", "ipcw_dr"};
    case ExperimentMode::kOpl: return {"logging", "regression", "ips", "dr", "ipcw_ips", "ipcw_dr"};
    case ExperimentMode::kConstrained: return {"ipcw_ips", "ipcw_dr"};
  }
  return {};
}

void ExperimentConfig::validate() const {
  if (trials() < 2) throw ConfigError("n_trials must be at least 2");
  if (test_size() == 0) throw ConfigError("n_test must be at least 1");
  if (threads == 0) throw ConfigError("threads must be at least 1");
  if (grid_points == 0) throw ConfigError("grid_points must be at least 1");
  if (!(env.tau > 0.0)) throw ConfigError("env.tau must be positive");
  if (!(weight_floor >= 0.0 && weight_floor < 1.0)) throw ConfigError("weight_floor must lie in [0, 1)");
  if (!(budget_ratio > 0.0)) throw ConfigError("budget_ratio must be positive");
  const auto values = resolved_sweep();
  if (values.empty()) throw ConfigError("sweep values must be nonempty");
  for (double v : values) {
    const bool ok = [&] {
      switch (axis) {
        case SweepAxis::kN: return v >= 2.0 && v == std::floor(v);
        case SweepAxis::kRho1: return v > 0.0 && v < 1.0;
        case SweepAxis::kEpsilon: return v >= 0.0 && v <= 1.0;
        case SweepAxis::kBeta: return std::isfinite(v);
      }
      return false;
    }();
    if (!ok) throw ConfigError("invalid value for sweep axis " + to_string(axis));
  }
  const auto methods = resolved_methods();
  if (methods.empty()) throw ConfigError("estimator list must be nonempty");
  static const std::set<std::string> kLearners{"logging", "regression", "dm", "ips",
                                               "dr", "ipcw_ips", "ipcw_dr"};
  for (const auto& m : methods) {
    if (mode == ExperimentMode::kOpe) {
      estimator_from_string(m);
    } else if (mode == ExperimentMode::kConstrained) {
      if (m == "logging" || m == "regression") {
        throw ConfigError("constrained learners must be estimator names, got '" + m + "'");
      }
      estimator_from_string(m);
    } else if (!kLearners.count(m)) {
      throw ConfigError("unknown learner '" + m + "'");
    }
  }
  train.validate();
  lagrangian.validate();
}

namespace {

// ---------------------------------------------------------------------------
// TOML subset

class TomlReader {
 public:
  TomlReader(std::string_view text, std::string source) : text_(text), source_(std::move(source)) {}

  nlohmann::json parse() {
    nlohmann::json root = nlohmann::json::object();
    nlohmann::json* table = &root;
    std::set<std::string> defined_tables;
    while (true) {
      skip_blank_lines();
      if (eof()) break;
      const std::size_t start = pos_;
      if (peek() == '[') {
        ++pos_;
        skip_spaces();
        std::vector<std::string> path = parse_key_path();
        skip_spaces();
        expect(']');
        end_of_line();
        std::string joined;
        for (const auto& p : path) joined += (joined.empty() ? "" : ".") + p;
        if (!defined_tables.insert(joined).second) fail_at(start, "table [" + joined + "] defined twice");
        table = &root;
        for (const auto& p : path) {
          auto& next = (*table)[p];
          if (next.is_null()) next = nlohmann::json::object();
          if (!next.is_object()) fail_at(start, "'" + p + "' is not a table");
          table = &next;
        }
        continue;
      }
      std::vector<std::string> path = parse_key_path();
      skip_spaces();
      expect('=');
      skip_spaces();
      nlohmann::json value = parse_value();
      end_of_line();
      nlohmann::json* target = table;
      for (std::size_t i = 0; i + 1 < path.size(); ++i) {
        auto& next = (*target)[path[i]];
        if (next.is_null()) next = nlohmann::json::object();
        if (!next.is_object()) fail_at(start, "'" + path[i] + "' is not a table");
        target = &next;
      }
      if (target->contains(path.back())) fail_at(start, "duplicate key '" + path.back() + "'");
      (*target)[path.back()] = std::move(value);
    }
    return root;
  }

 private:
  bool eof() const { return pos_ >= text_.size(); }
  char peek() const { return eof() ? '\0' : text_[pos_]; }

  [[noreturn]] void fail(const std::string& msg) const { fail_at(pos_, msg); }

  [[noreturn]] void fail_at(std::size_t pos, const std::string& msg) const {
    std::size_t line = 1;
    for (std::size_t i = 0; i < pos && i < text_.size(); ++i) line += text_[i] == '\n';
    throw ConfigError(source_ + ":" + std::to_string(line) + ": " + msg);
  }

  void expect(char c) {
    if (peek() != c) fail(std::string("expected '") + c + "'");
    ++pos_;
  }

  void skip_spaces() {
    while (!eof() && (peek() == ' ' || peek() == '\t')) ++pos_;
  }

  void skip_comment() {
    if (peek() == '#') {
      while (!eof() && peek() != '\n') ++pos_;
    }
  }

  void skip_blank_lines() {
    while (!eof()) {
      skip_spaces();
      skip_comment();
      if (peek() == '\r') ++pos_;
      if (peek() == '\n') {
        ++pos_;
        continue;
      }
      break;
    }
  }

  /// Whitespace, comments and newlines inside arrays.
  void skip_array_space() {
    while (!eof()) {
      const char c = peek();
      if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
        ++pos_;
      } else if (c == '#') {
        skip_comment();
      } else {
        break;
      }
    }
  }

  void end_of_line() {
    skip_spaces();
    skip_comment();
    if (peek() == '\r') ++pos_;
    if (eof()) return;
    if (peek() != '\n') fail("unexpected trailing characters");
    ++pos_;
  }

  std::string parse_key() {
    if (peek() == '"') return parse_string();
    const std::size_t start = pos_;
    while (!eof() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_' || peek() == '-')) {
      ++pos_;
    }
    if (start == pos_) fail("expected a key");
    return std::string(text_.substr(start, pos_ - start));
  }

  std::vector<std::string> parse_key_path() {
    std::vector<std::string> path{parse_key()};
    while (true) {
      skip_spaces();
      if (peek() != '.') break;
      ++pos_;
      skip_spaces();
      path.push_back(parse_key());
    }
    return path;
  }

  std::string parse_string() {
    expect('"');
    std::string out;
    while (true) {
      if (eof() || peek() == '\n') fail("unterminated string");
      const char c = text_[pos_++];
      if (c == '"') break;
      if (c != '\\') {
        out += c;
        continue;
      }
      if (eof()) fail("unterminated escape");
      const char e = text_[pos_++];
      switch (e) {
        case 'n': out += '\n'; break;
        case 't': out += '\t'; break;
        case 'r': out += '\r'; break;
        case '"': out += '"'; break;
        case '\\': out += '\\'; break;
        default: fail(std::string("unsupported escape \\") + e);
      }
    }
    return out;
  }

  nlohmann::json parse_value() {
    const char c = peek();
    if (c == '"') return parse_string();
    if (c == '[') {
      ++pos_;
      nlohmann::json arr = nlohmann::json::array();
      while (true) {
        skip_array_space();
        if (peek() == ']') {
          ++pos_;
          break;
        }
        arr.push_back(parse_value());
        skip_array_space();
        if (peek() == ',') {
          ++pos_;
        } else if (peek() != ']') {
          fail("expected ',' or ']' in array");
        }
      }
      return arr;
    }
    const std::size_t start = pos_;
    while (!eof()) {
      const char d = peek();
      if (d == ',' || d == ']' || d == '#' || d == '\n' || d == '\r' || d == ' ' || d == '\t') break;
      ++pos_;
    }
    std::string token(text_.substr(start, pos_ - start));
    if (token.empty()) fail("expected a value");
    if (token == "true") return true;
    if (token == "false") return false;
    if (token == "inf" || token == "+inf") return std::numeric_limits<double>::infinity();
    std::string digits;
    for (char d : token) {
      if (d != '_') digits += d;
    }
    const bool is_float = digits.find_first_of(".eE") != std::string::npos;
    const char* first = digits.data() + (digits.front() == '+' ? 1 : 0);
    const char* last = digits.data() + digits.size();
    if (is_float) {
      double v = 0.0;
      auto [p, ec] = std::from_chars(first, last, v);
      if (ec != std::errc() || p != last) fail("invalid number '" + token + "'");
      return v;
    }
    std::int64_t v = 0;
    auto [p, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || p != last) fail("invalid value '" + token + "'");
    return v;
  }

  std::string_view text_;
  std::string source_;
  std::size_t pos_ = 0;
};

// ---------------------------------------------------------------------------
// JSON -> ExperimentConfig

class Fields {
 public:
  Fields(const nlohmann::json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected a table");
  }

  template <class T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(where_ + key + ": wrong type");
    }
  }

  template <class T>
  void read_optional(const char* key, std::optional<T>& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    T v{};
    read(key, v);
    out = v;
  }

  void read_size(const char* key, std::size_t& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
      throw ConfigError(where_ + key + ": expected a nonnegative integer");
    }
    out = v.get<std::size_t>();
  }

  void read_double(const char* key, double& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_number()) throw ConfigError(where_ + key + ": expected a number");
    out = v.get<double>();
  }

  const nlohmann::json* table(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void check_unknown() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError(where_ + k + ": unknown key");
    }
  }

 private:
  const nlohmann::json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

ObjectiveSense sense_from_string(const std::string& s) {
  if (s == "maximize") return ObjectiveSense::kMaximize;
  if (s == "minimize") return ObjectiveSense::kMinimize;
  throw ConfigError("sense must be 'maximize' or 'minimize', got '" + s + "'");
}

std::string to_string(ObjectiveSense s) {
  return s == ObjectiveSense::kMaximize ? "maximize" : "minimize";
}

}  // namespace

nlohmann::json parse_toml(std::string_view text, const std::string& source) {
  return TomlReader(text, source).parse();
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  Fields top(j, "");
  std::string mode = to_string(c.mode);
  top.read("mode", mode);
  if (mode == "ope") {
    c.mode = ExperimentMode::kOpe;
  } else if (mode == "opl") {
    c.mode = ExperimentMode::kOpl;
  } else if (mode == "constrained") {
    c.mode = ExperimentMode::kConstrained;
  } else {
    throw ConfigError("mode: expected ope, opl or constrained, got '" + mode + "'");
  }
  top.read("env_seed", c.env_seed);
  top.read("base_seed", c.base_seed);
  top.read_optional("n_trials", c.n_trials);
  top.read_optional("n_test", c.n_test);
  top.read("estimators", c.estimators);
  std::string nuisance = to_string(c.nuisance);
  top.read("nuisance", nuisance);
  if (nuisance == "oracle") {
    c.nuisance = NuisanceMode::kOracle;
  } else if (nuisance == "fitted") {
    c.nuisance = NuisanceMode::kFitted;
  } else {
    throw ConfigError("nuisance: expected oracle or fitted, got '" + nuisance + "'");
  }
  top.read_double("weight_floor", c.weight_floor);
  std::string out = c.output_dir.string();
  top.read("output_dir", out);
  c.output_dir = out;
  top.read_size("threads", c.threads);
  top.read("paper_scale", c.paper_scale);
  top.read_double("budget_ratio", c.budget_ratio);

  if (const auto* e = top.table("env")) {
    Fields f(*e, "env.");
    f.read_size("dim", c.env.dim);
    f.read_size("num_actions", c.env.num_actions);
    f.read_double("sigma_L", c.env.sigma_L);
    f.read_double("rho0", c.env.rho0);
    f.read_double("tau", c.env.tau);
    f.read_size("reference_size", c.env.reference_size);
    f.read("base_costs", c.env.base_costs);
    f.read_size("grid_points", c.grid_points);
    f.check_unknown();
  }
  if (const auto* d = top.table("defaults")) {
    Fields f(*d, "defaults.");
    f.read_size("n", c.defaults.n);
    f.read_double("rho1", c.defaults.rho1);
    f.read_double("epsilon", c.defaults.epsilon);
    f.read_double("beta", c.defaults.beta);
    f.check_unknown();
  }
  if (const auto* s = top.table("sweep")) {
    Fields f(*s, "sweep.");
    std::string axis = to_string(c.axis);
    f.read("axis", axis);
    c.axis = sweep_axis_from_string(axis);
    f.read("values", c.sweep_values);
    if (s->contains("values") && c.sweep_values.empty()) throw ConfigError("sweep.values must be nonempty");
    bool use_defaults = false;
    f.read("default_values", use_defaults);
    if (use_defaults) {
      if (!c.sweep_values.empty()) throw ConfigError("sweep: give either values or default_values");
      c.sweep_values = default_sweep_values(c.axis);
    }
    f.check_unknown();
  }
  if (const auto* t = top.table("train")) {
    Fields f(*t, "train.");
    f.read_double("learning_rate", c.train.learning_rate);
    f.read_size("batch_size", c.train.batch_size);
    f.read_size("max_epochs", c.train.max_epochs);
    f.read_size("patience", c.train.patience);
    f.read_double("validation_fraction", c.train.validation_fraction);
    f.read("hidden", c.train.hidden);
    f.read_optional("point_time", c.train.point_time);
    std::string sense = to_string(c.train.sense);
    f.read("sense", sense);
    c.train.sense = sense_from_string(sense);
    f.check_unknown();
  }
  if (const auto* l = top.table("constrained")) {
    Fields f(*l, "constrained.");
    f.read_double("lambda_init", c.lagrangian.lambda_init);
    f.read_double("safety_margin", c.lagrangian.safety_margin);
    f.read_double("lambda_lr", c.lagrangian.lambda_lr);
    f.read_double("policy_lr", c.lagrangian.policy_lr);
    f.read_size("batch_size", c.lagrangian.batch_size);
    f.read_size("epochs", c.lagrangian.epochs);
    f.read_double("validation_fraction", c.lagrangian.validation_fraction);
    f.read("hidden", c.lagrangian.hidden);
    f.read_optional("point_time", c.lagrangian.point_time);
    std::string sense = to_string(c.lagrangian.sense);
    f.read("sense", sense);
    c.lagrangian.sense = sense_from_string(sense);
    f.check_unknown();
  }
  top.check_unknown();
  c.validate();
  return c;
}

nlohmann::json experiment_config_to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["mode"] = to_string(c.mode);
  j["env_seed"] = c.env_seed;
  j["base_seed"] = c.base_seed;
  j["n_trials"] = c.trials();
  j["n_test"] = c.test_size();
  j["estimators"] = c.resolved_methods();
  j["nuisance"] = to_string(c.nuisance);
  j["weight_floor"] = c.weight_floor;
  j["output_dir"] = c.output_dir.string();
  j["paper_scale"] = c.paper_scale;
  j["budget_ratio"] = c.budget_ratio;
  j["env"] = {{"dim", c.env.dim},
              {"num_actions", c.env.num_actions},
              {"sigma_L", c.env.sigma_L},
              {"rho0", c.env.rho0},
              {"tau", c.env.tau},
              {"reference_size", c.env.reference_size},
              {"base_costs", c.env.base_costs},
              {"grid_points", c.grid_points}};
  j["defaults"] = {{"n", c.defaults.n},
                   {"rho1", c.defaults.rho1},
                   {"epsilon", c.defaults.epsilon},
                   {"beta", c.defaults.beta}};
  j["sweep"] = {{"axis", to_string(c.axis)}, {"values", c.resolved_sweep()}};
  j["train"] = {{"learning_rate", c.train.learning_rate},
                {"batch_size", c.train.batch_size},
                {"max_epochs", c.train.max_epochs},
                {"patience", c.train.patience},
                {"validation_fraction", c.train.validation_fraction},
                {"hidden", c.train.hidden},
                {"sense", to_string(c.train.sense)}};
  if (c.train.point_time) j["train"]["point_time"] = *c.train.point_time;
  j["constrained"] = {{"lambda_init", c.lagrangian.lambda_init},
                      {"safety_margin", c.lagrangian.safety_margin},
                      {"lambda_lr", c.lagrangian.lambda_lr},
                      {"policy_lr", c.lagrangian.policy_lr},
                      {"batch_size", c.lagrangian.batch_size},
                      {"epochs", c.lagrangian.epochs},
                      {"validation_fraction", c.lagrangian.validation_fraction},
                      {"hidden", c.lagrangian.hidden},
                      {"sense", to_string(c.lagrangian.sense)}};
  if (c.lagrangian.point_time) j["constrained"]["point_time"] = *c.lagrangian.point_time;
  return j;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  nlohmann::json j;
  if (path.extension() == ".json") {
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError(path.string() + ": " + e.what());
    }
  } else {
    j = parse_toml(text, path.string());
  }
  return experiment_config_from_json(j);
}

}  // namespace survope
