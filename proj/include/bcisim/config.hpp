#pragma once

// Plain-text experiment configuration: one key=value per line, '#' starts a
// comment. A `preset` key expands first, then the remaining lines in order,
// then command-line overrides.

#include "bcisim/harness.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace bcisim {

/// Bad configuration input; `line` is 1-based, or 0 for overrides and
/// resolved-value checks.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(const std::string& what, int line)
      : std::invalid_argument(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

enum class ExperimentKind { closed_loop, mismatch_sweep, regret_rates };

struct RunConfig {
  std::string preset;
  ExperimentKind kind = ExperimentKind::closed_loop;
  ExperimentConfig experiment;
  std::vector<double> sweep_fractions{0.0, 0.25, 0.5, 1.0};
  StreamConfig stream;
  std::vector<RuleKind> stream_algorithms{RuleKind::ftl, RuleKind::ogd, RuleKind::ma};
};

struct ConfigEntry {
  std::string key;
  std::string value;
  int line = 0;
};

// ---------------------------------------------------------------------------
// Value formatting and parsing
// ---------------------------------------------------------------------------

/// Shortest round-trip decimal, independent of locale.
inline std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) out.push_back(trim(item));
  return out;
}

template <class T>
T parse_number(const std::string& v, const ConfigEntry& e) {
  T x{};
  const char* end = v.data() + v.size();
  const auto res = std::from_chars(v.data(), end, x);
  if (v.empty() || res.ec != std::errc{} || res.ptr != end) {
    throw ConfigError("unparseable value '" + v + "' for " + e.key, e.line);
  }
  return x;
}

inline double parse_real(const ConfigEntry& e) {
  const double x = parse_number<double>(e.value, e);
  if (!std::isfinite(x)) throw ConfigError("non-finite value for " + e.key, e.line);
  return x;
}

inline double parse_positive(const ConfigEntry& e) {
  const double x = parse_real(e);
  if (!(x > 0.0)) throw ConfigError(e.key + " must be positive", e.line);
  return x;
}

inline double parse_nonnegative(const ConfigEntry& e) {
  const double x = parse_real(e);
  if (!(x >= 0.0)) throw ConfigError(e.key + " must be >= 0", e.line);
  return x;
}

inline int parse_count(const ConfigEntry& e, int min = 1) {
  const long long x = parse_number<long long>(e.value, e);
  if (x < min || x > 1'000'000'000) throw ConfigError(e.key + " out of range", e.line);
  return static_cast<int>(x);
}

inline bool parse_bool(const ConfigEntry& e) {
  if (e.value == "true" || e.value == "1") return true;
  if (e.value == "false" || e.value == "0") return false;
  throw ConfigError("expected true/false for " + e.key, e.line);
}

inline std::vector<double> parse_list(const ConfigEntry& e) {
  std::vector<double> out;
  for (const auto& item : split(e.value, ',')) {
    ConfigEntry sub{e.key, item, e.line};
    out.push_back(parse_real(sub));
  }
  if (out.empty()) throw ConfigError("empty list for " + e.key, e.line);
  return out;
}

inline std::string join(const std::vector<double>& xs) {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? "," : "") + format_double(xs[i]);
  return s;
}

inline RuleKind parse_rule(const ConfigEntry& e) {
  if (e.value == "ogd") return RuleKind::ogd;
  if (e.value == "ma") return RuleKind::ma;
  if (e.value == "ftl") return RuleKind::ftl;
  if (e.value == "rls") return RuleKind::rls;
  throw ConfigError("unknown algorithm '" + e.value + "'", e.line);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

inline const std::map<std::string, std::vector<std::pair<std::string, std::string>>>& presets() {
  static const std::map<std::string, std::vector<std::pair<std::string, std::string>>> table = [] {
    std::map<std::string, std::vector<std::pair<std::string, std::string>>> t;
    const std::vector<std::pair<std::string, std::string>> cursor{
        {"task", "cursor"}, {"n_neurons", "10"}, {"K", "50"},   {"T_max", "200"},
        {"n_repeats", "100"}, {"algo", "ftl"},  {"snr", "1"}, {"eta0", "0.005"},
    };
    const std::vector<std::pair<std::string, std::string>> arm{
        {"task", "arm"}, {"n_neurons", "75"}, {"K", "50"},           {"T_max", "150"}, {"n_repeats", "50"},
        {"algo", "ftl"}, {"snr", "1"},        {"encoder_mode", "rectified"},
    };
    t["cursor_fig2"] = cursor;
    t["cursor_mismatch_fig7"] = cursor;
    t["cursor_mismatch_fig7"].push_back({"experiment", "mismatch_sweep"});
    t["arm_fig4"] = arm;
    t["arm_correlation_fig5"] = arm;
    t["arm_correlation_fig5"].push_back({"correlation", "true"});
    t["regret_rates_table1"] = {{"experiment", "regret_rates"}};
    return t;
  }();
  return table;
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

/// Accumulates entries, then resolves them into a validated RunConfig.
class ConfigBuilder {
 public:
  void set(std::string key, std::string value, int line = 0) {
    if (key == "preset") {
      if (!presets().contains(value)) throw ConfigError("unknown preset '" + value + "'", line);
      preset_ = value;
      return;
    }
    entries_.push_back({std::move(key), std::move(value), line});
  }

  /// Reads key=value lines; a preset line expands ahead of everything else.
  void read(std::istream& in) {
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
      ++line_no;
      if (const auto hash = raw.find('#'); hash != std::string::npos) raw.resize(hash);
      const std::string line = detail::trim(raw);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError("expected key=value", line_no);
      set(detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)), line_no);
    }
  }

  void read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path, 0);
    read(in);
  }

  /// "key=value" from the command line.
  void set_override(const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("override must be key=value: " + kv, 0);
    set(detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)), 0);
  }

  RunConfig build() const {
    RunConfig rc;
    rc.preset = preset_;
    std::vector<ConfigEntry> all;
    if (!preset_.empty()) {
      for (const auto& [k, v] : presets().at(preset_)) all.push_back({k, v, 0});
    }
    all.insert(all.end(), entries_.begin(), entries_.end());

    bool task_set = false;
    std::optional<double> reg, action_noise;
    std::optional<int> d_dof;
    std::optional<std::vector<double>> op_entries;
    ExperimentConfig& c = rc.experiment;
    for (const auto& e : all) apply(e, rc, task_set, reg, action_noise, d_dof, op_entries);

    if (!task_set && rc.kind != ExperimentKind::regret_rates) {
      throw ConfigError("missing required key 'task' (or a preset)", 0);
    }
    if (c.task == Task::arm) {
      const ArmModel model = c.arm_file.empty() ? default_arm() : ArmModel::load(c.arm_file);
      c.d_dof = model.d_dof();
      if (d_dof && *d_dof != c.d_dof) throw ConfigError("d_dof does not match the arm model", 0);
    } else {
      c.d_dof = d_dof.value_or(3);
    }
    const auto p = static_cast<double>(c.n_neurons + 1 + c.d_dof);
    c.update_rule.reg = reg.value_or(1e-3 * p);
    c.update_rule.k_expected = c.K;
    c.assist.init_action_noise_sigma =
        action_noise.value_or(0.1 * (c.task == Task::arm ? c.arm.max_step : c.speed));
    if (op_entries) {
      const auto D = c.d_dof;
      if (static_cast<Eigen::Index>(op_entries->size()) != D * D) {
        throw ConfigError("mismatch_operator needs d_dof*d_dof entries", 0);
      }
      c.mismatch.op = Matrix(D, D);
      for (Eigen::Index i = 0; i < D; ++i) {
        for (Eigen::Index j = 0; j < D; ++j) (*c.mismatch.op)(i, j) = (*op_entries)[static_cast<std::size_t>(i * D + j)];
      }
    }
    rc.stream.K = std::max(rc.stream.K, 16);
    try {
      c.validate();
    } catch (const std::invalid_argument& ex) {
      throw ConfigError(ex.what(), 0);
    }
    return rc;
  }

 private:
  static void apply(const ConfigEntry& e, RunConfig& rc, bool& task_set, std::optional<double>& reg,
                    std::optional<double>& action_noise, std::optional<int>& d_dof,
                    std::optional<std::vector<double>>& op_entries) {
    using namespace detail;
    ExperimentConfig& c = rc.experiment;
    const std::string& k = e.key;
    const std::string& v = e.value;
    if (k == "task") {
      if (v == "cursor") c.task = Task::cursor;
      else if (v == "arm") c.task = Task::arm;
      else throw ConfigError("task must be cursor or arm", e.line);
      task_set = true;
    } else if (k == "experiment") {
      if (v == "closed_loop") rc.kind = ExperimentKind::closed_loop;
      else if (v == "mismatch_sweep") rc.kind = ExperimentKind::mismatch_sweep;
      else if (v == "regret_rates") rc.kind = ExperimentKind::regret_rates;
      else throw ConfigError("unknown experiment '" + v + "'", e.line);
    } else if (k == "n_neurons") {
      c.n_neurons = parse_count(e);
    } else if (k == "d_dof") {
      d_dof = parse_count(e);
    } else if (k == "K") {
      c.K = parse_count(e);
    } else if (k == "T_max") {
      c.T_max = parse_count(e);
    } else if (k == "n_repeats") {
      c.n_repeats = parse_count(e);
    } else if (k == "base_seed") {
      c.base_seed = parse_number<std::uint64_t>(v, e);
    } else if (k == "algo") {
      c.update_rule.kind = parse_rule(e);
    } else if (k == "eta0") {
      c.update_rule.eta0 = parse_positive(e);
    } else if (k == "lambda") {
      c.update_rule.lambda = parse_real(e);
      if (c.update_rule.lambda < 0.0 || c.update_rule.lambda > 1.0) throw ConfigError("lambda must be in [0,1]", e.line);
    } else if (k == "reg") {
      reg = parse_nonnegative(e);
    } else if (k == "rls_per_step") {
      c.update_rule.per_step = parse_bool(e);
    } else if (k == "assist_mode") {
      if (v == "linear") c.assist.mode = AssistMode::linear_mix;
      else if (v == "probabilistic") c.assist.mode = AssistMode::probabilistic_mix;
      else throw ConfigError("assist_mode must be linear or probabilistic", e.line);
    } else if (k == "beta_schedule") {
      c.assist.betas = parse_list(e);
      for (double b : c.assist.betas) {
        if (b < 0.0 || b > 1.0) throw ConfigError("beta values must be in [0,1]", e.line);
      }
    } else if (k == "init_action_noise") {
      action_noise = parse_nonnegative(e);
    } else if (k == "snr") {
      c.snr = parse_positive(e);
    } else if (k == "noise_sigma") {
      if (v == "auto") c.noise_sigma.reset();
      else c.noise_sigma = parse_nonnegative(e);
    } else if (k == "calibration_samples") {
      c.calibration_samples = parse_count(e);
    } else if (k == "encoder_mode") {
      if (v == "gaussian") c.encoder_sampling = EncoderSampling::gaussian;
      else if (v == "rectified") c.encoder_sampling = EncoderSampling::rectified;
      else throw ConfigError("encoder_mode must be gaussian or rectified", e.line);
    } else if (k == "mismatch_mode") {
      if (v == "none") c.mismatch.mode = MismatchMode::none;
      else if (v == "linear") c.mismatch.mode = MismatchMode::linear_operator;
      else if (v == "additive") c.mismatch.mode = MismatchMode::additive_noise;
      else throw ConfigError("mismatch_mode must be none, linear or additive", e.line);
    } else if (k == "mismatch_operator") {
      op_entries = parse_list(e);
    } else if (k == "mismatch_noise") {
      c.mismatch.noise_fraction = parse_nonnegative(e);
    } else if (k == "continue_from_end") {
      c.continue_from_end = parse_bool(e);
    } else if (k == "workspace_half_width") {
      c.workspace_half_width = parse_nonnegative(e);
    } else if (k == "speed") {
      c.speed = parse_positive(e);
    } else if (k == "epsilon") {
      c.cursor_epsilon = parse_positive(e);
    } else if (k == "arm_file") {
      c.arm_file = v;
    } else if (k == "mu") {
      c.arm.mu = parse_positive(e);
    } else if (k == "max_step") {
      c.arm.max_step = parse_positive(e);
    } else if (k == "delta") {
      c.arm.delta = parse_positive(e);
    } else if (k == "arm_epsilon") {
      c.arm.acquire_cost = parse_positive(e);
    } else if (k == "reach_weight") {
      c.arm.reach_weight = parse_positive(e);
    } else if (k == "grasp_weight") {
      c.arm.grasp_weight = parse_positive(e);
    } else if (k == "grasp_wrist_weight") {
      c.arm.grasp_wrist_weight = parse_positive(e);
    } else if (k == "arm_min_radius") {
      c.arm_workspace.min_radius = parse_nonnegative(e);
    } else if (k == "arm_max_radius") {
      c.arm_workspace.max_radius = parse_positive(e);
    } else if (k == "arm_posture_fraction") {
      c.arm_workspace.posture_fraction = parse_positive(e);
      if (c.arm_workspace.posture_fraction > 1.0) throw ConfigError("arm_posture_fraction must be <= 1", e.line);
    } else if (k == "correlation") {
      c.correlation = parse_bool(e);
    } else if (k == "correlation_reg") {
      c.correlation_reg = parse_nonnegative(e);
    } else if (k == "sweep_fractions") {
      rc.sweep_fractions = parse_list(e);
      for (double f : rc.sweep_fractions) {
        if (f < 0.0) throw ConfigError("sweep fractions must be >= 0", e.line);
      }
    } else if (k == "stream_features") {
      rc.stream.n_features = parse_count(e);
    } else if (k == "stream_d_out") {
      rc.stream.d_out = parse_count(e);
    } else if (k == "stream_batch") {
      rc.stream.batch = parse_count(e);
    } else if (k == "stream_noise") {
      rc.stream.noise_sigma = parse_nonnegative(e);
    } else if (k == "stream_K") {
      rc.stream.K = parse_count(e, 16);
    } else if (k == "stream_repeats") {
      rc.stream.repeats = parse_count(e);
    } else if (k == "stream_reg") {
      rc.stream.reg = parse_nonnegative(e);
    } else if (k == "stream_eta0") {
      rc.stream.eta0 = parse_positive(e);
    } else if (k == "stream_lambda") {
      rc.stream.lambda = parse_real(e);
      if (rc.stream.lambda < 0.0 || rc.stream.lambda > 1.0) throw ConfigError("stream_lambda must be in [0,1]", e.line);
    } else if (k == "stream_algorithms") {
      rc.stream_algorithms.clear();
      for (const auto& name : split(v, ',')) rc.stream_algorithms.push_back(parse_rule({k, name, e.line}));
    } else {
      throw ConfigError("unknown key '" + k + "'", e.line);
    }
  }

  std::string preset_;
  std::vector<ConfigEntry> entries_;
};

inline RunConfig parse_config(std::istream& in, const std::vector<std::string>& overrides = {}) {
  ConfigBuilder b;
  b.read(in);
  for (const auto& kv : overrides) b.set_override(kv);
  return b.build();
}

inline RunConfig preset_config(const std::string& name, const std::vector<std::string>& overrides = {}) {
  ConfigBuilder b;
  b.set("preset", name);
  for (const auto& kv : overrides) b.set_override(kv);
  return b.build();
}

/// Fully resolved configuration as key=value lines; feeding it back through
/// parse_config reproduces the same RunConfig.
inline std::string to_config_text(const RunConfig& rc) {
  using detail::join;
  const ExperimentConfig& c = rc.experiment;
  std::ostringstream o;
  auto kv = [&](const std::string& k, const std::string& v) { o << k << '=' << v << '\n'; };
  auto kd = [&](const std::string& k, double v) { kv(k, format_double(v)); };
  auto kb = [&](const std::string& k, bool v) { kv(k, v ? "true" : "false"); };
  if (!rc.preset.empty()) o << "# expanded from preset " << rc.preset << '\n';
  kv("experiment", rc.kind == ExperimentKind::closed_loop      ? "closed_loop"
                   : rc.kind == ExperimentKind::mismatch_sweep ? "mismatch_sweep"
                                                               : "regret_rates");
  kv("task", to_string(c.task));
  kv("n_neurons", std::to_string(c.n_neurons));
  kv("d_dof", std::to_string(c.d_dof));
  kv("K", std::to_string(c.K));
  kv("T_max", std::to_string(c.T_max));
  kv("n_repeats", std::to_string(c.n_repeats));
  kv("base_seed", std::to_string(c.base_seed));
  kv("algo", to_string(c.update_rule.kind));
  kd("eta0", c.update_rule.eta0);
  kd("lambda", c.update_rule.lambda);
  kd("reg", c.update_rule.reg);
  kb("rls_per_step", c.update_rule.per_step);
  kv("assist_mode", c.assist.mode == AssistMode::linear_mix ? "linear" : "probabilistic");
  kv("beta_schedule", join(c.assist.betas));
  kd("init_action_noise", c.assist.init_action_noise_sigma);
  kd("snr", c.snr);
  kv("noise_sigma", c.noise_sigma ? format_double(*c.noise_sigma) : "auto");
  kv("calibration_samples", std::to_string(c.calibration_samples));
  kv("encoder_mode", c.encoder_sampling == EncoderSampling::gaussian ? "gaussian" : "rectified");
  kv("mismatch_mode", c.mismatch.mode == MismatchMode::none              ? "none"
                      : c.mismatch.mode == MismatchMode::linear_operator ? "linear"
                                                                         : "additive");
  if (c.mismatch.op) {
    std::vector<double> flat;
    for (Eigen::Index i = 0; i < c.mismatch.op->rows(); ++i) {
      for (Eigen::Index j = 0; j < c.mismatch.op->cols(); ++j) flat.push_back((*c.mismatch.op)(i, j));
    }
    kv("mismatch_operator", join(flat));
  }
  kd("mismatch_noise", c.mismatch.noise_fraction);
  kb("continue_from_end", c.continue_from_end);
  kd("workspace_half_width", c.workspace_half_width);
  kd("speed", c.speed);
  kd("epsilon", c.cursor_epsilon);
  if (!c.arm_file.empty()) kv("arm_file", c.arm_file);
  kd("mu", c.arm.mu);
  kd("max_step", c.arm.max_step);
  kd("delta", c.arm.delta);
  kd("arm_epsilon", c.arm.acquire_cost);
  kd("reach_weight", c.arm.reach_weight);
  kd("grasp_weight", c.arm.grasp_weight);
  kd("grasp_wrist_weight", c.arm.grasp_wrist_weight);
  kd("arm_min_radius", c.arm_workspace.min_radius);
  kd("arm_max_radius", c.arm_workspace.max_radius);
  kd("arm_posture_fraction", c.arm_workspace.posture_fraction);
  kb("correlation", c.correlation);
  kd("correlation_reg", c.correlation_reg);
  kv("sweep_fractions", join(rc.sweep_fractions));
  kv("stream_features", std::to_string(rc.stream.n_features));
  kv("stream_d_out", std::to_string(rc.stream.d_out));
  kv("stream_batch", std::to_string(rc.stream.batch));
  kd("stream_noise", rc.stream.noise_sigma);
  kv("stream_K", std::to_string(rc.stream.K));
  kv("stream_repeats", std::to_string(rc.stream.repeats));
  kd("stream_reg", rc.stream.reg);
  kd("stream_eta0", rc.stream.eta0);
  kd("stream_lambda", rc.stream.lambda);
  std::string algos;
  for (std::size_t i = 0; i < rc.stream_algorithms.size(); ++i) {
    algos += (i ? "," : "") + to_string(rc.stream_algorithms[i]);
  }
  kv("stream_algorithms", algos);
  return o.str();
}

}  // namespace bcisim
