#pragma once

// Flat `section.key = value` run configuration. Grid files add
// `grid.<section.key> = [v1, v2, ...]` axes and an optional `grid.max_cells`.

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "scoreflow/oracle.hpp"
#include "scoreflow/solver.hpp"
#include "scoreflow/train.hpp"

namespace scoreflow {

struct ConfigError : Error {
  ConfigError(std::string key_, std::size_t line_, const std::string& msg)
      : Error(line_ ? "line " + std::to_string(line_) + ": " + msg : msg), key(std::move(key_)), line(line_) {}
  std::string key;
  std::size_t line;
};

struct ParseError : ConfigError {
  using ConfigError::ConfigError;
};

struct ValidationError : ConfigError {
  using ConfigError::ConfigError;
};

enum class DataKind { benchmark, two_component, two_peak, single_gaussian, dirac };
enum class ModelKind { oracle, mlp, train };
enum class InitKind { standard, exact_prior, warm_start };

struct DataSpec {
  std::optional<DataKind> kind;
  Vec mean = {0.0};
  double std = 0.5;
  std::optional<double> sigma_obs;
  Vec observation;  // fixed y for conditional (enhancement) sampling
};

struct ModelSpec {
  ModelKind kind = ModelKind::oracle;
  std::string path;
  Parameterization parameterization = Parameterization::denoiser;
  FrameKind frame = FrameKind::edm;
  bool use_ema = true;
};

struct SamplerConfig {
  SamplerKind kind = SamplerKind::dpmpp;
  int order = 3;
  GridKind grid = GridKind::polynomial;
  std::size_t steps = 32;
  double sigma_min = 0.002;
  double sigma_max = 80.0;
  double rho = 7.0;
  std::size_t samples = 1000;
};

struct GuidanceConfig {
  GuidanceSpec spec;
  std::optional<std::size_t> label;
};

struct InitConfig {
  InitKind kind = InitKind::standard;
  double sigma_start = 1.0;
  Vec center;
};

struct MetricsConfig {
  std::size_t projections = 64;
  std::size_t reference_samples = 0;  // 0: same as sampler.samples
};

struct OutputsConfig {
  std::string dir = "out";
  std::vector<std::string> formats = {"csv", "json"};
  std::string run_id = "run";
};

struct RunConfig {
  DataSpec data;
  ModelSpec model;
  SamplerConfig sampler;
  GuidanceConfig guidance;
  InitConfig init;
  train::TrainConfig train;  // train.train_noise is the train_noise section
  MetricsConfig metrics;
  OutputsConfig outputs;
  std::uint64_t seed = 0;
};

struct GridAxis {
  std::string key;
  std::vector<std::string> values;
};

struct GridSpec {
  RunConfig base;
  std::vector<GridAxis> axes;
  std::size_t max_cells = 256;
};

namespace config_detail {

struct BadValue {
  std::string msg;
};

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline double parse_double(std::string_view s) {
  const std::string t = trim(s);
  double v = 0.0;
  const auto r = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || r.ec != std::errc() || r.ptr != t.data() + t.size()) throw BadValue{"expected a number, got '" + t + "'"};
  return v;
}

template <class Int>
Int parse_int(std::string_view s) {
  const std::string t = trim(s);
  Int v = 0;
  const auto r = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || r.ec != std::errc() || r.ptr != t.data() + t.size()) throw BadValue{"expected an integer, got '" + t + "'"};
  return v;
}

inline bool parse_bool(std::string_view s) {
  const std::string t = trim(s);
  if (t == "true") return true;
  if (t == "false") return false;
  throw BadValue{"expected true or false, got '" + t + "'"};
}

inline std::string parse_string(std::string_view s) {
  std::string t = trim(s);
  if (t.size() >= 2 && t.front() == '"' && t.back() == '"') t = t.substr(1, t.size() - 2);
  return t;
}

/// Splits "[a, b, c]" into trimmed items; "[]" is empty.
inline std::vector<std::string> parse_list(std::string_view s) {
  const std::string t = trim(s);
  if (t.size() < 2 || t.front() != '[' || t.back() != ']') throw BadValue{"expected a list like [a, b], got '" + t + "'"};
  std::vector<std::string> out;
  const std::string body = trim(std::string_view(t).substr(1, t.size() - 2));
  if (body.empty()) return out;
  std::stringstream ss(body);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) throw BadValue{"empty list item"};
    out.push_back(item);
  }
  return out;
}

template <class T, class F>
std::string join(const std::vector<T>& v, F&& f) {
  std::string out = "[";
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + f(v[i]);
  return out + "]";
}

struct KeyDef {
  std::string key;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::optional<std::string>(const RunConfig&)> get;  // nullopt: unset optional
};

template <class Acc>
KeyDef dbl(std::string key, Acc acc) {
  return {std::move(key), [acc](RunConfig& c, std::string_view v) { acc(c) = parse_double(v); },
          [acc](const RunConfig& c) -> std::optional<std::string> { return fmt(acc(const_cast<RunConfig&>(c))); }};
}

template <class Int, class Acc>
KeyDef integer(std::string key, Acc acc) {
  return {std::move(key), [acc](RunConfig& c, std::string_view v) { acc(c) = parse_int<Int>(v); },
          [acc](const RunConfig& c) -> std::optional<std::string> { return std::to_string(acc(const_cast<RunConfig&>(c))); }};
}

template <class Acc>
KeyDef boolean(std::string key, Acc acc) {
  return {std::move(key), [acc](RunConfig& c, std::string_view v) { acc(c) = parse_bool(v); },
          [acc](const RunConfig& c) -> std::optional<std::string> {
            return std::string(acc(const_cast<RunConfig&>(c)) ? "true" : "false");
          }};
}

template <class Acc>
KeyDef text(std::string key, Acc acc) {
  return {std::move(key), [acc](RunConfig& c, std::string_view v) { acc(c) = parse_string(v); },
          [acc](const RunConfig& c) -> std::optional<std::string> { return acc(const_cast<RunConfig&>(c)); }};
}

template <class Acc, class Parse>
KeyDef enumeration(std::string key, Acc acc, Parse parse) {
  return {std::move(key),
          [acc, parse](RunConfig& c, std::string_view v) {
            const std::string t = trim(v);
            const auto e = parse(t);
            if (!e) throw BadValue{"unknown value '" + t + "'"};
            acc(c) = *e;
          },
          [acc](const RunConfig& c) -> std::optional<std::string> {
            return std::string(to_string(acc(const_cast<RunConfig&>(c))));
          }};
}

template <class Acc>
KeyDef opt_dbl(std::string key, Acc acc) {
  return {std::move(key), [acc](RunConfig& c, std::string_view v) { acc(c) = parse_double(v); },
          [acc](const RunConfig& c) -> std::optional<std::string> {
            const auto& o = acc(const_cast<RunConfig&>(c));
            if (!o) return std::nullopt;
            return fmt(*o);
          }};
}

template <class Acc>
KeyDef opt_index(std::string key, Acc acc) {
  return {std::move(key), [acc](RunConfig& c, std::string_view v) { acc(c) = parse_int<std::size_t>(v); },
          [acc](const RunConfig& c) -> std::optional<std::string> {
            const auto& o = acc(const_cast<RunConfig&>(c));
            if (!o) return std::nullopt;
            return std::to_string(*o);
          }};
}

template <class Acc>
KeyDef dbl_list(std::string key, Acc acc) {
  return {std::move(key),
          [acc](RunConfig& c, std::string_view v) {
            Vec out;
            for (const auto& s : parse_list(v)) out.push_back(parse_double(s));
            acc(c) = out;
          },
          [acc](const RunConfig& c) -> std::optional<std::string> {
            return join(acc(const_cast<RunConfig&>(c)), [](double d) { return fmt(d); });
          }};
}

template <class Acc>
KeyDef size_list(std::string key, Acc acc) {
  return {std::move(key),
          [acc](RunConfig& c, std::string_view v) {
            std::vector<std::size_t> out;
            for (const auto& s : parse_list(v)) out.push_back(parse_int<std::size_t>(s));
            acc(c) = out;
          },
          [acc](const RunConfig& c) -> std::optional<std::string> {
            return join(acc(const_cast<RunConfig&>(c)), [](std::size_t d) { return std::to_string(d); });
          }};
}

template <class Acc>
KeyDef text_list(std::string key, Acc acc) {
  return {std::move(key), [acc](RunConfig& c, std::string_view v) { acc(c) = parse_list(v); },
          [acc](const RunConfig& c) -> std::optional<std::string> {
            return join(acc(const_cast<RunConfig&>(c)), [](const std::string& s) { return s; });
          }};
}

inline std::string_view to_string(DataKind k) {
  switch (k) {
    case DataKind::benchmark: return "benchmark";
    case DataKind::two_component: return "two_component";
    case DataKind::two_peak: return "two_peak";
    case DataKind::single_gaussian: return "single_gaussian";
    case DataKind::dirac: return "dirac";
  }
  return "?";
}

inline std::optional<DataKind> parse_data_kind(std::string_view s) {
  for (auto k : {DataKind::benchmark, DataKind::two_component, DataKind::two_peak, DataKind::single_gaussian, DataKind::dirac})
    if (to_string(k) == s) return k;
  return std::nullopt;
}

inline std::string_view to_string(ModelKind k) {
  switch (k) {
    case ModelKind::oracle: return "oracle";
    case ModelKind::mlp: return "mlp";
    case ModelKind::train: return "train";
  }
  return "?";
}

inline std::optional<ModelKind> parse_model_kind(std::string_view s) {
  for (auto k : {ModelKind::oracle, ModelKind::mlp, ModelKind::train})
    if (to_string(k) == s) return k;
  return std::nullopt;
}

inline std::string_view to_string(InitKind k) {
  switch (k) {
    case InitKind::standard: return "standard";
    case InitKind::exact_prior: return "exact_prior";
    case InitKind::warm_start: return "warm_start";
  }
  return "?";
}

inline std::optional<InitKind> parse_init_kind(std::string_view s) {
  for (auto k : {InitKind::standard, InitKind::exact_prior, InitKind::warm_start})
    if (to_string(k) == s) return k;
  return std::nullopt;
}

// data.kind is stored as an optional so a missing value can be reported.
inline KeyDef data_kind_key() {
  return {"data.kind",
          [](RunConfig& c, std::string_view v) {
            const auto k = parse_data_kind(trim(v));
            if (!k) throw BadValue{"unknown value '" + trim(v) + "'"};
            c.data.kind = k;
          },
          [](const RunConfig& c) -> std::optional<std::string> {
            if (!c.data.kind) return std::nullopt;
            return std::string(to_string(*c.data.kind));
          }};
}

inline const std::vector<KeyDef>& keys() {
  using train::Conditioning;
  static const std::vector<KeyDef> table = {
      data_kind_key(),
      dbl_list("data.mean", [](RunConfig& c) -> Vec& { return c.data.mean; }),
      dbl("data.std", [](RunConfig& c) -> double& { return c.data.std; }),
      opt_dbl("data.sigma_obs", [](RunConfig& c) -> std::optional<double>& { return c.data.sigma_obs; }),
      dbl_list("data.observation", [](RunConfig& c) -> Vec& { return c.data.observation; }),

      enumeration("model.kind", [](RunConfig& c) -> ModelKind& { return c.model.kind; }, parse_model_kind),
      text("model.path", [](RunConfig& c) -> std::string& { return c.model.path; }),
      enumeration("model.parameterization", [](RunConfig& c) -> Parameterization& { return c.model.parameterization; },
                  parse_parameterization),
      enumeration("model.frame", [](RunConfig& c) -> FrameKind& { return c.model.frame; }, parse_frame),
      boolean("model.use_ema", [](RunConfig& c) -> bool& { return c.model.use_ema; }),

      enumeration("sampler.kind", [](RunConfig& c) -> SamplerKind& { return c.sampler.kind; }, parse_sampler_kind),
      integer<int>("sampler.order", [](RunConfig& c) -> int& { return c.sampler.order; }),
      enumeration("sampler.grid", [](RunConfig& c) -> GridKind& { return c.sampler.grid; }, parse_grid_kind),
      integer<std::size_t>("sampler.steps", [](RunConfig& c) -> std::size_t& { return c.sampler.steps; }),
      dbl("sampler.sigma_min", [](RunConfig& c) -> double& { return c.sampler.sigma_min; }),
      dbl("sampler.sigma_max", [](RunConfig& c) -> double& { return c.sampler.sigma_max; }),
      dbl("sampler.rho", [](RunConfig& c) -> double& { return c.sampler.rho; }),
      integer<std::size_t>("sampler.samples", [](RunConfig& c) -> std::size_t& { return c.sampler.samples; }),

      enumeration("guidance.mode", [](RunConfig& c) -> GuidanceMode& { return c.guidance.spec.mode; }, parse_guidance_mode),
      dbl("guidance.scale", [](RunConfig& c) -> double& { return c.guidance.spec.scale; }),
      dbl("guidance.sigma_lo", [](RunConfig& c) -> double& { return c.guidance.spec.sigma_lo; }),
      dbl("guidance.sigma_hi", [](RunConfig& c) -> double& { return c.guidance.spec.sigma_hi; }),
      opt_index("guidance.label", [](RunConfig& c) -> std::optional<std::size_t>& { return c.guidance.label; }),

      enumeration("init.kind", [](RunConfig& c) -> InitKind& { return c.init.kind; }, parse_init_kind),
      dbl("init.sigma_start", [](RunConfig& c) -> double& { return c.init.sigma_start; }),
      dbl_list("init.center", [](RunConfig& c) -> Vec& { return c.init.center; }),

      enumeration("train_noise.kind", [](RunConfig& c) -> TrainNoiseKind& { return c.train.train_noise.kind; },
                  parse_train_noise_kind),
      dbl("train_noise.p_mean", [](RunConfig& c) -> double& { return c.train.train_noise.p_mean; }),
      dbl("train_noise.p_std", [](RunConfig& c) -> double& { return c.train.train_noise.p_std; }),
      dbl("train_noise.sigma_min", [](RunConfig& c) -> double& { return c.train.train_noise.sigma_min; }),
      dbl("train_noise.sigma_max", [](RunConfig& c) -> double& { return c.train.train_noise.sigma_max; }),
      dbl("train_noise.slope", [](RunConfig& c) -> double& { return c.train.train_noise.slope; }),
      dbl("train_noise.offset", [](RunConfig& c) -> double& { return c.train.train_noise.offset; }),

      enumeration("train.objective", [](RunConfig& c) -> train::Objective& { return c.train.objective; },
                  train::parse_objective),
      enumeration("train.weighting", [](RunConfig& c) -> WeightingKind& { return c.train.weighting.kind; },
                  parse_weighting_kind),
      dbl("train.sigma_data", [](RunConfig& c) -> double& { return c.train.sigma_data; }),
      dbl("train.lr", [](RunConfig& c) -> double& { return c.train.optimizer.lr; }),
      dbl("train.weight_decay", [](RunConfig& c) -> double& { return c.train.optimizer.weight_decay; }),
      dbl("train.ema_beta", [](RunConfig& c) -> double& { return c.train.ema_beta; }),
      dbl("train.cfg_dropout", [](RunConfig& c) -> double& { return c.train.cfg_dropout; }),
      integer<std::size_t>("train.steps", [](RunConfig& c) -> std::size_t& { return c.train.steps; }),
      integer<std::size_t>("train.batch", [](RunConfig& c) -> std::size_t& { return c.train.batch; }),
      integer<std::size_t>("train.log_every", [](RunConfig& c) -> std::size_t& { return c.train.log_every; }),
      integer<std::uint64_t>("train.seed", [](RunConfig& c) -> std::uint64_t& { return c.train.seed; }),
      size_list("train.hidden", [](RunConfig& c) -> std::vector<std::size_t>& { return c.train.hidden; }),
      enumeration("train.conditioning", [](RunConfig& c) -> Conditioning& { return c.train.conditioning; },
                  train::parse_conditioning),

      integer<std::size_t>("metrics.projections", [](RunConfig& c) -> std::size_t& { return c.metrics.projections; }),
      integer<std::size_t>("metrics.reference_samples",
                           [](RunConfig& c) -> std::size_t& { return c.metrics.reference_samples; }),

      text("outputs.dir", [](RunConfig& c) -> std::string& { return c.outputs.dir; }),
      text_list("outputs.formats", [](RunConfig& c) -> std::vector<std::string>& { return c.outputs.formats; }),
      text("outputs.run_id", [](RunConfig& c) -> std::string& { return c.outputs.run_id; }),

      integer<std::uint64_t>("seeds.seed", [](RunConfig& c) -> std::uint64_t& { return c.seed; }),
  };
  return table;
}

inline const KeyDef* find_key(std::string_view key) {
  for (const auto& k : keys())
    if (k.key == key) return &k;
  return nullptr;
}

inline void apply(RunConfig& cfg, const std::string& key, std::string_view value, std::size_t line) {
  const KeyDef* def = find_key(key);
  if (!def) throw ValidationError(key, line, "unknown key '" + key + "'");
  try {
    def->set(cfg, value);
  } catch (const BadValue& e) {
    throw ValidationError(key, line, key + ": " + e.msg);
  }
}

struct Line {
  std::size_t number;
  std::string key;
  std::string value;
};

inline std::vector<Line> split_lines(std::string_view text) {
  std::vector<Line> out;
  std::map<std::string, std::size_t> seen;
  std::size_t number = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    std::string line(text.substr(pos, end - pos));
    pos = end + 1;
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) {
      if (end == text.size()) break;
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("", number, "expected 'section.key = value'");
    std::string key = trim(std::string_view(line).substr(0, eq));
    std::string value = trim(std::string_view(line).substr(eq + 1));
    if (key.empty()) throw ParseError(key, number, "expected 'section.key = value'");
    if (auto [it, fresh] = seen.emplace(key, number); !fresh)
      throw ParseError(key, number, "duplicate key '" + key + "' (first set on line " + std::to_string(it->second) + ")");
    out.push_back({number, std::move(key), std::move(value)});
    if (end == text.size()) break;
  }
  return out;
}

}  // namespace config_detail

using config_detail::to_string;
using config_detail::parse_data_kind;
using config_detail::parse_model_kind;
using config_detail::parse_init_kind;

inline OracleGMM make_data_gmm(const DataSpec& d) {
  if (!d.kind) throw ValidationError("data.kind", 0, "missing required key data.kind");
  switch (*d.kind) {
    case DataKind::benchmark: return benchmark_gmm();
    case DataKind::two_component: return two_component_gmm();
    case DataKind::two_peak: return two_peak_dirac();
    case DataKind::single_gaussian: return single_gaussian(d.mean, d.std);
    case DataKind::dirac: return dirac(d.mean);
  }
  throw ValidationError("data.kind", 0, "unknown data kind");
}

inline void validate(const RunConfig& c) {
  auto fail = [](const char* key, const std::string& msg) { throw ValidationError(key, 0, std::string(key) + ": " + msg); };
  if (!c.data.kind) fail("data.kind", "missing required key");
  if ((*c.data.kind == DataKind::single_gaussian || *c.data.kind == DataKind::dirac) && c.data.mean.empty())
    fail("data.mean", "must not be empty");
  if (!(c.data.std >= 0.0)) fail("data.std", "must be >= 0");
  const std::size_t dim = make_data_gmm(c.data).dim();
  if (c.data.sigma_obs && !(*c.data.sigma_obs > 0.0)) fail("data.sigma_obs", "must be > 0");
  if (!c.data.observation.empty()) {
    if (!c.data.sigma_obs) fail("data.observation", "requires data.sigma_obs");
    if (c.data.observation.size() != dim) fail("data.observation", "length must match the data dimension");
  }
  if (c.model.kind == ModelKind::mlp && c.model.path.empty()) fail("model.path", "required for model.kind = mlp");
  if (c.model.parameterization == Parameterization::flow && c.model.frame != FrameKind::rf)
    fail("model.parameterization", "flow outputs require model.frame = rf");
  if (c.sampler.steps < 1) fail("sampler.steps", "must be >= 1");
  if (c.sampler.samples < 1) fail("sampler.samples", "must be >= 1");
  if (!(c.sampler.sigma_min > 0.0) || !(c.sampler.sigma_max > c.sampler.sigma_min))
    fail("sampler.sigma_max", "need 0 < sigma_min < sigma_max");
  if (!(c.sampler.rho > 0.0)) fail("sampler.rho", "must be > 0");
  if (c.sampler.kind == SamplerKind::dpmpp && (c.sampler.order < 1 || c.sampler.order > 3))
    fail("sampler.order", "dpmpp supports orders 1 to 3");
  if (c.sampler.kind == SamplerKind::unipc && (c.sampler.order < 2 || c.sampler.order > 4))
    fail("sampler.order", "unipc supports orders 2 to 4");
  try {
    c.guidance.spec.validate();
  } catch (const Error& e) {
    fail("guidance.scale", e.what());
  }
  const std::size_t components = make_data_gmm(c.data).size();
  if (c.guidance.label && *c.guidance.label >= components) fail("guidance.label", "out of range for the data mixture");
  if (c.guidance.spec.mode != GuidanceMode::none && !c.guidance.label) fail("guidance.label", "required when guidance is enabled");
  if (c.guidance.spec.mode == GuidanceMode::classifier && c.model.kind != ModelKind::oracle)
    fail("guidance.mode", "classifier guidance needs the analytic classifier (model.kind = oracle)");
  if (c.init.kind == InitKind::warm_start) {
    if (!(c.init.sigma_start > c.sampler.sigma_min)) fail("init.sigma_start", "must exceed sampler.sigma_min");
    if (c.init.center.empty() && c.data.observation.empty()) fail("init.center", "warm start needs init.center or data.observation");
    if (!c.init.center.empty() && c.init.center.size() != dim) fail("init.center", "length must match the data dimension");
  }
  if (c.metrics.projections < 1) fail("metrics.projections", "must be >= 1");
  for (const auto& f : c.outputs.formats)
    if (f != "csv" && f != "json" && f != "svg" && f != "samples") fail("outputs.formats", "unknown format '" + f + "'");
  if (c.model.kind == ModelKind::train) {
    try {
      c.train.validate();
      train::MlpSpec s = train::model_spec_for(c.train, train::TrainData{make_data_gmm(c.data), c.data.sigma_obs});
      s.validate();
    } catch (const Error& e) {
      fail("train.objective", e.what());
    }
  }
}

inline RunConfig parse_config(std::string_view text) {
  RunConfig cfg;
  for (const auto& l : config_detail::split_lines(text)) {
    if (l.key.rfind("grid.", 0) == 0)
      throw ValidationError(l.key, l.number, "grid axes are only allowed in grid files: '" + l.key + "'");
    config_detail::apply(cfg, l.key, l.value, l.number);
  }
  validate(cfg);
  return cfg;
}

/// Canonical text: every key in table order, unset optionals omitted.
inline std::string serialize_config(const RunConfig& cfg) {
  std::string out;
  std::string section;
  for (const auto& k : config_detail::keys()) {
    const auto v = k.get(cfg);
    if (!v) continue;
    const std::string sec = k.key.substr(0, k.key.find('.'));
    if (!section.empty() && sec != section) out += '\n';
    section = sec;
    out += k.key + " = " + *v + '\n';
  }
  return out;
}

inline bool operator==(const RunConfig& a, const RunConfig& b) { return serialize_config(a) == serialize_config(b); }

/// Applies a single `section.key = value` override and revalidates.
inline RunConfig with_override(RunConfig cfg, const std::string& key, std::string_view value) {
  config_detail::apply(cfg, key, value, 0);
  validate(cfg);
  return cfg;
}

inline GridSpec parse_grid(std::string_view text) {
  GridSpec spec;
  std::vector<config_detail::Line> axes;
  for (const auto& l : config_detail::split_lines(text)) {
    if (l.key == "grid.max_cells") {
      try {
        spec.max_cells = config_detail::parse_int<std::size_t>(l.value);
      } catch (const config_detail::BadValue& e) {
        throw ValidationError(l.key, l.number, l.key + ": " + e.msg);
      }
    } else if (l.key.rfind("grid.", 0) == 0) {
      axes.push_back(l);
    } else {
      config_detail::apply(spec.base, l.key, l.value, l.number);
    }
  }
  validate(spec.base);
  for (const auto& l : axes) {
    GridAxis axis{l.key.substr(5), {}};
    if (!config_detail::find_key(axis.key)) throw ValidationError(axis.key, l.number, "unknown grid key '" + axis.key + "'");
    try {
      axis.values = config_detail::parse_list(l.value);
    } catch (const config_detail::BadValue& e) {
      throw ParseError(l.key, l.number, l.key + ": " + e.msg);
    }
    if (axis.values.empty()) throw ValidationError(l.key, l.number, l.key + ": empty value list");
    for (const auto& v : axis.values) {
      try {
        with_override(spec.base, axis.key, v);
      } catch (const ValidationError& e) {
        throw ValidationError(axis.key, l.number, e.what());
      }
    }
    spec.axes.push_back(std::move(axis));
  }
  return spec;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace scoreflow
