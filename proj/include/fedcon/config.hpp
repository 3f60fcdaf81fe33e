#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "fedcon/augment.hpp"
#include "fedcon/dataset.hpp"
#include "fedcon/optimizer.hpp"
#include "fedcon/split.hpp"

namespace fedcon {

class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Every knob of one experiment. Keys in the text format are dotted paths
/// (`split.gamma`, `train.BS_L`, ...); see `config_keys()`.
struct ExperimentConfig {
  DatasetName dataset = DatasetName::mnist;
  std::string data_root = "data";
  std::size_t train_limit = 0;  // 0 keeps the full split
  std::size_t test_limit = 0;

  Regime regime = Regime::iid;
  double gamma = 0.01;
  double beta = 0.0;
  std::size_t K = 100;
  std::size_t classes_per_client = 2;
  bool stratify_labeled = true;

  std::size_t B = 10;
  std::optional<double> client_fraction;  // r; when set, B = round(r * K)
  std::size_t R_G = 200;
  bool weighted_average = false;
  std::size_t workers = 1;

  std::size_t R_L = 1;
  std::size_t BS_L = 10;
  std::size_t BS_U = 50;
  std::size_t BS_test = 128;
  double tau = 0.999;
  double mu = 0.999;
  OptimizerScheme optimizer = OptimizerScheme::sgd_momentum;
  double lr = 0.01;
  double momentum = 0.9;
  double client_lr = 0.01;

  bool dropout = true;
  AugmentPolicy augment;
  bool normalize_inputs = true;

  bool consistency = true;
  bool consistency_on_labeled = true;
  bool persist_server_target = false;
  bool persist_client_target = false;
  bool normalize_projection = false;
  bool eval_target_net = false;

  std::uint64_t seed = 0;
  std::string out = "runs/default";
  std::size_t eval_every = 1;
  std::size_t checkpoint_every = 10;

  /// Keys given explicitly (file or override); the rest follow derived defaults.
  std::set<std::string, std::less<>> explicit_keys;

  bool is_explicit(std::string_view key) const { return explicit_keys.find(key) != explicit_keys.end(); }
};

namespace cfg {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string format_real(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

inline double parse_real(std::string_view key, std::string_view s) {
  double v = 0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size() || !std::isfinite(v))
    throw ConfigError("key '" + std::string(key) + "': expected a real number, got '" + std::string(s) + "'");
  return v;
}

inline std::uint64_t parse_count(std::string_view key, std::string_view s) {
  std::uint64_t v = 0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size())
    throw ConfigError("key '" + std::string(key) + "': expected a non-negative integer, got '" + std::string(s) + "'");
  return v;
}

inline bool parse_bool(std::string_view key, std::string_view s) {
  if (s == "true" || s == "1" || s == "on" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "off" || s == "no") return false;
  throw ConfigError("key '" + std::string(key) + "': expected true/false, got '" + std::string(s) + "'");
}

struct KeySpec {
  std::string name;
  std::function<void(ExperimentConfig&, std::string_view)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <typename F>
KeySpec real(std::string name, F field) {
  return {name, [=](ExperimentConfig& c, std::string_view v) { c.*field = parse_real(name, v); },
          [=](const ExperimentConfig& c) { return format_real(c.*field); }};
}
template <typename F>
KeySpec count(std::string name, F field) {
  return {name, [=](ExperimentConfig& c, std::string_view v) { c.*field = parse_count(name, v); },
          [=](const ExperimentConfig& c) { return std::to_string(c.*field); }};
}
template <typename F>
KeySpec flag(std::string name, F field) {
  return {name, [=](ExperimentConfig& c, std::string_view v) { c.*field = parse_bool(name, v); },
          [=](const ExperimentConfig& c) { return std::string(c.*field ? "true" : "false"); }};
}
template <typename F>
KeySpec aug_real(std::string name, F field) {
  return {name, [=](ExperimentConfig& c, std::string_view v) { c.augment.*field = parse_real(name, v); },
          [=](const ExperimentConfig& c) { return format_real(c.augment.*field); }};
}

}  // namespace cfg

/// The key registry, in echo order.
inline const std::vector<cfg::KeySpec>& config_keys() {
  using C = ExperimentConfig;
  using namespace cfg;
  static const std::vector<KeySpec> keys = {
      {"dataset", [](C& c, std::string_view v) { c.dataset = parse_dataset_name(v); },
       [](const C& c) { return std::string(dataset_name(c.dataset)); }},
      {"data.root", [](C& c, std::string_view v) { c.data_root = std::string(v); },
       [](const C& c) { return c.data_root; }},
      count("data.train_limit", &C::train_limit),
      count("data.test_limit", &C::test_limit),

      {"split.regime",
       [](C& c, std::string_view v) {
         if (v == "iid") c.regime = Regime::iid;
         else if (v == "noniid" || v == "non-iid") c.regime = Regime::noniid;
         else throw ConfigError("key 'split.regime': expected iid or noniid, got '" + std::string(v) + "'");
       },
       [](const C& c) { return std::string(c.regime == Regime::iid ? "iid" : "noniid"); }},
      real("split.gamma", &C::gamma),
      real("split.beta", &C::beta),
      count("split.K", &C::K),
      count("split.classes_per_client", &C::classes_per_client),
      flag("split.stratify_labeled", &C::stratify_labeled),

      count("fed.B", &C::B),
      {"fed.r",
       [](C& c, std::string_view v) {
         if (v.empty()) c.client_fraction.reset();
         else c.client_fraction = parse_real("fed.r", v);
       },
       [](const C& c) { return c.client_fraction ? format_real(*c.client_fraction) : std::string(); }},
      count("fed.R_G", &C::R_G),
      flag("fed.weighted_average", &C::weighted_average),
      count("fed.workers", &C::workers),

      count("train.R_L", &C::R_L),
      count("train.BS_L", &C::BS_L),
      count("train.BS_U", &C::BS_U),
      count("train.BS_test", &C::BS_test),
      real("train.tau", &C::tau),
      real("train.mu", &C::mu),
      {"train.optimizer",
       [](C& c, std::string_view v) {
         if (v == "sgd") c.optimizer = OptimizerScheme::sgd;
         else if (v == "sgd_momentum") c.optimizer = OptimizerScheme::sgd_momentum;
         else throw ConfigError("key 'train.optimizer': expected sgd or sgd_momentum, got '" + std::string(v) + "'");
       },
       [](const C& c) { return std::string(scheme_name(c.optimizer)); }},
      real("train.lr", &C::lr),
      real("train.momentum", &C::momentum),
      real("train.client_lr", &C::client_lr),

      flag("model.dropout", &C::dropout),

      {"aug.policy", [](C& c, std::string_view v) { c.augment.kind = parse_augment_kind(v); },
       [](const C& c) { return std::string(augment_kind_name(c.augment.kind)); }},
      aug_real("aug.crop_scale_min", &AugmentPolicy::crop_scale_min),
      aug_real("aug.crop_scale_max", &AugmentPolicy::crop_scale_max),
      aug_real("aug.flip_probability", &AugmentPolicy::flip_probability),
      aug_real("aug.brightness", &AugmentPolicy::brightness),
      aug_real("aug.contrast", &AugmentPolicy::contrast),
      aug_real("aug.saturation", &AugmentPolicy::saturation),
      aug_real("aug.hue", &AugmentPolicy::hue),
      aug_real("aug.grayscale_probability", &AugmentPolicy::grayscale_probability),
      aug_real("aug.blur_probability", &AugmentPolicy::blur_probability),
      aug_real("aug.blur_sigma_min", &AugmentPolicy::blur_sigma_min),
      aug_real("aug.blur_sigma_max", &AugmentPolicy::blur_sigma_max),
      aug_real("aug.solarize_probability", &AugmentPolicy::solarize_probability),
      aug_real("aug.solarize_threshold", &AugmentPolicy::solarize_threshold),
      {"aug.strong_ops", [](C& c, std::string_view v) { c.augment.strong_ops = parse_count("aug.strong_ops", v); },
       [](const C& c) { return std::to_string(c.augment.strong_ops); }},
      aug_real("aug.cutout_fraction", &AugmentPolicy::cutout_fraction),
      flag("aug.normalize", &C::normalize_inputs),

      flag("flags.consistency", &C::consistency),
      flag("flags.consistency_on_labeled", &C::consistency_on_labeled),
      flag("flags.persist_server_target", &C::persist_server_target),
      flag("flags.persist_client_target", &C::persist_client_target),
      flag("flags.normalize_projection", &C::normalize_projection),
      flag("flags.eval_target_net", &C::eval_target_net),

      {"run.seed", [](C& c, std::string_view v) { c.seed = parse_count("run.seed", v); },
       [](const C& c) { return std::to_string(c.seed); }},
      {"run.out", [](C& c, std::string_view v) { c.out = std::string(v); }, [](const C& c) { return c.out; }},
      count("run.eval_every", &C::eval_every),
      count("run.checkpoint_every", &C::checkpoint_every),
  };
  return keys;
}

inline std::string valid_keys_list() {
  std::string out;
  for (const auto& k : config_keys()) out += (out.empty() ? "" : ", ") + k.name;
  return out;
}

/// Maps a key, a short alias (gamma, tau, E, r, BS_L, ...) or a unique dotted
/// suffix to its canonical name.
inline std::string resolve_key(std::string_view name) {
  static const std::vector<std::pair<std::string_view, std::string_view>> aliases = {
      {"E", "train.R_L"}, {"r", "fed.r"}, {"lr", "train.lr"}, {"seed", "run.seed"}, {"out", "run.out"}};
  for (const auto& [alias, key] : aliases)
    if (name == alias) return std::string(key);
  std::string match;
  for (const auto& k : config_keys()) {
    if (k.name == name) return k.name;
    const std::string_view kn = k.name;
    if (kn.size() > name.size() && kn.ends_with(name) && kn[kn.size() - name.size() - 1] == '.') {
      if (!match.empty()) throw ConfigError("ambiguous key '" + std::string(name) + "' (" + match + ", " + k.name + ")");
      match = k.name;
    }
  }
  if (match.empty()) throw ConfigError("unknown key '" + std::string(name) + "'; valid keys: " + valid_keys_list());
  return match;
}

/// Sets one key and marks it explicit. Call `finalize` afterwards.
inline void set_key(ExperimentConfig& c, std::string_view name, std::string_view value) {
  const std::string key = resolve_key(cfg::trim(name));
  for (const auto& k : config_keys()) {
    if (k.name != key) continue;
    try {
      k.set(c, cfg::trim(value));
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError("key '" + key + "': " + e.what());
    }
    c.explicit_keys.insert(key);
    return;
  }
}

/// Applies one `key=value` override string.
inline void apply_override(ExperimentConfig& c, std::string_view kv) {
  const auto eq = kv.find('=');
  if (eq == std::string_view::npos) throw ConfigError("override '" + std::string(kv) + "' is not of the form key=value");
  set_key(c, kv.substr(0, eq), kv.substr(eq + 1));
}

/// Fills derived defaults for keys that were not set explicitly, then validates.
inline void finalize(ExperimentConfig& c) {
  const bool colour = c.dataset != DatasetName::mnist;
  if (!c.is_explicit("fed.R_G")) c.R_G = c.dataset == DatasetName::svhn ? 150 : 200;
  if (!c.is_explicit("train.BS_U")) c.BS_U = 5 * c.BS_L;
  if (!c.is_explicit("train.lr")) c.lr = colour ? 0.03 : 0.01;
  if (!c.is_explicit("train.client_lr")) c.client_lr = 0.01 * c.lr;
  if (!c.is_explicit("aug.flip_probability")) c.augment.flip_probability = c.dataset == DatasetName::cifar10 ? 0.5 : 0.0;
  if (c.client_fraction) {
    const auto derived = std::size_t(std::max(1.0, std::round(*c.client_fraction * double(c.K))));
    if (c.is_explicit("fed.B") && c.is_explicit("fed.r") && derived != c.B)
      throw ConfigError("fed.B=" + std::to_string(c.B) + " contradicts fed.r=" + cfg::format_real(*c.client_fraction));
    c.B = derived;
  }

  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  require(c.gamma > 0.0 && c.gamma <= 1.0, "split.gamma must lie in (0, 1]");
  require(c.beta >= 0.0 && c.beta < 1.0, "split.beta must lie in [0, 1)");
  require(c.gamma + c.beta <= 1.0, "split.gamma + split.beta must not exceed 1");
  require(c.K >= 1, "split.K must be at least 1");
  require(c.B >= 1 && c.B <= c.K, "fed.B must lie in [1, split.K]");
  require(!c.client_fraction || (*c.client_fraction > 0.0 && *c.client_fraction <= 1.0), "fed.r must lie in (0, 1]");
  require(c.classes_per_client >= 1 && c.classes_per_client <= 10, "split.classes_per_client must lie in [1, 10]");
  require(c.R_L >= 1, "train.R_L must be at least 1");
  require(c.BS_L >= 1 && c.BS_U >= 1 && c.BS_test >= 1, "batch sizes must be at least 1");
  require(c.tau >= 0.0 && c.tau <= 1.0, "train.tau must lie in [0, 1]");
  require(c.mu >= 0.0 && c.mu <= 1.0, "train.mu must lie in [0, 1]");
  require(c.lr >= 0.0 && c.client_lr >= 0.0, "learning rates must be non-negative");
  require(c.momentum >= 0.0 && c.momentum < 1.0, "train.momentum must lie in [0, 1)");
  require(c.eval_every >= 1, "run.eval_every must be at least 1");
  require(c.workers >= 1, "fed.workers must be at least 1");
  try {
    c.augment.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("augmentation: ") + e.what());
  }
}

/// Parses `key = value` lines; `#` starts a comment. Overrides apply on top.
inline ExperimentConfig parse_config(std::string_view text, const std::vector<std::string>& overrides = {}) {
  ExperimentConfig c;
  std::istringstream in{std::string(text)};
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = cfg::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    try {
      set_key(c, t.substr(0, eq), t.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  for (const auto& o : overrides) apply_override(c, o);
  finalize(c);
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), overrides);
}

/// Full resolved configuration in the same text format; parsing it back yields
/// an identical configuration.
inline std::string echo_config(const ExperimentConfig& c) {
  std::string out;
  for (const auto& k : config_keys()) {
    const std::string v = k.get(c);
    if (k.name == "fed.r" && v.empty()) continue;
    out += k.name + " = " + v + "\n";
  }
  return out;
}

inline Normalization dataset_normalization(DatasetName d) {
  switch (d) {
    case DatasetName::mnist: return {{0.1307f}, {0.3081f}};
    case DatasetName::cifar10: return {{0.4914f, 0.4822f, 0.4465f}, {0.2470f, 0.2435f, 0.2616f}};
    case DatasetName::svhn: return {{0.4377f, 0.4438f, 0.4728f}, {0.1980f, 0.2010f, 0.1970f}};
  }
  return {};
}

}  // namespace fedcon
