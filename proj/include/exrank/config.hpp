#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "corpus.hpp"

namespace exrank {

enum class AblationMode { full, no_alternating, no_retriever, no_example, no_instruction, frozen_lm };

inline std::string_view to_string(AblationMode m) {
  switch (m) {
    case AblationMode::full: return "full";
    case AblationMode::no_alternating: return "no_alternating";
    case AblationMode::no_retriever: return "no_retriever";
    case AblationMode::no_example: return "no_example";
    case AblationMode::no_instruction: return "no_instruction";
    case AblationMode::frozen_lm: return "frozen_lm";
  }
  return "full";
}

inline AblationMode mode_from_string(std::string_view s) {
  for (auto m : {AblationMode::full, AblationMode::no_alternating, AblationMode::no_retriever, AblationMode::no_example,
                 AblationMode::no_instruction, AblationMode::frozen_lm})
    if (to_string(m) == s) return m;
  throw std::invalid_argument("unknown mode: " + std::string(s));
}

/// Run configuration. Defaults follow the published training setup; the
/// desk() preset sizes and rates training for from-scratch toy models.
struct Config {
  Task task = Task::aspe;
  std::size_t k = 4;                 // examples at inference
  std::size_t m = 50;                // candidates scored per query
  double ratio = 0.1;                // labeling subset ratio
  std::size_t batch_size = 2;
  double lr_retriever = 5e-5;
  double lr_lm = 5e-5;
  double weight_decay = 0.01;
  std::size_t epochs_retriever = 4;
  std::size_t epochs_lm = 2;
  std::size_t warmup_epochs = 1;     // zero-example scorer warm-up at step 0
  std::size_t grad_accum = 2;
  std::size_t t = 3;                 // alternating steps
  std::size_t dim = 64;              // scorer width
  std::size_t dim_retriever = 64;
  std::size_t max_len = 128;
  std::size_t gen_len = 32;
  std::size_t k_max = 7;
  std::uint64_t seed = 0;
  bool reinit_per_step = false;
  AblationMode mode = AblationMode::full;
  std::string data_dir = "data";
  std::string out_dir = "out";
  std::string template_dir;
  std::string scorer_ckpt;
  std::string retriever_ckpt;

  static Config desk() {
    Config c;
    c.ratio = 0.5;
    c.m = 20;
    c.lr_retriever = 1e-2;
    c.lr_lm = 2e-2;
    c.epochs_retriever = 8;
    c.dim = 32;
    c.dim_retriever = 64;
    return c;
  }

  void validate() const {
    if (!(ratio > 0.0 && ratio <= 1.0)) throw std::invalid_argument("ratio must be in (0, 1]");
    if (batch_size == 0) throw std::invalid_argument("batch-size must be at least 1");
    if (m == 0) throw std::invalid_argument("m must be at least 1");
    if (dim == 0 || dim_retriever == 0) throw std::invalid_argument("widths must be positive");
    if (max_len == 0) throw std::invalid_argument("max-len must be positive");
    if (grad_accum == 0) throw std::invalid_argument("grad-accum must be at least 1");
    if (lr_retriever < 0.0 || lr_lm < 0.0) throw std::invalid_argument("learning rates must be non-negative");
  }
};

namespace detail {

template <class T>
T parse_number(std::string_view key, std::string_view v) {
  T out{};
  if constexpr (std::is_floating_point_v<T>) {
    try {
      std::size_t used = 0;
      out = static_cast<T>(std::stod(std::string(v), &used));
      if (used != v.size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw std::invalid_argument("invalid value for " + std::string(key) + ": '" + std::string(v) + "'");
    }
  } else {
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size())
      throw std::invalid_argument("invalid value for " + std::string(key) + ": '" + std::string(v) + "'");
  }
  return out;
}

inline bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "off" || v == "no") return false;
  throw std::invalid_argument("invalid boolean for " + std::string(key) + ": '" + std::string(v) + "'");
}

template <class T>
std::string format_number(T v) {
  if constexpr (std::is_floating_point_v<T>) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  } else {
    return std::to_string(v);
  }
}

}  // namespace detail

struct ConfigKey {
  std::string name;
  std::string help;
  std::function<void(Config&, std::string_view)> set;
  std::function<std::string(const Config&)> get;
};

/// Every configurable key. CLI flags are `--<name>`; config files use the
/// same names.
inline const std::vector<ConfigKey>& config_keys() {
  using detail::format_number;
  using detail::parse_number;
#define EXRANK_NUM(key, field, help)                                                                       \
  ConfigKey {                                                                                              \
    key, help, [](Config& c, std::string_view v) { c.field = parse_number<decltype(c.field)>(key, v); },   \
        [](const Config& c) { return format_number(c.field); }                                             \
  }
#define EXRANK_STR(key, field, help)                                                        \
  ConfigKey {                                                                               \
    key, help, [](Config& c, std::string_view v) { c.field = std::string(v); },             \
        [](const Config& c) { return c.field; }                                             \
  }
  static const std::vector<ConfigKey> keys = {
      {"task", "ate | atsc | aspe", [](Config& c, std::string_view v) { c.task = task_from_string(v); },
       [](const Config& c) { return std::string(to_string(c.task)); }},
      EXRANK_NUM("k", k, "examples per prompt at inference"),
      EXRANK_NUM("m", m, "candidates scored per query"),
      EXRANK_NUM("ratio", ratio, "fraction of the training set labelled for the retriever"),
      EXRANK_NUM("batch-size", batch_size, "contrastive batch size B"),
      {"lr", "learning rate for both models",
       [](Config& c, std::string_view v) { c.lr_retriever = c.lr_lm = parse_number<double>("lr", v); },
       [](const Config& c) { return c.lr_retriever == c.lr_lm ? format_number(c.lr_lm) : std::string(); }},
      EXRANK_NUM("lr-retriever", lr_retriever, "retriever learning rate"),
      EXRANK_NUM("lr-lm", lr_lm, "scorer learning rate"),
      EXRANK_NUM("weight-decay", weight_decay, "AdamW decoupled weight decay"),
      EXRANK_NUM("epochs-retriever", epochs_retriever, "retriever epochs per step"),
      EXRANK_NUM("epochs-lm", epochs_lm, "scorer epochs per step"),
      EXRANK_NUM("warmup-epochs", warmup_epochs, "zero-example scorer warm-up epochs (0 disables)"),
      EXRANK_NUM("grad-accum", grad_accum, "gradient accumulation steps for scorer fine-tuning"),
      EXRANK_NUM("t", t, "alternating training steps"),
      EXRANK_NUM("dim", dim, "scorer embedding width"),
      EXRANK_NUM("dim-retriever", dim_retriever, "retriever embedding width"),
      EXRANK_NUM("max-len", max_len, "maximum sequence length in tokens"),
      EXRANK_NUM("gen-len", gen_len, "maximum generated tokens"),
      EXRANK_NUM("k-max", k_max, "largest k in a sweep"),
      EXRANK_NUM("seed", seed, "root random seed"),
      {"reinit-per-step", "restart both models from step 0 at every step",
       [](Config& c, std::string_view v) { c.reinit_per_step = detail::parse_bool("reinit-per-step", v); },
       [](const Config& c) { return std::string(c.reinit_per_step ? "true" : "false"); }},
      {"mode", "full | no_alternating | no_retriever | no_example | no_instruction | frozen_lm",
       [](Config& c, std::string_view v) { c.mode = mode_from_string(v); },
       [](const Config& c) { return std::string(to_string(c.mode)); }},
      EXRANK_STR("data", data_dir, "dataset directory"),
      EXRANK_STR("out", out_dir, "output directory"),
      EXRANK_STR("template-dir", template_dir, "directory of template assets"),
      EXRANK_STR("scorer", scorer_ckpt, "scorer checkpoint"),
      EXRANK_STR("retriever", retriever_ckpt, "retriever checkpoint"),
  };
#undef EXRANK_NUM
#undef EXRANK_STR
  return keys;
}

inline void set_config_value(Config& cfg, std::string_view key, std::string_view value) {
  for (const auto& k : config_keys()) {
    if (k.name == key) {
      k.set(cfg, value);
      return;
    }
  }
  throw std::invalid_argument("unknown config key: " + std::string(key));
}

/// All keys with their current values; the `lr` alias is omitted because
/// the two rates are recorded separately.
inline std::map<std::string, std::string> config_values(const Config& cfg) {
  std::map<std::string, std::string> out;
  for (const auto& k : config_keys())
    if (k.name != "lr") out[k.name] = k.get(cfg);
  return out;
}

/// Flat `key = value` text; `#` comments and blank lines ignored.
inline void read_config_text(Config& cfg, std::istream& in) {
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    auto s = trim(line);
    if (s.empty() || s[0] == '#') continue;
    auto eq = s.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(n) + ": expected key = value");
    set_config_value(cfg, trim(std::string_view(s).substr(0, eq)), trim(std::string_view(s).substr(eq + 1)));
  }
}

inline void write_config_text(const Config& cfg, std::ostream& out) {
  for (const auto& [k, v] : config_values(cfg)) out << k << " = " << v << '\n';
}

/// Reads a flat config file, or the "config" object of a run manifest when
/// the file is JSON.
inline void load_config_file(Config& cfg, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file " + path.string());
  if (path.extension() == ".json") {
    auto j = nlohmann::json::parse(in);
    const auto& obj = j.contains("config") ? j["config"] : j;
    for (auto it = obj.begin(); it != obj.end(); ++it)
      set_config_value(cfg, it.key(), it.value().is_string() ? it.value().get<std::string>() : it.value().dump());
    return;
  }
  read_config_text(cfg, in);
}

}  // namespace exrank
