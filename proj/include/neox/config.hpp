#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "neox/model.hpp"
#include "neox/trainer.hpp"

// Flat `key value` run configuration using upstream training-config key names.
namespace neox::config {

enum class Provenance { default_value, file, flag, env };
std::string_view to_string(Provenance p);

enum class ValueType { count, integer, fraction, number, flag, string, list };
std::string_view to_string(ValueType t);

struct KeySpec {
  std::string key;
  ValueType type;
  std::string default_value;
  bool consumed;  // false for keys kept only for fidelity with upstream configs
};

// Every recognized key with its type and default.
const std::vector<KeySpec>& known_keys();

struct Entry {
  std::string value;
  Provenance source = Provenance::default_value;
  bool operator==(const Entry&) const = default;
};

class RunConfig {
 public:
  RunConfig();  // all defaults

  void set(const std::string& key, const std::string& value, Provenance source);
  bool has(const std::string& key) const { return entries_.count(key) != 0; }
  const Entry& entry(const std::string& key) const;
  Provenance provenance(const std::string& key) const { return entry(key).source; }
  const std::map<std::string, Entry>& entries() const { return entries_; }
  const std::vector<std::string>& warnings() const { return warnings_; }

  std::size_t get_count(const std::string& key) const;
  long long get_integer(const std::string& key) const;
  double get_number(const std::string& key) const;
  bool get_flag(const std::string& key) const;
  const std::string& get_string(const std::string& key) const;
  std::vector<double> get_list(const std::string& key) const;

  bool operator==(const RunConfig&) const = default;

 private:
  std::map<std::string, Entry> entries_;
  std::vector<std::string> warnings_;
};

using Overrides = std::vector<std::pair<std::string, std::string>>;

// `key value`, `key: value` or `key = value` per line; `#` starts a comment.
// Dotted keys are kept as written. Known keys are type-checked; unknown keys
// are kept and produce one warning each.
RunConfig parse_config_text(const std::string& text, const Overrides& flags = {});
RunConfig parse_config(const std::filesystem::path& path, const Overrides& flags = {});

// Every non-default entry as `key value` lines, sorted by key.
std::string emit_config(const RunConfig& cfg);

// Typed views. Both validate the consumed keys together.
model::ModelConfig model_config(const RunConfig& cfg);
train::TrainConfig train_config(const RunConfig& cfg);

}  // namespace neox::config
