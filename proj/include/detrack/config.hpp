// SPDX-License-Identifier: Apache-2.0
//
// Flat, namespaced, typed configuration. Text format: one `key=value` per
// line, `#` starts a comment. Precedence: defaults < file < overrides.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "detrack/compound_memory.hpp"
#include "detrack/data_pipeline.hpp"
#include "detrack/model.hpp"
#include "detrack/noise_process.hpp"

namespace detrack {

class Config {
 public:
  using Value = std::variant<std::int64_t, double, bool, std::string>;

  struct KeySpec {
    std::string key;
    Value default_value;
    std::string doc;
    std::vector<std::string> choices;  // for enumerated string keys
  };

  /// Every known key with its default.
  static const std::vector<KeySpec>& registry();
  static Config defaults();

  /// Parses `text` according to the key's type. Throws std::invalid_argument
  /// naming the key on unknown keys or type mismatches.
  void set(const std::string& key, const std::string& text);
  void merge_text(const std::string& text, const std::string& origin = "<inline>");
  void merge_file(const std::filesystem::path& path);

  std::int64_t get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  const std::string& get_string(const std::string& key) const;

  /// Sorted `key=value` lines; feeding it back through merge_text reproduces
  /// the same configuration.
  std::string echo() const;

 private:
  const Value& at(const std::string& key) const;
  std::map<std::string, Value> values_;
};

std::string format_value(const Config::Value& v);

/// defaults < file (if any) < `key=value` overrides.
Config parse_config(const std::optional<std::filesystem::path>& file,
                    const std::vector<std::string>& overrides = {});

ModelConfig model_config(const Config& c);
MemoryConfig memory_config(const Config& c);
SampleOptions sample_options(const Config& c);
NoiseSchedule noise_schedule(const Config& c);

}  // namespace detrack
