#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "spqi/synth.hpp"
#include "spqi/training.hpp"

namespace spqi {

/// Flat `key = value` configuration (UTF-8, '#' comments). Every key has a
/// documented default; unknown keys are rejected so typos fail loudly. CLI
/// flags override file values; the effective config is echoed next to every
/// output for reproducibility.
class RunConfig {
 public:
  RunConfig();  // defaults

  static RunConfig from_file(const std::string& path);

  /// Parses one "key = value" line into the config. Throws ContractError on
  /// unknown keys or malformed lines.
  void apply_line(const std::string& line, const std::string& where);
  void set(const std::string& key, const std::string& value);

  const std::string& get(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  std::uint64_t get_uint(const std::string& key) const;

  const std::map<std::string, std::string>& values() const { return values_; }

  /// Writes the effective config, sorted by key.
  void write(const std::string& path) const;
  std::string to_string() const;

  SynthConfig synth_config() const;
  TrainConfig train_config() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace spqi
