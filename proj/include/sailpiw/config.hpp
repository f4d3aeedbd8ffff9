#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "sailpiw/synth.hpp"
#include "sailpiw/trainer.hpp"

namespace sailpiw {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& message)
      : std::runtime_error(message), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

struct ExperimentConfig {
  // data
  std::string source = "file";  // file | synth
  std::string dataset_path;
  std::size_t min_degree_user = 10;
  std::size_t min_degree_item = 10;
  double base_frac = 0.6;
  std::size_t n_inc = 4;
  // training, distillation
  TrainConfig train;
  // run
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::string out_dir = "out";
  std::vector<std::size_t> ksweep{5, 10, 15, 20, 25};
  // synthetic generator
  SynthConfig synth;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

// Smaller model and faster schedule used by the synthetic-drift runs.
ExperimentConfig synth_preset();

struct ConfigKey {
  std::string section;
  std::string name;
  std::string default_value;
  std::string provenance;  // "reference setting" or "engineering default"
  std::string help;
};
// Every key in file order, with defaults taken from `base`.
std::vector<ConfigKey> config_keys(const ExperimentConfig& base = {});

// Grammar: `key = value` lines, `[section]` headers, `#` comments. Keys may
// also be written as `section.key` or, when unambiguous, bare. Unknown keys and
// malformed values throw ConfigError naming the key.
void apply_config_text(ExperimentConfig& config, const std::string& text);
void set_config_value(ExperimentConfig& config, const std::string& key, const std::string& value);
std::string get_config_value(const ExperimentConfig& config, const std::string& key);

ExperimentConfig parse_config(const std::string& text, const ExperimentConfig& base = {});
ExperimentConfig load_config(const std::filesystem::path& path, const ExperimentConfig& base = {});

// Writes every key; parse_config(serialize_config(c)) == c.
std::string serialize_config(const ExperimentConfig& config);

// Cross-field checks, including the dataset path for file sources.
void validate_config(const ExperimentConfig& config);

// Help block listing every key with its default and provenance.
std::string config_help(const ExperimentConfig& base = {});

}  // namespace sailpiw
