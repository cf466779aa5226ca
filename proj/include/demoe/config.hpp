#pragma once

#include "demoe/blending.hpp"
#include "demoe/corpus.hpp"
#include "demoe/io.hpp"
#include "demoe/evaluation.hpp"
#include "demoe/model.hpp"
#include "demoe/synthesis.hpp"
#include "demoe/training.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace demoe {

/// Named bundle of rating scale, demographic category names and tuned
/// hyperparameters for one dataset.
struct DatasetPreset {
  std::string dataset;
  RatingScale scale;
  std::vector<std::string> categories;
  nlohmann::json hyperparameters;  // config key -> value
};

const DatasetPreset& dataset_preset(const std::string& name);
std::vector<std::string> preset_names();

/// Throws InputError unless `schema` has the preset's scale and category names (in order).
void check_schema_matches_preset(const CorpusSchema& schema, const DatasetPreset& preset);

enum class KeyType { number, integer, boolean, string };

struct ConfigKey {
  std::string name;
  KeyType type;
  nlohmann::json default_value;
  std::string group;  // model, training, split, evaluation, analysis, synthesis, provider, blending, general
  std::string help;
  std::optional<double> min;
  std::optional<double> max;
  std::vector<std::string> choices;
};

const std::vector<ConfigKey>& config_keys();
const ConfigKey* find_config_key(const std::string& name);
/// Keys read by a subcommand, in registry order.
std::vector<const ConfigKey*> keys_for_command(const std::string& command);

/// Validation failure listing every offending key.
class ConfigError : public InputError {
public:
  explicit ConfigError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

private:
  std::vector<std::string> problems_;
};

/// Resolved configuration: registry defaults, overlaid by the preset, then the
/// config file, then `key=value` overrides.
class RunConfig {
public:
  static RunConfig resolve(const std::optional<std::string>& preset, const std::optional<nlohmann::json>& file,
                           const std::vector<std::string>& overrides);

  const nlohmann::json& values() const { return values_; }
  const std::optional<std::string>& preset() const { return preset_; }

  double number(const std::string& key) const;
  std::int64_t integer(const std::string& key) const;
  std::size_t size(const std::string& key) const;
  bool boolean(const std::string& key) const;
  std::string string(const std::string& key) const;
  std::uint64_t seed() const;

  ModelConfig model_config(std::size_t text_dim) const;
  TrainingOptions training_options() const;
  SplitFractions split_fractions() const;
  BootstrapOptions bootstrap_options() const;
  ClusterPlanParams cluster_plan_params() const;
  GenerationOptions generation_options() const;
  WeightingParams weighting_params() const;
  BlendOptions blend_options() const;

private:
  nlohmann::json values_;
  std::optional<std::string> preset_;
};

/// Checks one candidate config object (types, ranges, unknown keys and
/// cross-key constraints); returns every problem found.
std::vector<std::string> validate_config(const nlohmann::json& values);

struct FileDigest {
  std::string path;
  std::string sha256;
};

struct RunManifest {
  std::string command;
  std::vector<std::string> arguments;
  nlohmann::json config;
  std::optional<std::string> preset;
  nlohmann::json seeds = nlohmann::json::object();
  std::vector<FileDigest> inputs;
  std::vector<FileDigest> outputs;
  std::string version;
  std::string git_revision;
  std::string started_at;
  std::string finished_at;
  std::string status = "running";
  int exit_code = 0;
  std::string error;

  void add_input(const std::filesystem::path& path);
  void add_output(const std::filesystem::path& path);
  nlohmann::json to_json() const;
};

std::string artifact_version();
std::string artifact_git_revision();
/// UTC time as ISO 8601 with second resolution.
std::string utc_timestamp();

}  // namespace demoe
