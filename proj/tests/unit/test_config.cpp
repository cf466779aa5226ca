#include "demoe/config.hpp"

#include <gtest/gtest.h>

#include <algorithm>

using namespace demoe;
using nlohmann::json;

namespace {

bool mentions(const std::vector<std::string>& problems, const std::string& key)
{
  return std::any_of(problems.begin(), problems.end(),
                     [&](const std::string& p) { return p.find(key) != std::string::npos; });
}

}  // namespace

TEST(Presets, EveryPresetValidates)
{
  const auto names = preset_names();
  EXPECT_EQ(names.size(), 5u);
  for (const auto& name : names) {
    const auto& p = dataset_preset(name);
    EXPECT_EQ(p.dataset, name);
    EXPECT_TRUE(validate_config(p.hyperparameters).empty()) << name;
    EXPECT_NO_THROW(RunConfig::resolve(name, std::nullopt, {})) << name;
  }
  EXPECT_THROW(dataset_preset("sarcasm"), InputError);
}

TEST(Presets, PublishedHyperparameters)
{
  const auto off = RunConfig::resolve("offensiveness", std::nullopt, {});
  EXPECT_EQ(off.number("learning_rate_gate"), 5.94e-5);
  EXPECT_EQ(off.number("learning_rate_main"), 1.58e-3);
  EXPECT_EQ(off.size("topk_experts"), 2u);
  const auto training = off.training_options();
  EXPECT_EQ(training.optimizer.lr_gate, 5.94e-5);
  EXPECT_EQ(training.schedule.phases[2].load, 0.897);

  EXPECT_EQ(RunConfig::resolve("pcc", std::nullopt, {}).size("topk_experts"), 3u);
  EXPECT_EQ(RunConfig::resolve("pcc", std::nullopt, {}).model_config(16).top_k, 3u);
  EXPECT_EQ(dataset_preset("safety").scale.upper, 3.0);
}

TEST(Presets, SchemaMustMatch)
{
  const auto& preset = dataset_preset("offensiveness");
  CorpusSchema schema;
  schema.scale = preset.scale;
  for (const auto& c : preset.categories) schema.categories.push_back({c, {"v"}});
  EXPECT_NO_THROW(check_schema_matches_preset(schema, preset));
  std::swap(schema.categories[0], schema.categories[1]);
  EXPECT_THROW(check_schema_matches_preset(schema, preset), InputError);
  std::swap(schema.categories[0], schema.categories[1]);
  schema.scale.upper = 7;
  EXPECT_THROW(check_schema_matches_preset(schema, preset), InputError);
}

TEST(RunConfig, FlagsOverrideFileOverridePreset)
{
  const json file = {{"learning_rate_gate", 0.01}, {"batch_size", 16}};
  const auto only_preset = RunConfig::resolve("politeness", std::nullopt, {});
  const auto with_file = RunConfig::resolve("politeness", file, {});
  const auto with_flag = RunConfig::resolve("politeness", file, {"learning_rate_gate=0.5"});
  EXPECT_NE(only_preset.number("learning_rate_gate"), 0.01);
  EXPECT_EQ(with_file.number("learning_rate_gate"), 0.01);
  EXPECT_EQ(with_file.size("batch_size"), 16u);
  EXPECT_EQ(with_flag.number("learning_rate_gate"), 0.5);
  EXPECT_EQ(with_flag.size("batch_size"), 16u);
  EXPECT_EQ(with_flag.preset().value(), "politeness");

  const auto defaults = RunConfig::resolve(std::nullopt, std::nullopt, {});
  EXPECT_EQ(defaults.number("learning_rate_gate"), find_config_key("learning_rate_gate")->default_value.get<double>());
  EXPECT_EQ(RunConfig::resolve(std::nullopt, std::nullopt, {"seed=17"}).seed(), 17u);
}

TEST(RunConfig, ErrorsListEveryOffendingKey)
{
  try {
    RunConfig::resolve(std::nullopt, json{{"momentum", 2.0}, {"no_such_key", 1}},
                       {"batch_size=0", "temperature=warm"});
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.problems().size(), 4u);
    for (const char* key : {"momentum", "no_such_key", "batch_size", "temperature"})
      EXPECT_TRUE(mentions(e.problems(), key)) << key;
  }
  EXPECT_THROW(RunConfig::resolve(std::nullopt, std::nullopt, {"missing_equals"}), ConfigError);
  EXPECT_TRUE(mentions(validate_config(json{{"train_fraction", 0.9}, {"dev_fraction", 0.2}}), "fraction"));
  EXPECT_TRUE(mentions(validate_config(json{{"weight_min", 5.0}, {"weight_max", 1.0}}), "weight_min"));
}

TEST(ConfigKeys, RegistryAndCommands)
{
  std::vector<std::string> names;
  for (const auto& k : config_keys()) names.push_back(k.name);
  auto sorted = names;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(std::adjacent_find(sorted.begin(), sorted.end()), sorted.end());
  for (const auto& k : config_keys()) EXPECT_TRUE(validate_config(json{{k.name, k.default_value}}).empty()) << k.name;

  const auto train = keys_for_command("train");
  const auto has = [](const std::vector<const ConfigKey*>& keys, const std::string& name) {
    return std::any_of(keys.begin(), keys.end(), [&](const ConfigKey* k) { return k->name == name; });
  };
  EXPECT_TRUE(has(train, "learning_rate_gate"));
  EXPECT_TRUE(has(train, "seed"));
  EXPECT_FALSE(has(train, "temperature"));
  EXPECT_TRUE(has(keys_for_command("generate-synthetic"), "provider_api_key_env"));
  EXPECT_TRUE(has(keys_for_command("blend-train"), "weight_max"));
  EXPECT_EQ(find_config_key("nope"), nullptr);
}

TEST(Manifest, RecordsDigestsAndStatus)
{
  RunManifest m;
  m.command = "stats";
  m.status = "failed";
  m.exit_code = 1;
  m.error = "bad input";
  const auto j = m.to_json();
  EXPECT_EQ(j.at("command"), "stats");
  EXPECT_EQ(j.at("status"), "failed");
  EXPECT_EQ(j.at("exit_code"), 1);
  EXPECT_EQ(utc_timestamp().size(), 20u);
  EXPECT_FALSE(artifact_version().empty());
}
