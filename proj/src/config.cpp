#include "demoe/config.hpp"

#include "demoe/digest.hpp"
#include "demoe/io.hpp"

#include <algorithm>
#include <cmath>
#include <ctime>
#include <map>
#include <set>

#ifndef DEMOE_VERSION
#define DEMOE_VERSION "0.0.0"
#endif
#ifndef DEMOE_GIT_REVISION
#define DEMOE_GIT_REVISION "unknown"
#endif

namespace demoe::detail {
const std::vector<std::pair<std::string_view, std::string_view>>& preset_sources();
}

namespace demoe {

using nlohmann::json;

namespace {

std::map<std::string, DatasetPreset> load_presets()
{
  std::map<std::string, DatasetPreset> out;
  for (const auto& [name, text] : detail::preset_sources()) {
    const auto j = json::parse(text);
    DatasetPreset p;
    p.dataset = j.at("dataset").get<std::string>();
    const auto& s = j.at("rating_scale");
    p.scale = {s.at("lower").get<double>(), s.at("upper").get<double>(), s.at("discrete").get<bool>()};
    p.categories = j.at("demographic_categories").get<std::vector<std::string>>();
    p.hyperparameters = j.at("hyperparameters");
    out.emplace(std::string(name), std::move(p));
  }
  return out;
}

const std::map<std::string, DatasetPreset>& presets()
{
  static const auto store = load_presets();
  return store;
}

ConfigKey num(std::string name, double def, std::string group, std::string help, std::optional<double> lo = {},
              std::optional<double> hi = {})
{
  return {std::move(name), KeyType::number, def, std::move(group), std::move(help), lo, hi, {}};
}

ConfigKey integer_key(std::string name, std::int64_t def, std::string group, std::string help,
                      std::optional<double> lo = {}, std::optional<double> hi = {})
{
  return {std::move(name), KeyType::integer, def, std::move(group), std::move(help), lo, hi, {}};
}

ConfigKey flag(std::string name, bool def, std::string group, std::string help)
{
  return {std::move(name), KeyType::boolean, def, std::move(group), std::move(help), {}, {}, {}};
}

ConfigKey text(std::string name, std::string def, std::string group, std::string help,
               std::vector<std::string> choices = {})
{
  return {std::move(name), KeyType::string, std::move(def), std::move(group), std::move(help), {}, {}, std::move(choices)};
}

std::vector<ConfigKey> build_registry()
{
  std::vector<ConfigKey> k = {
      integer_key("seed", 0, "general", "master seed; every random stream derives from it", 0),
      text("dataset", "", "general", "dataset id selecting the prompt template (set by presets)"),

      integer_key("num_experts", 0, "model", "number of experts; 0 = one per demographic category", 0),
      integer_key("topk_experts", 2, "model", "experts selected per sample", 1),
      integer_key("annotator_emb_dim", 32, "model", "annotator embedding size", 1),
      integer_key("demographic_emb_dim", 16, "model", "embedding size per demographic category", 1),
      integer_key("expert_hidden_dim", 64, "model", "expert hidden width", 1),
      integer_key("expert_output_dim", 32, "model", "expert output width", 1),
      flag("renormalize_topk", true, "model", "renormalize gate probabilities over the selected experts"),
      num("init_log_variance", -4.0, "model", "initial embedding log-variance"),

      num("learning_rate_gate", 5.94e-05, "training", "learning rate of the gate", 0),
      num("learning_rate_main", 0.00158, "training", "learning rate of experts, head and embeddings", 0),
      num("momentum", 0.9, "training", "SGD momentum", 0, 0.999999),
      integer_key("max_epochs", 50, "training", "epoch budget", 1),
      integer_key("patience", 5, "training", "early-stopping patience in epochs", 1),
      integer_key("batch_size", 32, "training", "mini-batch size", 1),
      num("annotator_emb_w", 0.001, "training", "weight of the annotator embedding KL term", 0),
      num("demographic_emb_w", 0.0001, "training", "weight of the demographic embedding KL term", 0),
      num("demographic_specialization_w", 0.0112, "training", "weight of the demographic specialization term", 0),
      num("specialization_sign", 1.0, "training", "+1 penalizes, -1 rewards subgroup usage divergence", -1, 1),
      num("load_loss_w_phaseA", 0.261, "training", "load-balance weight in phase A", 0),
      num("load_loss_w_phaseB", 0.464, "training", "load-balance weight in phase B", 0),
      num("load_loss_w_phaseC", 0.897, "training", "load-balance weight in phase C", 0),
      num("orthogonal_loss_w_phaseA", 0.051, "training", "orthogonality weight in phase A", 0),
      num("orthogonal_loss_w_phaseB", 0.252, "training", "orthogonality weight in phase B", 0),
      num("orthogonal_loss_w_phaseC", 0.45, "training", "orthogonality weight in phase C", 0),
      num("variance_loss_w_phaseA", 0.098, "training", "variance weight in phase A", 0),
      num("variance_loss_w_phaseB", 0.102, "training", "variance weight in phase B", 0),
      num("variance_loss_w_phaseC", 0.585, "training", "variance weight in phase C", 0),
      num("phase_threshold_ab", 0.3, "training", "running load_std below which phase A ends", 0),
      num("phase_threshold_bc", 0.15, "training", "running load_std below which phase B ends", 0),
      num("load_std_ema_decay", 0.9, "training", "EMA decay of the running load_std", 0, 0.999999),

      num("train_fraction", 0.8, "split", "share of instances in train", 0, 1),
      num("dev_fraction", 0.1, "split", "share of instances in dev", 0, 1),
      num("test_fraction", 0.1, "split", "share of instances in test", 0, 1),

      integer_key("n_bootstrap", 1000, "evaluation", "bootstrap replicates", 100),
      num("confidence", 0.95, "evaluation", "confidence level of bootstrap intervals", 0.5, 0.999),
      num("alpha", 0.05, "evaluation", "significance level for system comparisons", 0.0001, 0.5),
      flag("clip_predictions", true, "evaluation", "clip predictions to the rating scale"),
      text("baseline", "", "evaluation", "also evaluate a baseline", {"", "random", "mean"}),

      num("ridge_penalty", 1.0, "analysis", "ridge penalty of the cross-group map", 0),

      text("generation_strategy", "half_x", "synthesis", "persona assignment strategy",
           {"half_x", "one_x", "fill", "cluster"}),
      integer_key("cluster_count", 10, "synthesis", "k-means clusters for the cluster strategy", 2),
      integer_key("cluster_representatives", 20, "synthesis", "representatives kept per cluster", 1),
      integer_key("cluster_disagreeers", 20, "synthesis", "disagreeers kept per cluster", 1),
      integer_key("cluster_per_instance", 6, "synthesis", "synthetic annotations per instance (cluster)", 1),
      num("temperature", 0.7, "synthesis", "decoding temperature", 0, 2),
      integer_key("max_tokens", 512, "synthesis", "decoding token budget", 1),
      integer_key("max_attempts", 3, "synthesis", "attempts per request before recording a failure", 1),
      integer_key("initial_backoff_ms", 200, "synthesis", "first retry delay", 0),
      num("backoff_multiplier", 2.0, "synthesis", "retry delay growth", 1),
      integer_key("parallelism", 4, "synthesis", "concurrent provider requests", 1),
      text("alignment_mode", "group_mean", "synthesis", "human target of alignment reports",
           {"group_mean", "per_annotator"}),

      text("provider", "offline_stub", "provider", "provider kind", {"offline_stub", "http"}),
      text("provider_endpoint", "", "provider", "base URL of an OpenAI-compatible endpoint"),
      text("provider_path", "/v1/chat/completions", "provider", "request path"),
      text("provider_model", "", "provider", "model name sent to the provider"),
      text("provider_api_key_env", "", "provider", "environment variable holding the API key"),
      integer_key("provider_timeout_s", 60, "provider", "request timeout in seconds", 1),

      text("blend_strategy", "weighted", "blending", "how real and synthetic data are combined",
           {"pt_ft", "unweighted", "weighted"}),
      integer_key("pretrain_epochs", 20, "blending", "synthetic-only epochs for pt_ft", 1),
      integer_key("finetune_epochs", 50, "blending", "real-only epochs for pt_ft (0 keeps the pretrained model)", 0),
      integer_key("weight_clusters", 8, "blending", "k-means clusters for prevalence and trustworthiness", 1),
      num("alignment_epsilon", 1e-3, "blending", "additive epsilon of the alignment score", 1e-12),
      num("weight_min", 0.01, "blending", "lower clip of synthetic weights", 1e-12),
      num("weight_max", 100.0, "blending", "upper clip of synthetic weights", 1e-12),
  };
  return k;
}

const std::map<std::string, std::vector<std::string>>& command_groups()
{
  static const std::map<std::string, std::vector<std::string>> groups = {
      {"ingest", {}},
      {"stats", {}},
      {"split", {"general", "split"}},
      {"train", {"general", "model", "training"}},
      {"evaluate", {"general", "evaluation"}},
      {"analyze-experts", {"general", "analysis"}},
      {"generate-synthetic", {"general", "synthesis", "provider"}},
      {"blend-train", {"general", "model", "training", "blending", "evaluation"}},
      {"report", {"general", "evaluation", "synthesis"}},
  };
  return groups;
}

json parse_override_value(const ConfigKey& key, const std::string& raw, std::vector<std::string>& problems)
{
  try {
    switch (key.type) {
      case KeyType::string: return raw;
      case KeyType::boolean:
        if (raw == "true" || raw == "1") return true;
        if (raw == "false" || raw == "0") return false;
        break;
      case KeyType::integer: {
        std::size_t used = 0;
        const long long v = std::stoll(raw, &used);
        if (used == raw.size()) return v;
        break;
      }
      case KeyType::number: {
        std::size_t used = 0;
        const double v = std::stod(raw, &used);
        if (used == raw.size()) return v;
        break;
      }
    }
  } catch (const std::exception&) {
  }
  problems.push_back(key.name + ": cannot parse '" + raw + "'");
  return nullptr;
}

}  // namespace

const DatasetPreset& dataset_preset(const std::string& name)
{
  auto it = presets().find(name);
  if (it == presets().end()) {
    std::string known;
    for (const auto& [n, p] : presets()) known += (known.empty() ? "" : ", ") + n;
    throw InputError("unknown preset '" + name + "' (known: " + known + ")");
  }
  return it->second;
}

std::vector<std::string> preset_names()
{
  std::vector<std::string> out;
  for (const auto& [n, p] : presets()) out.push_back(n);
  return out;
}

void check_schema_matches_preset(const CorpusSchema& schema, const DatasetPreset& preset)
{
  std::vector<std::string> problems;
  if (schema.scale.lower != preset.scale.lower || schema.scale.upper != preset.scale.upper ||
      schema.scale.discrete != preset.scale.discrete)
    problems.push_back("rating scale differs from preset '" + preset.dataset + "'");
  std::vector<std::string> names;
  for (const auto& c : schema.categories) names.push_back(c.name);
  if (names != preset.categories) problems.push_back("demographic categories differ from preset '" + preset.dataset + "'");
  if (!problems.empty()) throw ConfigError(problems);
}

const std::vector<ConfigKey>& config_keys()
{
  static const auto registry = build_registry();
  return registry;
}

const ConfigKey* find_config_key(const std::string& name)
{
  for (const auto& k : config_keys())
    if (k.name == name) return &k;
  return nullptr;
}

std::vector<const ConfigKey*> keys_for_command(const std::string& command)
{
  auto it = command_groups().find(command);
  if (it == command_groups().end()) throw std::invalid_argument("unknown command " + command);
  std::vector<const ConfigKey*> out;
  for (const auto& k : config_keys())
    if (std::find(it->second.begin(), it->second.end(), k.group) != it->second.end()) out.push_back(&k);
  return out;
}

namespace {
std::string join_problems(const std::vector<std::string>& problems)
{
  std::string out = "invalid configuration:";
  for (const auto& p : problems) out += "\n  " + p;
  return out;
}
}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : InputError(join_problems(problems)), problems_(std::move(problems))
{
}

std::vector<std::string> validate_config(const json& values)
{
  std::vector<std::string> problems;
  if (!values.is_object()) return {"configuration must be a JSON object"};
  for (const auto& [name, v] : values.items()) {
    const ConfigKey* key = find_config_key(name);
    if (!key) {
      problems.push_back(name + ": unknown key");
      continue;
    }
    bool type_ok = false;
    double numeric = 0;
    switch (key->type) {
      case KeyType::number:
        type_ok = v.is_number();
        if (type_ok) numeric = v.get<double>();
        if (type_ok && !std::isfinite(numeric)) type_ok = false;
        break;
      case KeyType::integer:
        type_ok = v.is_number_integer() || (v.is_number_float() && std::floor(v.get<double>()) == v.get<double>());
        if (type_ok) numeric = v.get<double>();
        break;
      case KeyType::boolean: type_ok = v.is_boolean(); break;
      case KeyType::string: type_ok = v.is_string(); break;
    }
    if (!type_ok) {
      static const char* names[] = {"a number", "an integer", "a boolean", "a string"};
      problems.push_back(name + ": expected " + names[static_cast<int>(key->type)]);
      continue;
    }
    if (key->min && numeric < *key->min)
      problems.push_back(name + ": must be >= " + format_double(*key->min) + " (got " + v.dump() + ")");
    if (key->max && numeric > *key->max)
      problems.push_back(name + ": must be <= " + format_double(*key->max) + " (got " + v.dump() + ")");
    if (!key->choices.empty() &&
        std::find(key->choices.begin(), key->choices.end(), v.get<std::string>()) == key->choices.end())
      problems.push_back(name + ": '" + v.get<std::string>() + "' is not one of the allowed values");
  }
  if (!problems.empty()) return problems;

  auto get = [&](const char* k) { return values.contains(k) ? values.at(k) : find_config_key(k)->default_value; };
  const double total = get("train_fraction").get<double>() + get("dev_fraction").get<double>() +
                       get("test_fraction").get<double>();
  if (std::abs(total - 1.0) > 1e-9) problems.push_back("train_fraction + dev_fraction + test_fraction must equal 1");
  const auto experts = get("num_experts").get<std::int64_t>();
  if (experts > 0 && get("topk_experts").get<std::int64_t>() > experts)
    problems.push_back("topk_experts: must not exceed num_experts");
  if (get("weight_min").get<double>() > get("weight_max").get<double>())
    problems.push_back("weight_min: must not exceed weight_max");
  const double sign = get("specialization_sign").get<double>();
  if (sign != 1.0 && sign != -1.0) problems.push_back("specialization_sign: must be +1 or -1");
  if (get("provider").get<std::string>() == "http") {
    if (get("provider_endpoint").get<std::string>().empty())
      problems.push_back("provider_endpoint: required when provider is http");
    if (get("provider_model").get<std::string>().empty())
      problems.push_back("provider_model: required when provider is http");
  }
  return problems;
}

RunConfig RunConfig::resolve(const std::optional<std::string>& preset, const std::optional<json>& file,
                             const std::vector<std::string>& overrides)
{
  RunConfig cfg;
  cfg.values_ = json::object();
  std::vector<std::string> problems;
  if (preset) {
    const auto& p = dataset_preset(*preset);
    cfg.preset_ = *preset;
    cfg.values_["dataset"] = p.dataset;
    for (const auto& [k, v] : p.hyperparameters.items()) cfg.values_[k] = v;
  }
  if (file) {
    if (!file->is_object()) throw ConfigError({"configuration file must hold a JSON object"});
    for (const auto& [k, v] : file->items()) cfg.values_[k] = v;
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) {
      problems.push_back("override '" + o + "' is not key=value");
      continue;
    }
    const std::string name = o.substr(0, eq);
    const ConfigKey* key = find_config_key(name);
    if (!key) {
      problems.push_back(name + ": unknown key");
      continue;
    }
    auto v = parse_override_value(*key, o.substr(eq + 1), problems);
    if (!v.is_null()) cfg.values_[name] = v;
  }
  for (auto& p : validate_config(cfg.values_)) problems.push_back(std::move(p));
  if (!problems.empty()) throw ConfigError(problems);
  for (const auto& k : config_keys())
    if (!cfg.values_.contains(k.name)) cfg.values_[k.name] = k.default_value;
  return cfg;
}

double RunConfig::number(const std::string& key) const { return values_.at(key).get<double>(); }
std::int64_t RunConfig::integer(const std::string& key) const
{
  return static_cast<std::int64_t>(values_.at(key).get<double>());
}
std::size_t RunConfig::size(const std::string& key) const { return static_cast<std::size_t>(integer(key)); }
bool RunConfig::boolean(const std::string& key) const { return values_.at(key).get<bool>(); }
std::string RunConfig::string(const std::string& key) const { return values_.at(key).get<std::string>(); }
std::uint64_t RunConfig::seed() const { return static_cast<std::uint64_t>(values_.at("seed").get<std::int64_t>()); }

ModelConfig RunConfig::model_config(std::size_t text_dim) const
{
  ModelConfig m;
  m.text_dim = text_dim;
  m.annotator_dim = size("annotator_emb_dim");
  m.demographic_dim = size("demographic_emb_dim");
  m.num_experts = size("num_experts");
  m.top_k = size("topk_experts");
  m.expert_hidden = size("expert_hidden_dim");
  m.expert_output = size("expert_output_dim");
  m.renormalize_topk = boolean("renormalize_topk");
  m.init_log_variance = number("init_log_variance");
  m.seed = seed();
  return m;
}

TrainingOptions RunConfig::training_options() const
{
  TrainingOptions t;
  t.optimizer.lr_gate = number("learning_rate_gate");
  t.optimizer.lr_main = number("learning_rate_main");
  t.optimizer.momentum = number("momentum");
  t.optimizer.max_epochs = size("max_epochs");
  t.optimizer.patience = size("patience");
  t.optimizer.batch_size = size("batch_size");
  t.optimizer.seed = seed();
  t.loss.annotator_kl = number("annotator_emb_w");
  t.loss.demographic_kl = number("demographic_emb_w");
  t.loss.demo_specialization = number("demographic_specialization_w");
  t.loss.specialization_sign = number("specialization_sign");
  const char* suffix[] = {"A", "B", "C"};
  for (std::size_t p = 0; p < 3; ++p) {
    t.schedule.phases[p].load = number(std::string("load_loss_w_phase") + suffix[p]);
    t.schedule.phases[p].orthogonality = number(std::string("orthogonal_loss_w_phase") + suffix[p]);
    t.schedule.phases[p].variance = number(std::string("variance_loss_w_phase") + suffix[p]);
  }
  t.schedule.threshold_ab = number("phase_threshold_ab");
  t.schedule.threshold_bc = number("phase_threshold_bc");
  t.schedule.ema_decay = number("load_std_ema_decay");
  return t;
}

SplitFractions RunConfig::split_fractions() const
{
  return {number("train_fraction"), number("dev_fraction"), number("test_fraction")};
}

BootstrapOptions RunConfig::bootstrap_options() const
{
  return {size("n_bootstrap"), seed(), number("confidence"), number("alpha")};
}

ClusterPlanParams RunConfig::cluster_plan_params() const
{
  return {size("cluster_count"), size("cluster_representatives"), size("cluster_disagreeers"),
          size("cluster_per_instance")};
}

GenerationOptions RunConfig::generation_options() const
{
  GenerationOptions g;
  g.decoding.temperature = number("temperature");
  g.decoding.max_tokens = static_cast<int>(integer("max_tokens"));
  g.model = string("provider") == "http" ? string("provider_model") : "offline-stub";
  g.retry.max_attempts = size("max_attempts");
  g.retry.initial_backoff = std::chrono::milliseconds(integer("initial_backoff_ms"));
  g.retry.backoff_multiplier = number("backoff_multiplier");
  g.parallelism = size("parallelism");
  return g;
}

WeightingParams RunConfig::weighting_params() const
{
  WeightingParams w;
  w.clusters = size("weight_clusters");
  w.alignment_epsilon = number("alignment_epsilon");
  w.clip = {number("weight_min"), number("weight_max")};
  w.seed = seed();
  return w;
}

BlendOptions RunConfig::blend_options() const
{
  BlendOptions b;
  b.strategy = blend_strategy_from_string(string("blend_strategy"));
  b.training = training_options();
  if (b.strategy == BlendStrategy::pt_ft) {
    b.pretrain_epochs = size("pretrain_epochs");
    b.training.optimizer.max_epochs = size("finetune_epochs");
  }
  return b;
}

void RunManifest::add_input(const std::filesystem::path& path) { inputs.push_back({path.string(), sha256_file(path)}); }

void RunManifest::add_output(const std::filesystem::path& path)
{
  outputs.push_back({path.string(), sha256_file(path)});
}

json RunManifest::to_json() const
{
  auto digests = [](const std::vector<FileDigest>& files) {
    json out = json::array();
    for (const auto& f : files) out.push_back({{"path", f.path}, {"sha256", f.sha256}});
    return out;
  };
  json j = {{"command", command},
            {"arguments", arguments},
            {"config", config},
            {"preset", preset ? json(*preset) : json(nullptr)},
            {"seeds", seeds},
            {"inputs", digests(inputs)},
            {"outputs", digests(outputs)},
            {"version", version},
            {"git_revision", git_revision},
            {"started_at", started_at},
            {"finished_at", finished_at},
            {"status", status},
            {"exit_code", exit_code}};
  if (!error.empty()) j["error"] = error;
  return j;
}

std::string artifact_version() { return DEMOE_VERSION; }
std::string artifact_git_revision() { return DEMOE_GIT_REVISION; }

std::string utc_timestamp()
{
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace demoe
