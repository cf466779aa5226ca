#include "demoe/blending.hpp"
#include "demoe/checkpoint.hpp"
#include "demoe/config.hpp"
#include "demoe/corpus.hpp"
#include "demoe/digest.hpp"
#include "demoe/evaluation.hpp"
#include "demoe/io.hpp"
#include "demoe/persona.hpp"
#include "demoe/prompts.hpp"
#include "demoe/provider.hpp"
#include "demoe/random.hpp"
#include "demoe/specialization.hpp"
#include "demoe/stats.hpp"
#include "demoe/synthesis.hpp"
#include "demoe/text_store.hpp"
#include "demoe/training.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace demoe;

namespace {

enum ExitCode { kOk = 0, kValidation = 1, kRuntime = 2, kProvider = 3 };

struct CommonOptions {
  std::optional<std::string> preset;
  std::optional<std::string> config_file;
  std::vector<std::string> overrides;
  std::string out;
};

struct CorpusOptions {
  std::string schema;
  std::string annotations;
  std::string profiles;
  std::string embeddings;
  std::optional<std::string> split_file;
};

/// State shared by one command invocation: resolved config, manifest and
/// output directory.
class Context {
public:
  Context(std::string command, std::vector<std::string> args, const CommonOptions& common)
      : common_(common), out_(common.out)
  {
    manifest_.command = std::move(command);
    manifest_.arguments = std::move(args);
    manifest_.version = artifact_version();
    manifest_.git_revision = artifact_git_revision();
    manifest_.started_at = utc_timestamp();
  }

  void resolve_config()
  {
    std::optional<json> file;
    if (common_.config_file) {
      manifest_.add_input(*common_.config_file);
      file = read_json_file(*common_.config_file);
    }
    config_ = RunConfig::resolve(common_.preset, file, common_.overrides);
    manifest_.config = config_->values();
    manifest_.preset = config_->preset();
    manifest_.seeds["master"] = config_->seed();
  }

  const RunConfig& config() const { return *config_; }
  RunManifest& manifest() { return manifest_; }

  fs::path input(const std::string& path)
  {
    manifest_.add_input(path);
    return path;
  }

  void write(const std::string& name, const std::string& contents)
  {
    const fs::path path = out_ / name;
    write_file_atomic(path, contents);
    manifest_.add_output(path);
  }

  void record_output(const fs::path& path) { manifest_.add_output(path); }
  const fs::path& out() const { return out_; }

  void finish(int code, const std::string& error)
  {
    manifest_.exit_code = code;
    manifest_.status = code == kOk ? "ok" : "failed";
    manifest_.error = error;
    manifest_.finished_at = utc_timestamp();
    try {
      fs::create_directories(out_);
      write_file_atomic(out_ / "manifest.json", manifest_.to_json().dump(2) + "\n");
    } catch (const std::exception& e) {
      std::cerr << "error: cannot write manifest: " << e.what() << "\n";
    }
  }

private:
  CommonOptions common_;
  fs::path out_;
  std::optional<RunConfig> config_;
  RunManifest manifest_;
};

int run(Context& ctx, const std::function<void(Context&)>& body)
{
  int code = kOk;
  std::string error;
  try {
    fs::create_directories(ctx.out());
    ctx.resolve_config();
    body(ctx);
  } catch (const ProviderError& e) {
    code = kProvider;
    error = e.what();
  } catch (const InputError& e) {
    code = kValidation;
    error = e.what();
  } catch (const std::exception& e) {
    code = kRuntime;
    error = e.what();
  }
  if (code != kOk) std::cerr << "error: " << error << "\n";
  ctx.finish(code, error);
  return code;
}

CorpusSchema load_schema(Context& ctx, const std::string& path)
{
  auto schema = CorpusSchema::load(ctx.input(path));
  if (const auto& preset = ctx.config().preset()) check_schema_matches_preset(schema, dataset_preset(*preset));
  return schema;
}

Corpus load_corpus(Context& ctx, const CorpusOptions& opts, const CorpusSchema& schema)
{
  return ingest(ctx.input(opts.annotations), ctx.input(opts.profiles), schema);
}

SplitAssignment load_split(Context& ctx, const CorpusOptions& opts, const std::vector<AnnotationRecord>& records)
{
  if (opts.split_file) {
    auto assignment = SplitAssignment::from_tsv(read_text_file(ctx.input(*opts.split_file)));
    for (const auto& r : records)
      if (!assignment.contains(r.instance_id)) throw InputError("split file lacks instance " + r.instance_id);
    assignment.annotator_overlap_pct = annotator_overlap_pct(records, assignment);
    return assignment;
  }
  return split(records, ctx.config().seed(), ctx.config().split_fractions());
}

TextEmbeddingStore load_store(Context& ctx, const std::string& path)
{
  if (path.empty()) throw InputError("--embeddings is required");
  return TextEmbeddingStore::load(ctx.input(path));
}

std::string predictions_tsv(const std::vector<PredictionRecord>& preds)
{
  std::ostringstream out;
  out << "instance_id\tannotator_id\tpredicted\tactual\n";
  for (const auto& p : preds)
    out << p.instance_id << '\t' << p.annotator_id << '\t' << format_double(p.predicted) << '\t'
        << format_double(p.actual) << '\n';
  return out.str();
}

std::string jsonl(const std::vector<json>& rows) { return to_json_lines(rows); }

// ---------------------------------------------------------------------------

void cmd_ingest(Context& ctx, const CorpusOptions& opts)
{
  const auto schema = load_schema(ctx, opts.schema);
  const auto corpus = load_corpus(ctx, opts, schema);
  if (corpus.records.empty()) throw InputError("corpus has no annotations");
  std::vector<json> records, profiles;
  for (const auto& r : corpus.records) records.push_back(record_to_json(r));
  auto sorted = corpus.profiles;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.annotator_id < b.annotator_id; });
  for (const auto& p : sorted) profiles.push_back(profile_to_json(p));
  ctx.write("annotations.jsonl", jsonl(records));
  ctx.write("profiles.jsonl", jsonl(profiles));
  ctx.write("schema.json", schema.to_json().dump(2) + "\n");
  ctx.write("ingest.json", json{{"instances", unique_instances(corpus.records).size()},
                                {"annotators", annotators_in(corpus.records).size()},
                                {"annotations", corpus.records.size()},
                                {"profiles", corpus.profiles.size()}}
                               .dump(2) +
                               "\n");
}

void cmd_stats(Context& ctx, const CorpusOptions& opts, const std::string& alpha_metric)
{
  const auto schema = load_schema(ctx, opts.schema);
  const auto corpus = load_corpus(ctx, opts, schema);
  StatsOptions so;
  so.alpha_metric = agreement_metric_from_string(alpha_metric);
  so.ridge_penalty = ctx.config().number("ridge_penalty");
  const auto stats = compute_statistics(corpus, schema, so);
  const std::string name = ctx.config().string("dataset").empty() ? "corpus" : ctx.config().string("dataset");
  ctx.write("stats.json", stats.to_json().dump(2) + "\n");
  ctx.write("stats.tsv", stats.to_tsv(name));
}

void cmd_split(Context& ctx, const CorpusOptions& opts)
{
  const auto schema = load_schema(ctx, opts.schema);
  const auto records = read_annotations(ctx.input(opts.annotations), schema);
  const auto assignment = split(records, ctx.config().seed(), ctx.config().split_fractions());
  ctx.write("split.tsv", assignment.to_tsv());
  json summary = {{"annotator_overlap_pct", assignment.annotator_overlap_pct}};
  for (auto s : {Split::train, Split::dev, Split::test})
    summary[std::string(to_string(s))] = {
        {"instances", assignment.instances(s).size()}, {"annotations", select_split(records, assignment, s).size()}};
  ctx.write("split.json", summary.dump(2) + "\n");
}

void cmd_train(Context& ctx, const CorpusOptions& opts)
{
  const auto schema = load_schema(ctx, opts.schema);
  const auto corpus = load_corpus(ctx, opts, schema);
  const auto store = load_store(ctx, opts.embeddings);
  const auto assignment = load_split(ctx, opts, corpus.records);
  const ProfileIndex profiles(corpus.profiles);
  const auto train_records = select_split(corpus.records, assignment, Split::train);
  const auto dev_records = select_split(corpus.records, assignment, Split::dev);

  const auto& cfg = ctx.config();
  DemMoE model(cfg.model_config(store.dim()), schema, RatingNormalizer::fit(train_records),
               unique_annotators(train_records));
  auto result = train(std::move(model), store, make_examples(train_records, profiles),
                      make_examples(dev_records, profiles), cfg.training_options(), [](const EpochLog& e) {
                        std::cerr << "epoch " << e.epoch << " loss " << e.mean_loss.total << " phase "
                                  << to_string(e.phase);
                        if (e.dev_mae) std::cerr << " dev_mae " << *e.dev_mae;
                        std::cerr << "\n";
                      });
  save_checkpoint(result.model, ctx.out() / "checkpoint.json");
  ctx.record_output(ctx.out() / "checkpoint.json");
  ctx.write("training_log.json", result.log.to_json(false).dump(2) + "\n");
}

std::vector<AnnotationRecord> records_for(const std::vector<AnnotationRecord>& records,
                                          const SplitAssignment& assignment, const std::string& which)
{
  if (which == "all") return records;
  return select_split(records, assignment, split_from_string(which));
}

void cmd_evaluate(Context& ctx, const CorpusOptions& opts, const std::string& checkpoint, const std::string& which)
{
  const auto schema = load_schema(ctx, opts.schema);
  const auto corpus = load_corpus(ctx, opts, schema);
  const auto store = load_store(ctx, opts.embeddings);
  const auto assignment = load_split(ctx, opts, corpus.records);
  const auto model = load_checkpoint(ctx.input(checkpoint));
  require_schema(model, schema);
  const ProfileIndex profiles(corpus.profiles);
  const auto& cfg = ctx.config();
  const auto train_records = select_split(corpus.records, assignment, Split::train);
  const auto targets = records_for(corpus.records, assignment, which);
  if (targets.empty()) throw InputError("no annotations in the evaluated split");

  const auto preds = predict_records(model, store, targets, profiles, cfg.boolean("clip_predictions"));
  const auto options = cfg.bootstrap_options();
  const auto report = group_mae_with_bootstrap(preds, profiles, schema, options, "demoe");
  const auto dist = seen_unseen_split_eval(preds, annotators_in(train_records), schema.scale);
  const auto density = error_density_correlation(report);

  json summary = {{"split", which},
                  {"records", preds.size()},
                  {"mae", report.overall.mae},
                  {"ci_lower", report.overall.ci_lower},
                  {"ci_upper", report.overall.ci_upper},
                  {"error_density_r", density.r},
                  {"error_density_degenerate", density.degenerate}};
  std::string group_tsv = report.to_tsv(true);
  json groups = json::array({report.to_json()});

  if (const auto baseline = cfg.string("baseline"); !baseline.empty()) {
    const auto base = baseline_predict(baseline_kind_from_string(baseline), train_records, targets, schema.scale,
                                       cfg.seed());
    const auto base_report = group_mae_with_bootstrap(base, profiles, schema, options, baseline);
    group_tsv += base_report.to_tsv(false);
    groups.push_back(base_report.to_json());
    ctx.write("comparisons.tsv", comparisons_to_tsv(compare_systems("demoe", preds, baseline, base, profiles, schema,
                                                                    options)));
    ctx.write("baseline_predictions.tsv", predictions_tsv(base));
    summary["baseline"] = {{"name", baseline}, {"mae", base_report.overall.mae}};
  }
  ctx.write("predictions.tsv", predictions_tsv(preds));
  ctx.write("group_mae.tsv", group_tsv);
  ctx.write("group_mae.json", groups.dump(2) + "\n");
  ctx.write("distribution.json", dist.to_json(false).dump(2) + "\n");
  ctx.write("evaluation.json", summary.dump(2) + "\n");
}

void cmd_analyze(Context& ctx, const CorpusOptions& opts, const std::string& checkpoint, const std::string& which)
{
  const auto schema = load_schema(ctx, opts.schema);
  const auto corpus = load_corpus(ctx, opts, schema);
  const auto store = load_store(ctx, opts.embeddings);
  const auto assignment = load_split(ctx, opts, corpus.records);
  const auto model = load_checkpoint(ctx.input(checkpoint));
  require_schema(model, schema);
  const ProfileIndex profiles(corpus.profiles);
  const auto targets = records_for(corpus.records, assignment, which);
  if (targets.empty()) throw InputError("no annotations in the analyzed split");

  const auto E = model.num_experts();
  std::vector<RoutingDecision> decisions;
  std::vector<const AnnotatorProfile*> profile_ptrs;
  Eigen::MatrixXd usage(static_cast<Eigen::Index>(targets.size()), static_cast<Eigen::Index>(E));
  const AnnotatorProfile blank;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const auto& r = targets[i];
    const AnnotatorProfile* p = profiles.find(r.annotator_id);
    if (!p) p = &blank;
    decisions.push_back(model.route_sample(store, r.instance_id, r.annotator_id, *p));
    usage.row(static_cast<Eigen::Index>(i)) = usage_vector(decisions.back(), E).transpose();
    profile_ptrs.push_back(p);
  }
  const auto groups = collect_group_usage(decisions, profile_ptrs, schema, E);
  std::vector<SpecializationScore> scores;
  std::string usage_tsv;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    scores.push_back(within_group_score(groups[g]));
    auto tsv = usage_heatmap_tsv(groups[g]);
    if (g) tsv.erase(0, tsv.find('\n') + 1);
    usage_tsv += tsv;
  }
  const auto map = cross_group_map(usage, profile_ptrs, schema, ctx.config().number("ridge_penalty"));
  ctx.write("expert_usage.tsv", usage_tsv);
  ctx.write("specialization.tsv", specialization_scores_tsv(scores));
  ctx.write("cross_group_map.tsv", map.to_tsv());
  json overall = json::array();
  const auto total_usage = expert_usage(decisions, E);
  for (Eigen::Index e = 0; e < total_usage.size(); ++e) overall.push_back(total_usage(e));
  ctx.write("analysis.json", json{{"split", which}, {"records", targets.size()}, {"expert_usage", overall}}.dump(2) +
                                 "\n");
}

std::map<std::string, std::string> load_texts(Context& ctx, const std::optional<std::string>& texts_file,
                                              const std::vector<AnnotationRecord>& records)
{
  std::map<std::string, std::string> texts;
  for (const auto& r : records)
    if (!r.text.empty()) texts.emplace(r.instance_id, r.text);
  if (texts_file) {
    for_each_json_line(ctx.input(*texts_file), [&](const json& row, std::size_t line) {
      if (!row.contains("instance_id") || !row.contains("text") || !row.at("text").is_string())
        throw InputError("text rows need instance_id and text", line);
      const auto& id = row.at("instance_id");
      texts[id.is_string() ? id.get<std::string>() : id.dump()] = row.at("text").get<std::string>();
    });
  }
  return texts;
}

std::unique_ptr<Provider> make_provider(const RunConfig& cfg, const DatasetTemplate& tmpl)
{
  if (cfg.string("provider") == "http") {
    HttpProviderConfig h;
    h.endpoint = cfg.string("provider_endpoint");
    h.path = cfg.string("provider_path");
    h.model = cfg.string("provider_model");
    h.api_key_env = cfg.string("provider_api_key_env");
    h.timeout = std::chrono::seconds(cfg.integer("provider_timeout_s"));
    return std::make_unique<HttpChatProvider>(h);
  }
  return std::make_unique<OfflineStubProvider>(tmpl.scale, tmpl.kind, tmpl.qualities);
}

void cmd_generate(Context& ctx, const CorpusOptions& opts, const std::optional<std::string>& texts_file,
                  const std::optional<std::string>& cache_path)
{
  const auto schema = load_schema(ctx, opts.schema);
  const auto corpus = load_corpus(ctx, opts, schema);
  const auto& cfg = ctx.config();
  if (cfg.string("dataset").empty()) throw InputError("dataset: set a preset or the dataset key to pick a template");
  const auto& tmpl = dataset_template(cfg.string("dataset"));

  auto records = corpus.records;
  if (opts.split_file) records = select_split(records, load_split(ctx, opts, corpus.records), Split::train);
  const ProfileIndex profiles(corpus.profiles);
  std::vector<AnnotatorProfile> used;
  for (const auto& id : annotators_in(records))
    used.push_back(profiles.find(id) ? profiles.at(id) : AnnotatorProfile{id, {}});
  const auto pool = build_persona_pool(used, schema);
  const auto strategy = generation_strategy_from_string(cfg.string("generation_strategy"));
  const auto plan = plan_generation(records, profiles, pool, schema, strategy, cfg.seed(), cfg.cluster_plan_params());
  const auto texts = load_texts(ctx, texts_file, records);

  std::optional<ResponseCache> cache;
  if (cache_path) {
    if (fs::exists(*cache_path)) ctx.input(*cache_path);
    cache.emplace(fs::path(*cache_path));
  }
  auto provider = make_provider(cfg, tmpl);
  const auto result = generate(plan, pool, texts, schema, tmpl, *provider, cache ? &*cache : nullptr,
                               cfg.generation_options());

  std::vector<json> personas, annotations, failures;
  for (const auto& p : pool) personas.push_back(p.to_json());
  for (const auto& a : result.annotations) annotations.push_back(a.to_json());
  for (const auto& f : result.failures) failures.push_back(f.to_json());
  ctx.write("personas.jsonl", jsonl(personas));
  ctx.write("plan.json", plan.to_json(pool).dump(2) + "\n");
  ctx.write("synthetic.jsonl", jsonl(annotations));
  ctx.write("failures.jsonl", jsonl(failures));
  ctx.write("generation.json", json{{"provider", provider->id()},
                                    {"template", tmpl.id},
                                    {"strategy", to_string(strategy)},
                                    {"personas", pool.size()},
                                    {"planned", plan.total()},
                                    {"annotations", result.annotations.size()},
                                    {"failures", result.failures.size()},
                                    {"provider_calls", result.provider_calls},
                                    {"cache_hits", result.cache_hits}}
                                   .dump(2) +
                                   "\n");
  if (!result.failures.empty())
    std::cerr << "warning: " << result.failures.size() << " of " << plan.total()
              << " planned annotations failed; see failures.jsonl\n";
  if (plan.total() > 0 && result.annotations.empty()) throw ProviderError("every provider request failed", false);
}

void cmd_blend(Context& ctx, const CorpusOptions& opts, const std::string& synthetic_path,
               const std::optional<std::string>& reference)
{
  const auto schema = load_schema(ctx, opts.schema);
  const auto corpus = load_corpus(ctx, opts, schema);
  const auto store = load_store(ctx, opts.embeddings);
  const auto assignment = load_split(ctx, opts, corpus.records);
  const auto& cfg = ctx.config();
  const ProfileIndex profiles(corpus.profiles);
  const auto train_records = select_split(corpus.records, assignment, Split::train);
  const auto dev_records = select_split(corpus.records, assignment, Split::dev);

  std::vector<SyntheticAnnotation> synthetic;
  std::size_t dropped = 0;
  for (auto& s : read_synthetic_annotations(ctx.input(synthetic_path), schema)) {
    // Only training instances may receive synthetic labels.
    if (assignment.contains(s.instance_id) && assignment.at(s.instance_id) == Split::train)
      synthetic.push_back(std::move(s));
    else
      ++dropped;
  }
  ProfileIndex persona_profiles;
  for (const auto& s : synthetic)
    if (!persona_profiles.find(s.persona_id)) persona_profiles.add(s.persona);

  auto ids = unique_annotators(train_records);
  for (const auto& s : synthetic) ids.push_back(s.persona_id);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  DemMoE model(cfg.model_config(store.dim()), schema, RatingNormalizer::fit(train_records), ids);

  const auto options = cfg.blend_options();
  std::vector<double> weights;
  json log = {{"strategy", to_string(options.strategy)},
              {"synthetic", synthetic.size()},
              {"synthetic_outside_train", dropped}};
  if (options.strategy == BlendStrategy::weighted) {
    if (!reference) throw InputError("weighted blending needs --reference (a real-data checkpoint)");
    const auto ref = load_checkpoint(ctx.input(*reference));
    require_schema(ref, schema);
    const auto ref_preds = predict_records(ref, store, train_records, profiles, true);
    const auto params = cfg.weighting_params();
    const auto table = compute_weights(synthetic, train_records, profiles, schema, ref_preds, params);
    for (const auto& r : table.rows) weights.push_back(r.weight.clipped);
    ctx.write("weights.tsv", table.to_tsv());
    log["weight_summary"] = table.summary(params.clip).to_json();
    log["fidelity_fallback_personas"] = table.fallback_personas;
  }
  auto result = blend_train(std::move(model), store, make_examples(train_records, profiles),
                            synthetic_examples(synthetic, persona_profiles), make_examples(dev_records, profiles),
                            options, weights);
  json stages = json::array();
  for (const auto& l : result.logs) stages.push_back(l.to_json(false));
  log["stages"] = stages;
  save_checkpoint(result.model, ctx.out() / "checkpoint.json");
  ctx.record_output(ctx.out() / "checkpoint.json");
  ctx.write("blend_log.json", log.dump(2) + "\n");
}

void cmd_report(Context& ctx, const CorpusOptions& opts, const std::vector<std::string>& synthetic_specs,
                const std::string& which)
{
  const auto schema = load_schema(ctx, opts.schema);
  const auto corpus = load_corpus(ctx, opts, schema);
  const auto& cfg = ctx.config();
  std::vector<AnnotationRecord> targets = corpus.records, reference = corpus.records;
  if (opts.split_file || which != "all") {
    const auto assignment = load_split(ctx, opts, corpus.records);
    targets = records_for(corpus.records, assignment, which);
    reference = select_split(corpus.records, assignment, Split::train);
  }
  if (targets.empty()) throw InputError("no annotations to report on");
  const ProfileIndex profiles(corpus.profiles);

  std::ostringstream baselines;
  baselines << "system\trecords\tmae\tpearson_r\tdegenerate\n";
  json summary = {{"split", which}, {"baselines", json::array()}, {"alignment", json::array()}};
  for (auto kind : {BaselineKind::random, BaselineKind::mean}) {
    const std::string name = kind == BaselineKind::random ? "random" : "mean";
    const auto preds = baseline_predict(kind, reference, targets, schema.scale, cfg.seed());
    const double m = mae(preds);
    const auto r = pearson_r(preds);
    baselines << name << '\t' << preds.size() << '\t' << format_double(m) << '\t' << format_double(r.r) << '\t'
              << r.degenerate << '\n';
    summary["baselines"].push_back({{"system", name}, {"mae", m}, {"pearson_r", r.r}, {"degenerate", r.degenerate}});
  }
  ctx.write("baselines.tsv", baselines.str());

  std::string alignment;
  const auto mode = alignment_mode_from_string(cfg.string("alignment_mode"));
  for (std::size_t i = 0; i < synthetic_specs.size(); ++i) {
    std::string name = "synthetic" + std::to_string(i + 1), path = synthetic_specs[i];
    if (const auto eq = path.find('='); eq != std::string::npos) {
      name = path.substr(0, eq);
      path = path.substr(eq + 1);
    }
    const auto synthetic = read_synthetic_annotations(ctx.input(path), schema);
    const auto report = alignment_report(synthetic, targets, profiles, schema, mode, name);
    alignment += report.to_tsv(i == 0);
    summary["alignment"].push_back(report.to_json());
  }
  if (!synthetic_specs.empty()) ctx.write("alignment.tsv", alignment);
  ctx.write("report.json", summary.dump(2) + "\n");
}

// ---------------------------------------------------------------------------

std::string keys_footer(const std::string& command)
{
  const auto keys = keys_for_command(command);
  if (keys.empty()) return "Config keys: none";
  std::ostringstream out;
  out << "Config keys (set with --config FILE or --set key=value):\n";
  for (const auto* k : keys) out << "  " << k->name << " (default " << k->default_value.dump() << "): " << k->help << "\n";
  return out.str();
}

void add_common(CLI::App* app, CommonOptions& common)
{
  app->add_option("--preset", common.preset, "dataset preset")->check(CLI::IsMember(preset_names()));
  app->add_option("--config", common.config_file, "JSON config file")->check(CLI::ExistingFile);
  app->add_option("--set", common.overrides, "override a config key (key=value); repeatable");
  app->add_option("--out", common.out, "output directory")->required();
}

void add_corpus(CLI::App* app, CorpusOptions& opts, bool need_profiles, bool need_embeddings, bool allow_split)
{
  app->add_option("--schema", opts.schema, "corpus schema JSON")->required()->check(CLI::ExistingFile);
  app->add_option("--annotations", opts.annotations, "annotations JSON-lines file")->required()->check(CLI::ExistingFile);
  if (need_profiles)
    app->add_option("--profiles", opts.profiles, "annotator profiles JSON-lines file")->required()->check(CLI::ExistingFile);
  if (need_embeddings)
    app->add_option("--embeddings", opts.embeddings, "text embedding file")->required()->check(CLI::ExistingFile);
  if (allow_split) app->add_option("--split", opts.split_file, "split TSV from the split command")->check(CLI::ExistingFile);
}

}  // namespace

int main(int argc, char** argv)
{
  CLI::App app{"Demographic-aware mixture-of-experts toolkit for annotator rating prediction"};
  app.require_subcommand(1);
  app.set_version_flag("--version", artifact_version() + " (" + artifact_git_revision() + ")");
  const std::vector<std::string> args(argv + 1, argv + argc);

  CommonOptions common;
  CorpusOptions corpus;
  std::string alpha_metric = "interval", checkpoint, which = "test", synthetic_path;
  std::optional<std::string> texts_file, cache_path, reference;
  std::vector<std::string> synthetic_specs;
  std::function<int()> action;

  auto sub = [&](const std::string& name, const std::string& help) {
    auto* s = app.add_subcommand(name, help);
    add_common(s, common);
    s->footer(keys_footer(name));
    return s;
  };
  auto make = [&](const std::string& name, auto body) {
    return [&, name, body] {
      Context ctx(name, args, common);
      return run(ctx, body);
    };
  };

  auto* ingest_cmd = sub("ingest", "validate and normalize a corpus");
  add_corpus(ingest_cmd, corpus, true, false, false);
  ingest_cmd->callback([&] { action = make("ingest", [&](Context& c) { cmd_ingest(c, corpus); }); });

  auto* stats_cmd = sub("stats", "corpus statistics");
  add_corpus(stats_cmd, corpus, true, false, false);
  stats_cmd->add_option("--alpha-metric", alpha_metric, "interval or nominal")
      ->check(CLI::IsMember({"interval", "nominal"}));
  stats_cmd->callback([&] { action = make("stats", [&](Context& c) { cmd_stats(c, corpus, alpha_metric); }); });

  auto* split_cmd = sub("split", "instance-level train/dev/test split");
  add_corpus(split_cmd, corpus, false, false, false);
  split_cmd->callback([&] { action = make("split", [&](Context& c) { cmd_split(c, corpus); }); });

  auto* train_cmd = sub("train", "train a model on real annotations");
  add_corpus(train_cmd, corpus, true, true, true);
  train_cmd->callback([&] { action = make("train", [&](Context& c) { cmd_train(c, corpus); }); });

  auto* eval_cmd = sub("evaluate", "per-group MAE with bootstrap intervals and distribution metrics");
  add_corpus(eval_cmd, corpus, true, true, true);
  eval_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--which", which, "split to evaluate")->check(CLI::IsMember({"train", "dev", "test", "all"}));
  eval_cmd->callback(
      [&] { action = make("evaluate", [&](Context& c) { cmd_evaluate(c, corpus, checkpoint, which); }); });

  auto* analyze_cmd = sub("analyze-experts", "expert usage, specialization scores and cross-group map");
  add_corpus(analyze_cmd, corpus, true, true, true);
  analyze_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
  analyze_cmd->add_option("--which", which, "split to analyze")->check(CLI::IsMember({"train", "dev", "test", "all"}));
  analyze_cmd->callback(
      [&] { action = make("analyze-experts", [&](Context& c) { cmd_analyze(c, corpus, checkpoint, which); }); });

  auto* gen_cmd = sub("generate-synthetic", "persona-prompted synthetic annotations");
  add_corpus(gen_cmd, corpus, true, false, true);
  gen_cmd->add_option("--texts", texts_file, "JSON-lines file of {instance_id, text}")->check(CLI::ExistingFile);
  gen_cmd->add_option("--cache", cache_path, "response cache (JSON lines; created if missing)");
  gen_cmd->callback([&] {
    action = make("generate-synthetic", [&](Context& c) { cmd_generate(c, corpus, texts_file, cache_path); });
  });

  auto* blend_cmd = sub("blend-train", "train on real plus synthetic annotations");
  add_corpus(blend_cmd, corpus, true, true, true);
  blend_cmd->add_option("--synthetic", synthetic_path, "synthetic annotations")->required()->check(CLI::ExistingFile);
  blend_cmd->add_option("--reference", reference, "real-data checkpoint defining trustworthiness (weighted)")
      ->check(CLI::ExistingFile);
  blend_cmd->callback(
      [&] { action = make("blend-train", [&](Context& c) { cmd_blend(c, corpus, synthetic_path, reference); }); });

  auto* report_cmd = sub("report", "baseline and synthetic-alignment tables");
  add_corpus(report_cmd, corpus, true, false, true);
  report_cmd->add_option("--synthetic", synthetic_specs, "synthetic annotations, optionally name=path; repeatable");
  report_cmd->add_option("--which", which, "split to report on")->check(CLI::IsMember({"train", "dev", "test", "all"}));
  report_cmd->callback([&] {
    if (report_cmd->count("--which") == 0) which = "all";
    action = make("report", [&](Context& c) { cmd_report(c, corpus, synthetic_specs, which); });
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }
  return action ? action() : kValidation;
}
