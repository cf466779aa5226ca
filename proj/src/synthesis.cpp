#include "demoe/synthesis.hpp"

#include "demoe/io.hpp"
#include "demoe/kmeans.hpp"
#include "demoe/random.hpp"
#include "demoe/ridge.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

namespace demoe {

std::string_view to_string(GenerationStrategy strategy)
{
  switch (strategy) {
    case GenerationStrategy::half_x: return "half_x";
    case GenerationStrategy::one_x: return "one_x";
    case GenerationStrategy::fill: return "fill";
    case GenerationStrategy::cluster: return "cluster";
  }
  return "unknown";
}

GenerationStrategy generation_strategy_from_string(const std::string& name)
{
  if (name == "half_x") return GenerationStrategy::half_x;
  if (name == "one_x") return GenerationStrategy::one_x;
  if (name == "fill") return GenerationStrategy::fill;
  if (name == "cluster") return GenerationStrategy::cluster;
  throw InputError("unknown generation strategy '" + name + "' (expected half_x, one_x, fill or cluster)");
}

std::size_t GenerationPlan::total() const
{
  std::size_t n = 0;
  for (const auto& e : entries) n += e.personas.size();
  return n;
}

nlohmann::json GenerationPlan::to_json(const std::vector<Persona>& pool) const
{
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& e : entries) {
    nlohmann::json personas = nlohmann::json::array();
    for (auto p : e.personas) personas.push_back(pool.at(p).persona_id);
    nlohmann::json row = {{"instance_id", e.instance_id}, {"personas", personas}, {"pool_exhausted", e.pool_exhausted}};
    if (e.cluster) {
      row["cluster"] = *e.cluster;
      row["sources"] = e.sources;
      row["roles"] = e.roles;
    }
    rows.push_back(std::move(row));
  }
  return {{"strategy", to_string(strategy)}, {"seed", seed}, {"total", total()}, {"entries", rows}};
}

namespace {

/// `count` draws from [0, n): without replacement while possible, then from
/// fresh permutations. Returns true in `.second` when draws had to repeat.
std::pair<std::vector<std::size_t>, bool> draw_indices(Rng& rng, std::size_t n, std::size_t count)
{
  std::vector<std::size_t> out;
  if (count == 0 || n == 0) return {out, count > 0};
  bool repeated = false;
  while (out.size() < count) {
    const std::size_t take = std::min(n, count - out.size());
    auto batch = rng.sample_without_replacement(n, take);
    if (!out.empty()) repeated = true;
    out.insert(out.end(), batch.begin(), batch.end());
  }
  return {out, repeated};
}

double sample_sd(const std::vector<double>& v)
{
  if (v.size() < 2) return 0.0;
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace

AnnotatorClustering cluster_annotators(const std::vector<AnnotationRecord>& records, const ProfileIndex& profiles,
                                       const CorpusSchema& schema, std::uint64_t seed, const ClusterPlanParams& params)
{
  std::map<std::string, std::vector<double>> ratings;
  for (const auto& r : records)
    if (!r.is_synthetic) ratings[r.annotator_id].push_back(r.rating);
  if (ratings.empty()) throw InputError("cluster strategy needs real annotations");

  OneHotEncoder encoder(schema);
  const auto width = static_cast<Eigen::Index>(encoder.width());
  Eigen::MatrixXd X(static_cast<Eigen::Index>(ratings.size()), width + 2);
  AnnotatorClustering out;
  Eigen::Index row = 0;
  for (const auto& [id, values] : ratings) {
    out.annotators.push_back(id);
    const AnnotatorProfile* p = profiles.find(id);
    AnnotatorProfile blank{id, {}};
    X.row(row).head(width) = encoder.encode(p ? *p : blank).transpose();
    X(row, width) = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    X(row, width + 1) = sample_sd(values);
    ++row;
  }
  const Eigen::MatrixXd Z = standardize_columns(X);
  KMeansResult km;
  try {
    km = kmeans(Z, params.clusters, substream_seed(seed, "generation.kmeans"));
  } catch (const std::invalid_argument& e) {
    throw InputError(std::string("cluster strategy: ") + e.what());
  }
  out.assignment = km.assignment;

  const auto k = static_cast<std::size_t>(km.centroids.rows());
  std::vector<std::vector<std::size_t>> members(k);
  for (std::size_t i = 0; i < out.assignment.size(); ++i) members[out.assignment[i]].push_back(i);
  auto dist = [&](std::size_t i, std::size_t c) {
    return (Z.row(static_cast<Eigen::Index>(i)) - km.centroids.row(static_cast<Eigen::Index>(c))).squaredNorm();
  };

  out.selections.resize(k);
  for (std::size_t c = 0; c < k; ++c) {
    auto reps = members[c];
    std::stable_sort(reps.begin(), reps.end(), [&](auto a, auto b) { return dist(a, c) < dist(b, c); });
    if (reps.size() > params.representatives) reps.resize(params.representatives);
    for (auto i : reps) out.selections[c].representatives.push_back(out.annotators[i]);

    std::vector<std::size_t> others;
    for (std::size_t o = 0; o < k; ++o)
      if (o != c) others.push_back(o);
    auto centroid_gap = [&](std::size_t o) {
      return (km.centroids.row(static_cast<Eigen::Index>(o)) - km.centroids.row(static_cast<Eigen::Index>(c)))
          .squaredNorm();
    };
    std::stable_sort(others.begin(), others.end(),
                     [&](auto a, auto b) { return centroid_gap(a) > centroid_gap(b); });
    for (auto o : others) {
      auto pick = members[o];
      // Within a distant cluster, members farthest from the chosen centroid go first.
      std::stable_sort(pick.begin(), pick.end(), [&](auto a, auto b) { return dist(a, c) > dist(b, c); });
      for (auto i : pick) {
        if (out.selections[c].disagreeers.size() >= params.disagreeers) break;
        out.selections[c].disagreeers.push_back(out.annotators[i]);
      }
      if (out.selections[c].disagreeers.size() >= params.disagreeers) break;
    }
  }
  return out;
}

GenerationPlan plan_generation(const std::vector<AnnotationRecord>& records, const ProfileIndex& profiles,
                               const std::vector<Persona>& pool, const CorpusSchema& schema,
                               GenerationStrategy strategy, std::uint64_t seed, const ClusterPlanParams& cluster)
{
  if (pool.empty()) throw InputError("persona pool is empty");
  std::map<std::string, std::size_t> counts;
  for (const auto& r : records)
    if (!r.is_synthetic) ++counts[r.instance_id];
  std::size_t max_n = 0;
  for (const auto& [id, n] : counts) max_n = std::max(max_n, n);

  GenerationPlan plan;
  plan.strategy = strategy;
  plan.seed = seed;

  if (strategy != GenerationStrategy::cluster) {
    for (const auto& [id, n] : counts) {
      std::size_t quota = 0;
      switch (strategy) {
        case GenerationStrategy::half_x: quota = (n + 1) / 2; break;
        case GenerationStrategy::one_x: quota = n; break;
        case GenerationStrategy::fill: quota = max_n - n; break;
        case GenerationStrategy::cluster: break;
      }
      Rng rng(substream_seed(seed, "generation/" + id));
      auto [draws, repeated] = draw_indices(rng, pool.size(), quota);
      plan.entries.push_back({id, std::move(draws), repeated, std::nullopt, {}, {}});
    }
    return plan;
  }

  if (cluster.clusters < 2) throw InputError("cluster strategy needs at least 2 clusters");
  if (cluster.per_instance == 0) throw InputError("cluster strategy needs a positive per-instance quota");
  std::map<std::vector<std::string>, std::size_t> persona_of;
  for (std::size_t i = 0; i < pool.size(); ++i) persona_of[pool[i].combination] = i;
  const auto clustering = cluster_annotators(records, profiles, schema, seed, cluster);
  auto persona_for = [&](const std::string& annotator) {
    const AnnotatorProfile* p = profiles.find(annotator);
    const auto combo = p ? p->combination(schema) : AnnotatorProfile{annotator, {}}.combination(schema);
    auto it = persona_of.find(combo);
    if (it == persona_of.end()) throw InputError("no persona for the demographics of annotator " + annotator);
    return it->second;
  };

  const std::size_t k = clustering.selections.size();
  const std::size_t n_rep = (cluster.per_instance + 1) / 2;
  const std::size_t n_dis = cluster.per_instance / 2;
  for (const auto& [id, n] : counts) {
    Rng rng(substream_seed(seed, "generation/" + id));
    const std::size_t c = rng.uniform_index(k);
    const auto& sel = clustering.selections[c];
    PlanEntry entry{id, {}, false, c, {}, {}};
    auto add = [&](const std::vector<std::string>& from, std::size_t quota, const char* role) {
      auto [draws, repeated] = draw_indices(rng, from.size(), quota);
      entry.pool_exhausted = entry.pool_exhausted || repeated;
      for (auto d : draws) {
        entry.personas.push_back(persona_for(from[d]));
        entry.sources.push_back(from[d]);
        entry.roles.push_back(role);
      }
    };
    add(sel.representatives, n_rep, "representative");
    add(sel.disagreeers, n_dis, "disagreeer");
    plan.entries.push_back(std::move(entry));
  }
  return plan;
}

AnnotationRecord SyntheticAnnotation::to_record() const
{
  return {instance_id, persona_id, rating, true, {}};
}

nlohmann::json SyntheticAnnotation::to_json() const
{
  auto j = record_to_json(to_record());
  j["explanation"] = explanation;
  j["provider"] = provider;
  j["raw_response"] = raw_response;
  auto persona_json = profile_to_json(persona);
  persona_json.erase("annotator_id");
  j["persona"] = persona_json;
  if (!quality_ratings.empty()) j["quality_ratings"] = quality_ratings;
  return j;
}

SyntheticAnnotation SyntheticAnnotation::from_json(const nlohmann::json& j, const CorpusSchema& schema)
{
  SyntheticAnnotation s;
  try {
    s.instance_id = j.at("instance_id").get<std::string>();
    s.persona_id = j.at("annotator_id").get<std::string>();
    s.rating = j.at("rating").get<double>();
    s.explanation = j.value("explanation", "");
    s.provider = j.value("provider", "");
    s.raw_response = j.value("raw_response", "");
    if (auto q = j.find("quality_ratings"); q != j.end()) s.quality_ratings = q->get<std::vector<double>>();
    nlohmann::json persona = j.value("persona", nlohmann::json::object());
    persona["annotator_id"] = s.persona_id;
    s.persona = parse_profile(persona, schema);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed synthetic annotation: ") + e.what());
  }
  if (!schema.scale.contains(s.rating)) throw InputError("synthetic rating outside the scale");
  return s;
}

nlohmann::json GenerationFailure::to_json() const
{
  return {{"instance_id", instance_id},
          {"annotator_id", persona_id},
          {"error", error},
          {"raw_response", raw_response},
          {"attempts", attempts}};
}

GenerationResult generate(const GenerationPlan& plan, const std::vector<Persona>& pool,
                          const std::map<std::string, std::string>& instance_texts, const CorpusSchema& schema,
                          const DatasetTemplate& tmpl, Provider& provider, ResponseCache* cache,
                          const GenerationOptions& options)
{
  if (options.retry.max_attempts == 0) throw InputError("retry policy needs at least one attempt");
  struct Job {
    const std::string* instance;
    const Persona* persona;
  };
  std::vector<Job> jobs;
  for (const auto& e : plan.entries) {
    if (!e.personas.empty() && !instance_texts.count(e.instance_id))
      throw InputError("no text for instance " + e.instance_id);
    for (auto p : e.personas) jobs.push_back({&e.instance_id, &pool.at(p)});
  }

  std::vector<std::optional<SyntheticAnnotation>> done(jobs.size());
  std::vector<std::optional<GenerationFailure>> failed(jobs.size());
  std::atomic<std::size_t> next{0}, calls{0}, hits{0};
  auto sleep = options.retry.sleep;
  if (!sleep) sleep = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };

  auto run = [&](std::size_t j) {
    const auto& job = jobs[j];
    const auto request = render_prompt(tmpl, job.persona->profile, schema, *job.instance,
                                       instance_texts.at(*job.instance), options.decoding, options.model);
    const std::string key = cache_key(request);
    auto accept = [&](const std::string& raw, const ParsedResponse& parsed) {
      done[j] = SyntheticAnnotation{*job.instance,   job.persona->persona_id, job.persona->profile,
                                    parsed.rating,   parsed.explanation,      raw,
                                    provider.id(),   parsed.quality_ratings};
    };
    if (cache) {
      if (auto hit = cache->get(key)) {
        auto parsed = parse_response(*hit, tmpl);
        if (parsed.ok()) {
          ++hits;
          accept(*hit, *parsed.value);
          return;
        }
      }
    }
    GenerationFailure failure{*job.instance, job.persona->persona_id, {}, {}, 0};
    auto backoff = options.retry.initial_backoff;
    for (std::size_t attempt = 1; attempt <= options.retry.max_attempts; ++attempt) {
      failure.attempts = attempt;
      bool retryable = true;
      try {
        ++calls;
        const std::string raw = provider.complete(request);
        auto parsed = parse_response(raw, tmpl);
        if (parsed.ok()) {
          if (cache) cache->put(key, raw);
          accept(raw, *parsed.value);
          return;
        }
        failure.error = std::string(to_string(parsed.error->kind)) + ": " + parsed.error->message;
        failure.raw_response = raw;
      } catch (const ProviderError& e) {
        failure.error = e.what();
        failure.raw_response.clear();
        retryable = e.transient();
      }
      if (!retryable) break;
      if (attempt < options.retry.max_attempts) {
        sleep(backoff);
        backoff = std::chrono::milliseconds(
            static_cast<long long>(std::llround(static_cast<double>(backoff.count()) * options.retry.backoff_multiplier)));
      }
    }
    failed[j] = std::move(failure);
  };

  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (std::size_t j; (j = next++) < jobs.size();) {
      try {
        run(j);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(options.parallelism, jobs.size()));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool_threads;
    for (std::size_t t = 0; t < threads; ++t) pool_threads.emplace_back(worker);
    for (auto& t : pool_threads) t.join();
  }
  if (error) std::rethrow_exception(error);

  GenerationResult result;
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    if (done[j]) result.annotations.push_back(std::move(*done[j]));
    if (failed[j]) result.failures.push_back(std::move(*failed[j]));
  }
  result.provider_calls = calls.load();
  result.cache_hits = hits.load();
  return result;
}

std::vector<SyntheticAnnotation> read_synthetic_annotations(const std::filesystem::path& path,
                                                            const CorpusSchema& schema)
{
  std::vector<SyntheticAnnotation> out;
  for_each_json_line(path, [&](const nlohmann::json& row, std::size_t line) {
    try {
      out.push_back(SyntheticAnnotation::from_json(row, schema));
    } catch (const InputError& e) {
      throw InputError(e.what(), line);
    }
  });
  return out;
}

GroupRatingIndex::GroupRatingIndex(const std::vector<AnnotationRecord>& human, const ProfileIndex& profiles,
                                   const CorpusSchema& schema)
{
  for (const auto& r : human) {
    if (r.is_synthetic) continue;
    const AnnotatorProfile* p = profiles.find(r.annotator_id);
    for (std::size_t c = 0; c < schema.categories.size(); ++c) {
      const std::string v = p ? p->value(schema.categories[c].name) : std::string(kUndisclosed);
      if (v == kUndisclosed) continue;
      ratings_[{r.instance_id, c, v}].push_back(r.rating);
    }
  }
}

const std::vector<double>* GroupRatingIndex::ratings(const std::string& instance_id, std::size_t category,
                                                     const std::string& value) const
{
  auto it = ratings_.find({instance_id, category, value});
  return it == ratings_.end() ? nullptr : &it->second;
}

AlignmentMode alignment_mode_from_string(const std::string& name)
{
  if (name == "group_mean") return AlignmentMode::group_mean;
  if (name == "per_annotator") return AlignmentMode::per_annotator;
  throw InputError("unknown alignment mode '" + name + "' (expected group_mean or per_annotator)");
}

AlignmentReport alignment_report(const std::vector<SyntheticAnnotation>& synthetic,
                                 const std::vector<AnnotationRecord>& human, const ProfileIndex& human_profiles,
                                 const CorpusSchema& schema, AlignmentMode mode, const std::string& system)
{
  const GroupRatingIndex index(human, human_profiles, schema);
  using Pairs = std::pair<std::vector<double>, std::vector<double>>;
  std::map<std::pair<std::size_t, std::string>, Pairs> groups;
  Pairs pooled;
  for (const auto& s : synthetic) {
    for (std::size_t c = 0; c < schema.categories.size(); ++c) {
      const std::string v = s.persona.value(schema.categories[c].name);
      if (v == kUndisclosed) continue;
      const auto* ratings = index.ratings(s.instance_id, c, v);
      if (!ratings) continue;
      auto& g = groups[{c, v}];
      auto push = [&](double human_rating) {
        g.first.push_back(s.rating);
        g.second.push_back(human_rating);
        pooled.first.push_back(s.rating);
        pooled.second.push_back(human_rating);
      };
      if (mode == AlignmentMode::group_mean)
        push(std::accumulate(ratings->begin(), ratings->end(), 0.0) / static_cast<double>(ratings->size()));
      else
        for (double h : *ratings) push(h);
    }
  }
  if (pooled.first.empty())
    throw InputError("alignment: no synthetic rating overlaps a human demographic group on the same instance");

  auto mae_of = [](const Pairs& p) {
    double sum = 0;
    for (std::size_t i = 0; i < p.first.size(); ++i) sum += std::abs(p.first[i] - p.second[i]);
    return sum / static_cast<double>(p.first.size());
  };
  AlignmentReport report;
  report.system = system;
  report.mode = mode;
  report.n_pairs = pooled.first.size();
  report.mae = mae_of(pooled);
  report.pearson = pearson_r(pooled.first, pooled.second);
  for (std::size_t c = 0; c < schema.categories.size(); ++c)
    for (const auto& v : schema.categories[c].values()) {
      auto it = groups.find({c, v});
      if (it == groups.end()) continue;
      report.groups.push_back({schema.categories[c].name, v, it->second.first.size(), mae_of(it->second),
                               pearson_r(it->second.first, it->second.second)});
    }
  return report;
}

nlohmann::json AlignmentReport::to_json() const
{
  auto corr = [](const Correlation& c) { return nlohmann::json{{"r", c.r}, {"degenerate", c.degenerate}}; };
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& g : groups)
    rows.push_back({{"category", g.category},
                    {"value", g.value},
                    {"n_pairs", g.n_pairs},
                    {"mae", g.mae},
                    {"pearson", corr(g.pearson)}});
  return {{"system", system},
          {"mode", mode == AlignmentMode::group_mean ? "group_mean" : "per_annotator"},
          {"n_pairs", n_pairs},
          {"mae", mae},
          {"pearson", corr(pearson)},
          {"groups", rows}};
}

std::string AlignmentReport::to_tsv(bool header) const
{
  std::ostringstream out;
  if (header) out << "system\tcategory\tvalue\tpairs\tmae\tpearson_r\tdegenerate\n";
  out << system << "\tall\tall\t" << n_pairs << '\t' << format_double(mae) << '\t' << format_double(pearson.r) << '\t'
      << pearson.degenerate << '\n';
  for (const auto& g : groups)
    out << system << '\t' << g.category << '\t' << g.value << '\t' << g.n_pairs << '\t' << format_double(g.mae) << '\t'
        << format_double(g.pearson.r) << '\t' << g.pearson.degenerate << '\n';
  return out.str();
}

}  // namespace demoe
