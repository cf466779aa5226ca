#pragma once

#include "demoe/corpus.hpp"
#include "demoe/evaluation.hpp"
#include "demoe/persona.hpp"
#include "demoe/prompts.hpp"
#include "demoe/provider.hpp"

#include <json.hpp>

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

namespace demoe {

enum class GenerationStrategy { half_x, one_x, fill, cluster };
std::string_view to_string(GenerationStrategy strategy);
GenerationStrategy generation_strategy_from_string(const std::string& name);

struct ClusterPlanParams {
  std::size_t clusters = 10;
  std::size_t representatives = 20;
  std::size_t disagreeers = 20;
  /// Synthetic annotations per instance; representatives get the larger half.
  std::size_t per_instance = 6;
};

struct PlanEntry {
  std::string instance_id;
  std::vector<std::size_t> personas;  // indices into the persona pool
  /// Set when the pool was smaller than the request and personas repeat.
  bool pool_exhausted = false;
  /// Cluster strategy: the instance's sampled cluster, and per persona the
  /// real annotator it stands for and its role ("representative" or "disagreeer").
  std::optional<std::size_t> cluster;
  std::vector<std::string> sources;
  std::vector<std::string> roles;
};

struct GenerationPlan {
  GenerationStrategy strategy = GenerationStrategy::half_x;
  std::uint64_t seed = 0;
  std::vector<PlanEntry> entries;  // sorted by instance id

  std::size_t total() const;
  nlohmann::json to_json(const std::vector<Persona>& pool) const;
};

/// Per-instance persona assignment. half_x: ceil(n/2); one_x: n; fill:
/// max_n - n, where n is the instance's real annotation count. Persona draws
/// are uniform without replacement per instance, from the substream
/// "generation/<instance id>".
///
/// cluster: k-means over real annotators on standardized [demographic
/// one-hots, rating mean, rating SD]. For each instance one cluster is drawn;
/// its representatives are the members nearest its centroid, its disagreeers
/// are taken from the clusters whose centroids are farthest from it. Each
/// instance receives ceil(q/2) representatives and floor(q/2) disagreeers,
/// mapped to the persona of their demographic combination.
GenerationPlan plan_generation(const std::vector<AnnotationRecord>& records, const ProfileIndex& profiles,
                               const std::vector<Persona>& pool, const CorpusSchema& schema,
                               GenerationStrategy strategy, std::uint64_t seed, const ClusterPlanParams& cluster = {});

/// Representatives and disagreeers of one cluster (real annotator ids).
struct ClusterSelection {
  std::vector<std::string> representatives;
  std::vector<std::string> disagreeers;
};

struct AnnotatorClustering {
  std::vector<std::string> annotators;  // sorted
  std::vector<std::size_t> assignment;
  std::vector<ClusterSelection> selections;  // per cluster
};

AnnotatorClustering cluster_annotators(const std::vector<AnnotationRecord>& records, const ProfileIndex& profiles,
                                       const CorpusSchema& schema, std::uint64_t seed, const ClusterPlanParams& params);

struct SyntheticAnnotation {
  std::string instance_id;
  std::string persona_id;
  AnnotatorProfile persona;
  double rating = 0.0;
  std::string explanation;
  std::string raw_response;
  std::string provider;
  std::vector<double> quality_ratings;

  AnnotationRecord to_record() const;
  nlohmann::json to_json() const;
  static SyntheticAnnotation from_json(const nlohmann::json& j, const CorpusSchema& schema);
};

struct GenerationFailure {
  std::string instance_id;
  std::string persona_id;
  std::string error;
  std::string raw_response;
  std::size_t attempts = 0;

  nlohmann::json to_json() const;
};

struct RetryPolicy {
  std::size_t max_attempts = 3;
  std::chrono::milliseconds initial_backoff{200};
  double backoff_multiplier = 2.0;
  /// Replaceable for tests; defaults to std::this_thread::sleep_for.
  std::function<void(std::chrono::milliseconds)> sleep;
};

struct GenerationOptions {
  DecodingParams decoding;
  std::string model;
  RetryPolicy retry;
  std::size_t parallelism = 4;
};

struct GenerationResult {
  std::vector<SyntheticAnnotation> annotations;  // plan order
  std::vector<GenerationFailure> failures;        // plan order
  std::size_t provider_calls = 0;
  std::size_t cache_hits = 0;
};

/// Queries `provider` for every planned (instance, persona) pair. Transient
/// provider errors and unparseable responses are retried with exponential
/// backoff; pairs still failing are reported in `failures`. Parsed responses
/// are cached; cached pairs issue no provider request.
GenerationResult generate(const GenerationPlan& plan, const std::vector<Persona>& pool,
                          const std::map<std::string, std::string>& instance_texts, const CorpusSchema& schema,
                          const DatasetTemplate& tmpl, Provider& provider, ResponseCache* cache,
                          const GenerationOptions& options);

std::vector<SyntheticAnnotation> read_synthetic_annotations(const std::filesystem::path& path,
                                                            const CorpusSchema& schema);

/// Human ratings per (instance, category, value), for comparing synthetic
/// ratings with the ratings of a persona's demographic groups.
class GroupRatingIndex {
public:
  GroupRatingIndex(const std::vector<AnnotationRecord>& human, const ProfileIndex& profiles,
                   const CorpusSchema& schema);
  /// Ratings of annotators with `value` in category `category` on the
  /// instance; nullptr if there are none.
  const std::vector<double>* ratings(const std::string& instance_id, std::size_t category,
                                     const std::string& value) const;

private:
  std::map<std::tuple<std::string, std::size_t, std::string>, std::vector<double>> ratings_;
};

enum class AlignmentMode { group_mean, per_annotator };
AlignmentMode alignment_mode_from_string(const std::string& name);

struct AlignmentGroup {
  std::string category;
  std::string value;
  std::size_t n_pairs = 0;
  double mae = 0.0;
  Correlation pearson;
};

struct AlignmentReport {
  std::string system;
  AlignmentMode mode = AlignmentMode::group_mean;
  std::size_t n_pairs = 0;
  double mae = 0.0;
  Correlation pearson;
  std::vector<AlignmentGroup> groups;

  nlohmann::json to_json() const;
  std::string to_tsv(bool header = true) const;
};

/// Compares each synthetic rating with human ratings of the same instance
/// from annotators sharing one of the persona's disclosed attributes:
/// against the group's mean rating (group_mean) or every individual rating
/// (per_annotator). Overall values pool the pairs of every group. Throws
/// InputError when no pair exists.
AlignmentReport alignment_report(const std::vector<SyntheticAnnotation>& synthetic,
                                 const std::vector<AnnotationRecord>& human, const ProfileIndex& human_profiles,
                                 const CorpusSchema& schema, AlignmentMode mode = AlignmentMode::group_mean,
                                 const std::string& system = "synthetic");

}  // namespace demoe
