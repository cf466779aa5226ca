#pragma once

#include "demoe/corpus.hpp"
#include "demoe/model.hpp"
#include "demoe/text_store.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace demoe {

struct PredictionRecord {
  std::string instance_id;
  std::string annotator_id;
  double predicted = 0.0;
  double actual = 0.0;
};

/// Model predictions for `records`. Predictions are clipped to the schema's
/// rating scale unless `clip` is false.
std::vector<PredictionRecord> predict_records(const DemMoE& model, const TextEmbeddingStore& store,
                                              const std::vector<AnnotationRecord>& records,
                                              const ProfileIndex& profiles, bool clip = true);

std::vector<PredictionRecord> clip_predictions(std::vector<PredictionRecord> records, const RatingScale& scale);

/// Mean absolute error. Throws std::invalid_argument on empty input.
double mae(std::span<const PredictionRecord> records);

struct Correlation {
  double r = 0.0;
  /// Set when either series has zero variance; r is then reported as 0.
  bool degenerate = false;
};

/// Sample Pearson correlation. Throws std::invalid_argument with fewer than two points.
Correlation pearson_r(std::span<const double> x, std::span<const double> y);
Correlation pearson_r(std::span<const PredictionRecord> records);

/// Earth mover's distance between distributions over the same ordered,
/// unit-spaced support: sum |CDF_p - CDF_q|.
double emd_1d(const Eigen::Ref<const Eigen::VectorXd>& p, const Eigen::Ref<const Eigen::VectorXd>& q);

/// Histogram over the scale's integer points (ratings binned to the nearest point), normalized.
Eigen::VectorXd rating_distribution(std::span<const double> ratings, const RatingScale& scale);

struct BootstrapOptions {
  std::size_t n_boot = 1000;
  std::uint64_t seed = 0;
  double confidence = 0.95;
  double alpha = 0.05;  // significance level for system comparisons
};

struct SubgroupResult {
  std::string category;
  std::string value;
  std::size_t count = 0;
  /// Empty subgroups are kept and flagged; their MAE and CI are NaN.
  bool empty = false;
  double mae = 0.0;
  double ci_lower = 0.0;
  double ci_upper = 0.0;
};

struct GroupReport {
  std::string system;
  std::size_t total = 0;
  SubgroupResult overall;
  std::vector<SubgroupResult> subgroups;

  const SubgroupResult& find(const std::string& category, const std::string& value) const;
  nlohmann::json to_json() const;
  /// Long-format table: system, category, value, count, mae, ci_lower, ci_upper.
  std::string to_tsv(bool header = true) const;
};

/// Per (category, value) MAE with percentile bootstrap intervals. Records are
/// canonically sorted before resampling; replicate r of subgroup (c, v) draws
/// from the substream "bootstrap/c=v" with index r.
GroupReport group_mae_with_bootstrap(std::vector<PredictionRecord> records, const ProfileIndex& profiles,
                                     const CorpusSchema& schema, const BootstrapOptions& options,
                                     const std::string& system = "model");

struct SystemComparison {
  std::string category;  // "all" (value "all") for the overall comparison
  std::string value;
  std::string system_a;
  std::string system_b;
  std::size_t count = 0;
  double mae_a = 0.0;
  double mae_b = 0.0;
  /// Share of paired bootstrap replicates with MAE_a - MAE_b >= 0.
  double p_value = 1.0;
  bool a_better = false;
};

/// Paired bootstrap of MAE differences between two systems scored on the same
/// (instance, annotator) pairs, overall and per subgroup. Throws
/// std::invalid_argument if the two prediction sets cover different pairs.
std::vector<SystemComparison> compare_systems(const std::string& name_a, std::vector<PredictionRecord> a,
                                              const std::string& name_b, std::vector<PredictionRecord> b,
                                              const ProfileIndex& profiles, const CorpusSchema& schema,
                                              const BootstrapOptions& options);

std::string comparisons_to_tsv(const std::vector<SystemComparison>& comparisons);

struct InstanceDistribution {
  std::string instance_id;
  Eigen::VectorXd predicted;
  Eigen::VectorXd actual;
  double emd = 0.0;
  double mean_predicted = 0.0;
  double mean_actual = 0.0;
};

struct DistributionMetrics {
  bool empty = true;
  std::size_t n_records = 0;
  std::size_t n_instances = 0;
  double mae = 0.0;                 // annotator level
  Correlation pearson;              // annotator level
  double instance_mae = 0.0;        // |mean predicted - mean actual| per instance
  Correlation instance_pearson;     // over instance means
  double mean_emd = 0.0;
  std::vector<InstanceDistribution> instances;

  nlohmann::json to_json(bool with_instances = false) const;
};

struct DistributionReport {
  DistributionMetrics overall;
  DistributionMetrics seen;
  DistributionMetrics unseen;

  nlohmann::json to_json(bool with_instances = false) const;
};

/// Distribution metrics on all records and on the partitions whose annotator
/// is / is not in `train_annotators`. Instance-level values aggregate
/// annotator-level predictions by their mean.
DistributionMetrics distribution_metrics(std::span<const PredictionRecord> records, const RatingScale& scale);
DistributionReport seen_unseen_split_eval(const std::vector<PredictionRecord>& records,
                                          const std::set<std::string>& train_annotators, const RatingScale& scale);

/// Pearson r between subgroup MAE and subgroup annotation count. Empty
/// subgroups are skipped. With `counts` given, keys are "category=value";
/// otherwise the report's own counts are used.
Correlation error_density_correlation(const GroupReport& report,
                                      const std::optional<std::map<std::string, double>>& counts = std::nullopt);

enum class BaselineKind { random, mean };
BaselineKind baseline_kind_from_string(const std::string& name);

/// Random: uniform over the scale's integer points (seeded). Mean: the mean
/// rating of `train_records`, for every target record.
std::vector<PredictionRecord> baseline_predict(BaselineKind kind, const std::vector<AnnotationRecord>& train_records,
                                               const std::vector<AnnotationRecord>& targets, const RatingScale& scale,
                                               std::uint64_t seed);

}  // namespace demoe
