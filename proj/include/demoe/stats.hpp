#pragma once

#include "demoe/corpus.hpp"

#include <json.hpp>

#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

namespace demoe {

enum class AgreementMetric { interval, nominal };

AgreementMetric agreement_metric_from_string(const std::string& name);

/// Krippendorff's alpha from the coincidence matrix of pairable values.
/// Instances with fewer than two ratings are not pairable and are ignored.
/// When every pairable value is identical (zero expected disagreement) the
/// result is 1. Throws InputError with fewer than two pairable instances.
double krippendorff_alpha(const std::vector<AnnotationRecord>& records,
                          AgreementMetric metric = AgreementMetric::interval);

/// Mean over instances of the Shannon entropy of the per-instance rating
/// distribution. Ratings are binned to the nearest integer scale point.
double mean_entropy(const std::vector<AnnotationRecord>& records, const RatingScale& scale,
                    double log_base = std::numbers::e);

/// Mean over instances (with at least two ratings) of the sample standard
/// deviation of ratings.
double mean_instance_sd(const std::vector<AnnotationRecord>& records);

/// Per-category demographic signal: ridge regression from standardized
/// one-hot demographic features to ratings, reported as the L2 norm of each
/// category's coefficient block.
std::map<std::string, double> demographic_signal(const std::vector<AnnotationRecord>& records,
                                                 const std::vector<AnnotatorProfile>& profiles,
                                                 const CorpusSchema& schema, double ridge_penalty);

struct StatsOptions {
  AgreementMetric alpha_metric = AgreementMetric::interval;
  double entropy_base = std::numbers::e;
  double ridge_penalty = 1.0;
};

struct CorpusStatistics {
  std::size_t n_instances = 0;
  std::size_t n_annotators = 0;
  std::size_t n_annotations = 0;
  std::size_t n_combinations = 0;
  double avg_annotators_per_instance = 0.0;
  std::optional<double> krippendorff_alpha;
  double mean_entropy = 0.0;
  double mean_instance_sd = 0.0;
  std::map<std::string, double> demographic_signal;

  nlohmann::json to_json() const;
  /// One header row and one data row, columns mirroring the dataset table.
  std::string to_tsv(const std::string& dataset_name) const;
};

/// Computes every statistic for a non-empty corpus. Alpha is left empty when
/// the corpus has too few pairable instances.
CorpusStatistics compute_statistics(const Corpus& corpus, const CorpusSchema& schema, const StatsOptions& options = {});

}  // namespace demoe
