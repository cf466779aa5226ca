#pragma once

#include "demoe/corpus.hpp"
#include "demoe/model.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <string>
#include <vector>

namespace demoe {

/// Expert usage of each observed subgroup of one demographic category.
struct GroupUsage {
  std::string category;
  std::vector<std::string> values;
  std::vector<Eigen::VectorXd> usage;  // probability vectors over experts, aligned with values
  std::vector<std::size_t> counts;     // samples per subgroup
};

/// Mean per-sample usage (selected-expert mixing weights) of every subgroup
/// with at least one sample, per schema category. `profiles[i]` belongs to `decisions[i]`.
std::vector<GroupUsage> collect_group_usage(const std::vector<RoutingDecision>& decisions,
                                            const std::vector<const AnnotatorProfile*>& profiles,
                                            const CorpusSchema& schema, std::size_t num_experts);

struct SpecializationScore {
  std::string category;
  double raw = 0.0;         // mean pairwise symmetric KL
  double normalized = 0.0;  // raw / ln K
  std::size_t n_subgroups = 0;
};

/// Mean symmetric KL over unordered subgroup pairs divided by ln K (K experts).
/// A single subgroup, or K = 1, scores 0.
SpecializationScore within_group_score(const GroupUsage& usage);

/// Leaf order of average-linkage agglomerative clustering on 1 - Pearson r
/// between rows. Constant rows have correlation 0 with everything.
std::vector<std::size_t> cluster_order(const Eigen::MatrixXd& rows);

struct CrossGroupMap {
  std::vector<std::string> features;  // "category=value"
  std::vector<std::string> experts;
  Eigen::MatrixXd coefficients;       // features x experts
  std::vector<std::size_t> row_order;
  std::vector<std::size_t> col_order;

  /// Long-format table in clustered order: feature, expert, coefficient, row_rank, col_rank.
  std::string to_tsv() const;
};

/// One ridge fit per expert from standardized one-hot demographics to that
/// expert's per-sample usage share (`usage` is samples x experts).
CrossGroupMap cross_group_map(const Eigen::MatrixXd& usage, const std::vector<const AnnotatorProfile*>& profiles,
                              const CorpusSchema& schema, double ridge_penalty = 1.0);

/// Rows of `usage` renormalized to sum to one.
Eigen::MatrixXd usage_heatmap(const GroupUsage& usage);
/// Long-format table: category, value, expert, share, count.
std::string usage_heatmap_tsv(const GroupUsage& usage);

/// Within-group bar-chart table: category, raw, normalized, subgroups.
std::string specialization_scores_tsv(const std::vector<SpecializationScore>& scores);

}  // namespace demoe
