#pragma once

#include "demoe/model.hpp"

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace demoe {

/// Smoothing applied to usage distributions before KL.
inline constexpr double kUsageSmoothing = 1e-8;
/// Denominator stabilizer of the orthogonality term.
inline constexpr double kOrthogonalityEpsilon = 1e-8;

/// sum_d 0.5 (mu^2 + sigma^2 - 1 - log sigma^2), sigma^2 = exp(log_variance).
double kl_to_standard_normal(const GaussianEmbedding& emb);

/// Adds d KL / d mean and d KL / d log_variance, scaled by `scale`, into `grad`.
void kl_to_standard_normal_grad(const GaussianEmbedding& emb, double scale, GaussianEmbedding& grad);

/// Population SD of min(c_j / mean(c), 1). Throws std::invalid_argument on all-zero counts.
double load_std_loss(const Eigen::Ref<const Eigen::VectorXd>& counts);
/// Gradient of load_std_loss with respect to the counts.
Eigen::VectorXd load_std_loss_grad(const Eigen::Ref<const Eigen::VectorXd>& counts);

/// Expert outputs x_ij for one sample, one vector per selected expert.
using SelectedOutputs = std::vector<Eigen::VectorXd>;

/// sum_i sum_{j != k} |<x_ij, x_ik>| / (<x_ik, x_ik> + eps). The absolute value keeps the term
/// bounded below. Zero when fewer than two experts are selected.
double orthogonality_loss(const std::vector<SelectedOutputs>& outputs);
/// Gradient with respect to every x_ij, same layout as `outputs`.
std::vector<SelectedOutputs> orthogonality_loss_grad(const std::vector<SelectedOutputs>& outputs);

/// -(1/BE) sum_i sum_j (s_ij - mean_j)^2 over a B x E score matrix.
double variance_loss(const Eigen::Ref<const Eigen::MatrixXd>& scores);
Eigen::MatrixXd variance_loss_grad(const Eigen::Ref<const Eigen::MatrixXd>& scores);

/// 0.5 [KL(p||q) + KL(q||p)] after smoothing p' = (p + 1e-8) / (1 + E 1e-8).
double symmetric_kl(const Eigen::Ref<const Eigen::VectorXd>& p, const Eigen::Ref<const Eigen::VectorXd>& q);

/// Subgroup membership of each batch sample: for every category, the value index of each sample.
struct SubgroupLabels {
  /// labels[d][i] = subgroup of sample i in category d.
  std::vector<std::vector<std::size_t>> labels;
};

/// Subgroup labels from profiles, one column per schema category (values indexed by DemographicCategory::values()).
SubgroupLabels subgroup_labels(const CorpusSchema& schema, const std::vector<const AnnotatorProfile*>& profiles);

/// sum_d sum_{u<v} 0.5 [KL(p_u||p_v) + KL(p_v||p_u)] where p_u is the mean gate
/// distribution (B x E `probabilities`) over batch samples in subgroup u of category d.
/// Subgroups absent from the batch do not contribute.
double demo_specialization_loss(const Eigen::Ref<const Eigen::MatrixXd>& probabilities, const SubgroupLabels& groups);
Eigen::MatrixXd demo_specialization_loss_grad(const Eigen::Ref<const Eigen::MatrixXd>& probabilities,
                                              const SubgroupLabels& groups);

}  // namespace demoe
