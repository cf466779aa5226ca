#include "demoe/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace demoe {

double kl_to_standard_normal(const GaussianEmbedding& emb)
{
  const auto& lv = emb.log_variance.array();
  return 0.5 * (emb.mean.array().square() + lv.exp() - 1.0 - lv).sum();
}

void kl_to_standard_normal_grad(const GaussianEmbedding& emb, double scale, GaussianEmbedding& grad)
{
  grad.mean += scale * emb.mean;
  grad.log_variance += (scale * 0.5) * (emb.log_variance.array().exp() - 1.0).matrix();
}

namespace {

Eigen::VectorXd clipped_ratios(const Eigen::Ref<const Eigen::VectorXd>& counts, double& mean)
{
  if (counts.size() == 0) throw std::invalid_argument("load_std_loss: no experts");
  if ((counts.array() < 0).any()) throw std::invalid_argument("load_std_loss: negative count");
  mean = counts.mean();
  if (!(mean > 0)) throw std::invalid_argument("load_std_loss: all counts are zero");
  return (counts.array() / mean).min(1.0);
}

}  // namespace

double load_std_loss(const Eigen::Ref<const Eigen::VectorXd>& counts)
{
  double mean = 0;
  const Eigen::VectorXd r = clipped_ratios(counts, mean);
  return std::sqrt((r.array() - r.mean()).square().mean());
}

Eigen::VectorXd load_std_loss_grad(const Eigen::Ref<const Eigen::VectorXd>& counts)
{
  double mean = 0;
  const Eigen::VectorXd r = clipped_ratios(counts, mean);
  const auto E = static_cast<double>(counts.size());
  const double sd = std::sqrt((r.array() - r.mean()).square().mean());
  Eigen::VectorXd g = Eigen::VectorXd::Zero(counts.size());
  if (sd <= 0) return g;
  const Eigen::VectorXd dr = (r.array() - r.mean()) / (E * sd);
  for (Eigen::Index j = 0; j < counts.size(); ++j) {
    if (counts[j] / mean >= 1.0) continue;
    // r_j = c_j / mean(c): d r_j / d c_m = delta_jm / mean - c_j / (mean^2 E)
    g[j] += dr[j] / mean;
    g.array() -= dr[j] * counts[j] / (mean * mean * E);
  }
  return g;
}

double orthogonality_loss(const std::vector<SelectedOutputs>& outputs)
{
  double total = 0.0;
  for (const auto& xs : outputs)
    for (std::size_t j = 0; j < xs.size(); ++j)
      for (std::size_t k = 0; k < xs.size(); ++k)
        if (j != k) total += std::abs(xs[j].dot(xs[k])) / (xs[k].squaredNorm() + kOrthogonalityEpsilon);
  return total;
}

std::vector<SelectedOutputs> orthogonality_loss_grad(const std::vector<SelectedOutputs>& outputs)
{
  std::vector<SelectedOutputs> grads;
  grads.reserve(outputs.size());
  for (const auto& xs : outputs) {
    SelectedOutputs g;
    for (const auto& x : xs) g.push_back(Eigen::VectorXd::Zero(x.size()));
    for (std::size_t j = 0; j < xs.size(); ++j)
      for (std::size_t k = 0; k < xs.size(); ++k) {
        if (j == k) continue;
        const double den = xs[k].squaredNorm() + kOrthogonalityEpsilon;
        const double dot = xs[j].dot(xs[k]);
        const double sign = dot > 0 ? 1.0 : (dot < 0 ? -1.0 : 0.0);
        g[j] += sign * xs[k] / den;
        g[k] += sign * xs[j] / den - (2.0 * std::abs(dot) / (den * den)) * xs[k];
      }
    grads.push_back(std::move(g));
  }
  return grads;
}

double variance_loss(const Eigen::Ref<const Eigen::MatrixXd>& scores)
{
  if (scores.rows() == 0) throw std::invalid_argument("variance_loss: empty batch");
  const Eigen::RowVectorXd mean = scores.colwise().mean();
  return -(scores.rowwise() - mean).array().square().sum() / static_cast<double>(scores.size());
}

Eigen::MatrixXd variance_loss_grad(const Eigen::Ref<const Eigen::MatrixXd>& scores)
{
  const Eigen::RowVectorXd mean = scores.colwise().mean();
  return (-2.0 / static_cast<double>(scores.size())) * (scores.rowwise() - mean);
}

namespace {

Eigen::VectorXd smooth(const Eigen::Ref<const Eigen::VectorXd>& p)
{
  return (p.array() + kUsageSmoothing) / (1.0 + static_cast<double>(p.size()) * kUsageSmoothing);
}

/// d symKL / d p (with respect to the unsmoothed p).
Eigen::VectorXd symmetric_kl_grad_p(const Eigen::Ref<const Eigen::VectorXd>& p, const Eigen::Ref<const Eigen::VectorXd>& q)
{
  const Eigen::VectorXd ps = smooth(p);
  const Eigen::VectorXd qs = smooth(q);
  const double scale = 1.0 / (1.0 + static_cast<double>(p.size()) * kUsageSmoothing);
  return (0.5 * scale) * ((ps.array() / qs.array()).log() + 1.0 - qs.array() / ps.array()).matrix();
}

struct GroupMeans {
  std::vector<Eigen::VectorXd> means;
  std::vector<std::size_t> sizes;
};

GroupMeans group_means(const Eigen::Ref<const Eigen::MatrixXd>& probs, const std::vector<std::size_t>& labels)
{
  if (labels.size() != static_cast<std::size_t>(probs.rows()))
    throw std::invalid_argument("subgroup labels do not match the batch size");
  std::size_t n_groups = 0;
  for (auto l : labels) n_groups = std::max(n_groups, l + 1);
  GroupMeans g;
  g.means.assign(n_groups, Eigen::VectorXd::Zero(probs.cols()));
  g.sizes.assign(n_groups, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    g.means[labels[i]] += probs.row(static_cast<Eigen::Index>(i)).transpose();
    ++g.sizes[labels[i]];
  }
  for (std::size_t u = 0; u < n_groups; ++u)
    if (g.sizes[u] > 0) g.means[u] /= static_cast<double>(g.sizes[u]);
  return g;
}

}  // namespace

double symmetric_kl(const Eigen::Ref<const Eigen::VectorXd>& p, const Eigen::Ref<const Eigen::VectorXd>& q)
{
  if (p.size() != q.size()) throw std::invalid_argument("symmetric_kl: size mismatch");
  const Eigen::VectorXd ps = smooth(p);
  const Eigen::VectorXd qs = smooth(q);
  return 0.5 * ((ps - qs).array() * (ps.array().log() - qs.array().log())).sum();
}

SubgroupLabels subgroup_labels(const CorpusSchema& schema, const std::vector<const AnnotatorProfile*>& profiles)
{
  SubgroupLabels out;
  for (const auto& cat : schema.categories) {
    const auto values = cat.values();
    std::vector<std::size_t> col;
    col.reserve(profiles.size());
    for (const auto* p : profiles) {
      const auto v = p->value(cat.name);
      const auto it = std::find(values.begin(), values.end(), v);
      if (it == values.end()) throw std::invalid_argument("unknown value '" + v + "' for category '" + cat.name + "'");
      col.push_back(static_cast<std::size_t>(it - values.begin()));
    }
    out.labels.push_back(std::move(col));
  }
  return out;
}

double demo_specialization_loss(const Eigen::Ref<const Eigen::MatrixXd>& probabilities, const SubgroupLabels& groups)
{
  double total = 0.0;
  for (const auto& labels : groups.labels) {
    const auto g = group_means(probabilities, labels);
    for (std::size_t u = 0; u < g.means.size(); ++u)
      for (std::size_t v = u + 1; v < g.means.size(); ++v)
        if (g.sizes[u] > 0 && g.sizes[v] > 0) total += symmetric_kl(g.means[u], g.means[v]);
  }
  return total;
}

Eigen::MatrixXd demo_specialization_loss_grad(const Eigen::Ref<const Eigen::MatrixXd>& probabilities,
                                              const SubgroupLabels& groups)
{
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(probabilities.rows(), probabilities.cols());
  for (const auto& labels : groups.labels) {
    const auto g = group_means(probabilities, labels);
    std::vector<Eigen::VectorXd> dmean(g.means.size(), Eigen::VectorXd::Zero(probabilities.cols()));
    for (std::size_t u = 0; u < g.means.size(); ++u)
      for (std::size_t v = u + 1; v < g.means.size(); ++v) {
        if (g.sizes[u] == 0 || g.sizes[v] == 0) continue;
        dmean[u] += symmetric_kl_grad_p(g.means[u], g.means[v]);
        dmean[v] += symmetric_kl_grad_p(g.means[v], g.means[u]);
      }
    for (std::size_t i = 0; i < labels.size(); ++i)
      grad.row(static_cast<Eigen::Index>(i)) += dmean[labels[i]].transpose() / static_cast<double>(g.sizes[labels[i]]);
  }
  return grad;
}

}  // namespace demoe
