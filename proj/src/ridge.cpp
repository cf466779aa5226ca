#include "demoe/ridge.hpp"

#include "demoe/io.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace demoe {

OneHotEncoder::OneHotEncoder(const CorpusSchema& schema) : schema_(&schema)
{
  for (const auto& cat : schema.categories) {
    Block b{cat.name, names_.size(), 0};
    for (const auto& v : cat.values()) {
      names_.push_back(cat.name + "=" + v);
      ++b.size;
    }
    blocks_.push_back(b);
  }
}

std::vector<std::size_t> OneHotEncoder::active_columns(const AnnotatorProfile& profile) const
{
  std::vector<std::size_t> cols;
  cols.reserve(blocks_.size());
  for (std::size_t c = 0; c < blocks_.size(); ++c) {
    const auto& cat = schema_->categories[c];
    const auto value = profile.value(cat.name);
    const auto values = cat.values();
    auto it = std::find(values.begin(), values.end(), value);
    if (it == values.end())
      throw InputError("annotator '" + profile.annotator_id + "': unknown value '" + value + "' for '" + cat.name + "'");
    cols.push_back(blocks_[c].offset + static_cast<std::size_t>(it - values.begin()));
  }
  return cols;
}

Eigen::VectorXd OneHotEncoder::encode(const AnnotatorProfile& profile) const
{
  Eigen::VectorXd x = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(width()));
  for (auto c : active_columns(profile)) x[static_cast<Eigen::Index>(c)] = 1.0;
  return x;
}

Eigen::MatrixXd ridge_solve(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, double lambda)
{
  if (!(lambda > 0)) throw std::invalid_argument("ridge penalty must be positive");
  if (X.rows() != Y.rows()) throw std::invalid_argument("ridge_solve: row mismatch");
  Eigen::MatrixXd A = X.transpose() * X;
  A.diagonal().array() += lambda;
  return A.ldlt().solve(X.transpose() * Y);
}

RidgeAccumulator::RidgeAccumulator(std::size_t n_features, std::size_t n_targets)
    : xx_(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_features), static_cast<Eigen::Index>(n_features))),
      x_sum_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_features))),
      xy_(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_features), static_cast<Eigen::Index>(n_targets))),
      y_sum_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_targets)))
{
}

void RidgeAccumulator::add(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& y)
{
  xx_.noalias() += x * x.transpose();
  x_sum_ += x;
  xy_.noalias() += x * y.transpose();
  y_sum_ += y;
  ++n_;
}

void RidgeAccumulator::add_sparse(const std::vector<std::size_t>& active, const Eigen::Ref<const Eigen::VectorXd>& y)
{
  for (auto i : active) {
    const auto ii = static_cast<Eigen::Index>(i);
    for (auto j : active) xx_(ii, static_cast<Eigen::Index>(j)) += 1.0;
    x_sum_[ii] += 1.0;
    xy_.row(ii) += y.transpose();
  }
  y_sum_ += y;
  ++n_;
}

Eigen::MatrixXd RidgeAccumulator::solve_standardized(double lambda) const
{
  if (!(lambda > 0)) throw std::invalid_argument("ridge penalty must be positive");
  const auto p = x_sum_.size();
  const auto q = y_sum_.size();
  Eigen::MatrixXd beta = Eigen::MatrixXd::Zero(p, q);
  if (n_ == 0) return beta;

  const double n = static_cast<double>(n_);
  const Eigen::VectorXd mu = x_sum_ / n;
  const Eigen::VectorXd y_mean = y_sum_ / n;

  Eigen::MatrixXd cov = xx_ - n * mu * mu.transpose();
  Eigen::MatrixXd cross = xy_ - n * mu * y_mean.transpose();

  std::vector<Eigen::Index> live;
  Eigen::VectorXd sigma(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    const double var = cov(j, j) / n;
    sigma[j] = var > 1e-12 ? std::sqrt(var) : 0.0;
    if (sigma[j] > 0) live.push_back(j);
  }
  if (live.empty()) return beta;

  const auto m = static_cast<Eigen::Index>(live.size());
  Eigen::MatrixXd A(m, m);
  Eigen::MatrixXd b(m, q);
  for (Eigen::Index a = 0; a < m; ++a) {
    for (Eigen::Index c = 0; c < m; ++c) A(a, c) = cov(live[a], live[c]) / (sigma[live[a]] * sigma[live[c]]);
    A(a, a) += lambda;
    b.row(a) = cross.row(live[a]) / sigma[live[a]];
  }
  Eigen::MatrixXd solved = A.ldlt().solve(b);
  for (Eigen::Index a = 0; a < m; ++a) beta.row(live[a]) = solved.row(a);
  return beta;
}

}  // namespace demoe
