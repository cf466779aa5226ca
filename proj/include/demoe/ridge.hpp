#pragma once

#include "demoe/corpus.hpp"

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace demoe {

/// One-hot encoding of annotator profiles: one column per (category, value),
/// including the undisclosed value, in schema order.
class OneHotEncoder {
public:
  struct Block {
    std::string category;
    std::size_t offset = 0;
    std::size_t size = 0;
  };

  explicit OneHotEncoder(const CorpusSchema& schema);

  std::size_t width() const { return names_.size(); }
  const std::vector<std::string>& column_names() const { return names_; }
  const std::vector<Block>& blocks() const { return blocks_; }

  /// Index of the active column in each category block, in schema order.
  std::vector<std::size_t> active_columns(const AnnotatorProfile& profile) const;
  Eigen::VectorXd encode(const AnnotatorProfile& profile) const;

private:
  const CorpusSchema* schema_;
  std::vector<std::string> names_;
  std::vector<Block> blocks_;
};

/// Closed-form ridge solution (X^T X + lambda I)^{-1} X^T Y, no intercept.
Eigen::MatrixXd ridge_solve(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, double lambda);

/// Streaming ridge regression over sufficient statistics. Features are
/// column-standardized (population SD) and targets centered, which is
/// equivalent to fitting an unpenalized intercept. Works for corpora whose
/// full design matrix would not fit in memory.
class RidgeAccumulator {
public:
  RidgeAccumulator(std::size_t n_features, std::size_t n_targets);

  void add(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& y);

  /// Adds a one-hot row given its active column indices.
  void add_sparse(const std::vector<std::size_t>& active, const Eigen::Ref<const Eigen::VectorXd>& y);

  std::size_t count() const { return n_; }

  /// Coefficients on the standardized features (rows = features, columns =
  /// targets). Features with zero variance get zero coefficients.
  Eigen::MatrixXd solve_standardized(double lambda) const;

private:
  std::size_t n_ = 0;
  Eigen::MatrixXd xx_;
  Eigen::VectorXd x_sum_;
  Eigen::MatrixXd xy_;
  Eigen::VectorXd y_sum_;
};

}  // namespace demoe
