#include "demoe/kmeans.hpp"

#include "demoe/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>

namespace demoe {

namespace {

std::size_t count_distinct_rows(const Eigen::MatrixXd& points)
{
  std::set<std::vector<double>> rows;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    std::vector<double> row(points.cols());
    for (Eigen::Index j = 0; j < points.cols(); ++j) row[j] = points(i, j);
    rows.insert(std::move(row));
  }
  return rows.size();
}

}  // namespace

std::size_t nearest_centroid(const Eigen::MatrixXd& centroids, const Eigen::Ref<const Eigen::RowVectorXd>& x)
{
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
    const double d = (centroids.row(c) - x).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<std::size_t>(c);
    }
  }
  return best;
}

KMeansResult kmeans(const Eigen::MatrixXd& points, std::size_t k, std::uint64_t seed, std::size_t max_iter)
{
  const auto n = static_cast<std::size_t>(points.rows());
  if (k == 0) throw std::invalid_argument("kmeans: k must be positive");
  if (k > count_distinct_rows(points)) throw std::invalid_argument("kmeans: k exceeds the number of distinct points");

  Rng rng(seed);
  KMeansResult res;
  res.centroids.resize(static_cast<Eigen::Index>(k), points.cols());

  // k-means++ seeding.
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::size_t first = rng.uniform_index(n);
  res.centroids.row(0) = points.row(static_cast<Eigen::Index>(first));
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = (points.row(static_cast<Eigen::Index>(i)) - res.centroids.row(static_cast<Eigen::Index>(c - 1))).squaredNorm();
      d2[i] = std::min(d2[i], d);
      total += d2[i];
    }
    std::size_t pick = 0;
    double u = rng.uniform() * total;
    for (std::size_t i = 0; i < n; ++i) {
      if (d2[i] <= 0) continue;
      pick = i;
      u -= d2[i];
      if (u < 0) break;
    }
    res.centroids.row(static_cast<Eigen::Index>(c)) = points.row(static_cast<Eigen::Index>(pick));
  }

  res.assignment.assign(n, 0);
  for (std::size_t iter = 0; iter < max_iter; ++iter) {
    res.iterations = iter + 1;
    bool changed = iter == 0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = nearest_centroid(res.centroids, points.row(static_cast<Eigen::Index>(i)));
      if (c != res.assignment[i]) {
        res.assignment[i] = c;
        changed = true;
      }
    }

    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k), points.cols());
    std::vector<std::size_t> sizes(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      sums.row(static_cast<Eigen::Index>(res.assignment[i])) += points.row(static_cast<Eigen::Index>(i));
      ++sizes[res.assignment[i]];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (sizes[c] > 0) {
        res.centroids.row(static_cast<Eigen::Index>(c)) = sums.row(static_cast<Eigen::Index>(c)) / static_cast<double>(sizes[c]);
        continue;
      }
      // Empty cluster: move it to the point farthest from its current centroid.
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double d = (points.row(static_cast<Eigen::Index>(i)) - res.centroids.row(static_cast<Eigen::Index>(res.assignment[i]))).squaredNorm();
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      res.centroids.row(static_cast<Eigen::Index>(c)) = points.row(static_cast<Eigen::Index>(far));
      res.assignment[far] = c;
      changed = true;
    }
    if (!changed) break;
  }

  res.inertia = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    res.inertia += (points.row(static_cast<Eigen::Index>(i)) - res.centroids.row(static_cast<Eigen::Index>(res.assignment[i]))).squaredNorm();
  return res;
}

Eigen::MatrixXd standardize_columns(const Eigen::MatrixXd& X)
{
  Eigen::MatrixXd Z = X;
  if (X.rows() == 0) return Z;
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    const double mean = X.col(j).mean();
    const double var = (X.col(j).array() - mean).square().mean();
    if (var > 1e-12)
      Z.col(j) = (X.col(j).array() - mean) / std::sqrt(var);
    else
      Z.col(j).setZero();
  }
  return Z;
}

}  // namespace demoe
