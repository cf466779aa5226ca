#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <vector>

namespace demoe {

struct KMeansResult {
  std::vector<std::size_t> assignment;  // cluster per row
  Eigen::MatrixXd centroids;            // k x dims
  double inertia = 0.0;
  std::size_t iterations = 0;
};

/// Lloyd's k-means with k-means++ seeding on the rows of `points`.
/// Deterministic given `seed`; distance ties go to the lowest cluster index.
/// Throws std::invalid_argument if k is zero or exceeds the number of
/// distinct rows.
KMeansResult kmeans(const Eigen::MatrixXd& points, std::size_t k, std::uint64_t seed, std::size_t max_iter = 200);

/// z-scores each column (population SD); constant columns become zero.
Eigen::MatrixXd standardize_columns(const Eigen::MatrixXd& X);

std::size_t nearest_centroid(const Eigen::MatrixXd& centroids, const Eigen::Ref<const Eigen::RowVectorXd>& x);

}  // namespace demoe
