#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <map>
#include <string>

namespace demoe {

/// Precomputed text embeddings keyed by instance id.
///
/// File format: a header line `dim <t>` followed by one line per instance,
/// `<instance_id> <v1> ... <vt>`, whitespace separated. Instance ids must not
/// contain whitespace. Lines starting with '#' are comments.
class TextEmbeddingStore {
public:
  explicit TextEmbeddingStore(std::size_t dim = 0) : dim_(dim) {}

  static TextEmbeddingStore load(const std::filesystem::path& path);
  std::string serialize() const;

  void insert(const std::string& instance_id, Eigen::VectorXd embedding);

  bool contains(const std::string& instance_id) const { return vectors_.count(instance_id) > 0; }
  const Eigen::VectorXd& at(const std::string& instance_id) const;

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return vectors_.size(); }
  const std::map<std::string, Eigen::VectorXd>& entries() const { return vectors_; }

private:
  std::size_t dim_;
  std::map<std::string, Eigen::VectorXd> vectors_;
};

}  // namespace demoe
