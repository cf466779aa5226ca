#pragma once

#include "demoe/corpus.hpp"
#include "demoe/random.hpp"
#include "demoe/text_store.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace demoe {

/// Diagonal Gaussian posterior over an embedding vector.
struct GaussianEmbedding {
  Eigen::VectorXd mean;
  Eigen::VectorXd log_variance;

  static GaussianEmbedding random(std::size_t dim, Rng& rng, double mean_scale, double log_variance);
  static GaussianEmbedding zeros(std::size_t dim);

  std::size_t dim() const { return static_cast<std::size_t>(mean.size()); }

  /// Reparameterized draw: mean + exp(log_variance / 2) * noise.
  Eigen::VectorXd sample(const Eigen::Ref<const Eigen::VectorXd>& noise) const;
};

struct EmbeddingTables {
  std::map<std::string, GaussianEmbedding> annotators;
  /// One table per schema category (schema order), keyed by attribute value.
  std::vector<std::map<std::string, GaussianEmbedding>> demographics;
  /// Shared embedding for annotators absent from `annotators`. Created once at
  /// model construction and never trained or re-randomized.
  GaussianEmbedding default_annotator;
};

struct GateParameters {
  Eigen::MatrixXd weight;  // experts x input_dim
  Eigen::VectorXd bias;    // experts
};

/// Two-layer feed-forward expert: w2 * tanh(w1 x + b1) + b2.
struct Expert {
  Eigen::MatrixXd w1;
  Eigen::VectorXd b1;
  Eigen::MatrixXd w2;
  Eigen::VectorXd b2;

  Eigen::VectorXd operator()(const Eigen::Ref<const Eigen::VectorXd>& x) const;
};

struct RegressionHead {
  Eigen::VectorXd weight;
  double bias = 0.0;
};

struct ExpertPool {
  std::vector<Expert> experts;
  RegressionHead head;
};

struct ModelParameters {
  EmbeddingTables embeddings;
  GateParameters gate;
  ExpertPool pool;
};

struct ModelConfig {
  std::size_t text_dim = 0;
  std::size_t annotator_dim = 32;
  std::size_t demographic_dim = 16;
  /// 0 selects one expert per demographic category in the schema.
  std::size_t num_experts = 0;
  std::size_t top_k = 2;
  std::size_t expert_hidden = 64;
  std::size_t expert_output = 32;
  /// Mix selected experts with p_j / sum_{I_k} p rather than raw p_j.
  bool renormalize_topk = true;
  double init_log_variance = -4.0;
  std::uint64_t seed = 0;
};

/// Concatenated model input [e_text; e_ann; e_demo].
struct ModelInput {
  Eigen::VectorXd x;
};

struct RoutingDecision {
  Eigen::VectorXd scores;
  Eigen::VectorXd probabilities;
  /// Selected expert indices, by descending probability (ties: lower index first).
  std::vector<std::size_t> selected;
  /// Mixing weight per selected expert, aligned with `selected`.
  std::vector<double> weights;
};

struct ForwardResult {
  double prediction = 0.0;         // rating scale
  double normalized_output = 0.0;  // head output in z-space
  Eigen::VectorXd hidden;
  std::vector<Eigen::VectorXd> expert_outputs;  // aligned with decision.selected
};

/// Raised when a model input or intermediate value is NaN or infinite.
class NonFiniteError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Numerically stable softmax.
Eigen::VectorXd softmax(const Eigen::Ref<const Eigen::VectorXd>& scores);

/// Indices of the k largest entries, largest first; equal values resolve to the lower index.
std::vector<std::size_t> top_k_indices(const Eigen::Ref<const Eigen::VectorXd>& values, std::size_t k);

/// s = W x + b, p = softmax(s), top-k selection and mixing weights.
/// Throws std::invalid_argument for k outside [1, E] and NonFiniteError for non-finite input.
RoutingDecision route(const GateParameters& gate, const ModelInput& input, std::size_t k, bool renormalize = true);

/// Sparse mixture h = sum_j weight_j f_j(x) and the denormalized head output.
ForwardResult forward(const ExpertPool& pool, const RoutingDecision& decision, const ModelInput& input,
                      const RatingNormalizer& normalizer);

/// Per-sample usage: mixing weight on each selected expert, zero elsewhere.
Eigen::VectorXd usage_vector(const RoutingDecision& decision, std::size_t num_experts);

/// Accumulated selected-expert mass per expert, normalized to sum to one.
/// Throws std::invalid_argument on empty input.
Eigen::VectorXd expert_usage(std::span<const RoutingDecision> decisions, std::size_t num_experts);

/// Builds the input vector for one (instance, annotator) pair. With a
/// `noise_seed` the Gaussian embeddings are sampled (training mode); without
/// one the posterior means are used. Noise is drawn in input order: annotator
/// dimensions first, then each demographic category in schema order.
ModelInput embed_sample(const EmbeddingTables& tables, const TextEmbeddingStore& store, const CorpusSchema& schema,
                        const std::string& instance_id, const std::string& annotator_id,
                        const AnnotatorProfile& profile, std::optional<std::uint64_t> noise_seed);

/// Same as embed_sample with explicit noise (size annotator_dim + categories *
/// demographic_dim), or posterior means when `noise` is null.
ModelInput embed_with_noise(const EmbeddingTables& tables, const TextEmbeddingStore& store, const CorpusSchema& schema,
                            const std::string& instance_id, const std::string& annotator_id,
                            const AnnotatorProfile& profile, const Eigen::VectorXd* noise);

/// Named view over one trainable tensor, in a fixed deterministic order.
struct NamedTensor {
  std::string name;
  bool gate = false;
  std::span<double> values;
};

/// Every tensor in `params`. The default annotator embedding is excluded
/// unless `include_default` is set.
std::vector<NamedTensor> named_tensors(ModelParameters& params, bool include_default = false);

/// The DeM-MoE network with its schema, normalizer and construction seed.
class DemMoE {
public:
  /// Creates embeddings for `annotator_ids`, one demographic table per schema
  /// category (vocabulary plus undisclosed), the gate, experts and head.
  DemMoE(ModelConfig config, CorpusSchema schema, RatingNormalizer normalizer,
         const std::vector<std::string>& annotator_ids);

  /// Restores a model from stored parameters (used by checkpoint loading).
  DemMoE(ModelConfig config, CorpusSchema schema, RatingNormalizer normalizer, ModelParameters params);

  const ModelConfig& config() const { return config_; }
  const CorpusSchema& schema() const { return schema_; }
  const RatingNormalizer& normalizer() const { return normalizer_; }
  ModelParameters& parameters() { return params_; }
  const ModelParameters& parameters() const { return params_; }

  std::size_t num_experts() const { return params_.pool.experts.size(); }
  std::size_t input_dim() const;
  std::size_t noise_dim() const;

  bool knows_annotator(const std::string& annotator_id) const
  {
    return params_.embeddings.annotators.count(annotator_id) > 0;
  }

  ModelInput embed(const TextEmbeddingStore& store, const std::string& instance_id, const std::string& annotator_id,
                   const AnnotatorProfile& profile, const Eigen::VectorXd* noise = nullptr) const;

  RoutingDecision route(const ModelInput& input) const;

  /// Evaluation-mode prediction on the rating scale (posterior means).
  double predict(const TextEmbeddingStore& store, const std::string& instance_id, const std::string& annotator_id,
                 const AnnotatorProfile& profile) const;

  /// Evaluation-mode routing decision for one sample.
  RoutingDecision route_sample(const TextEmbeddingStore& store, const std::string& instance_id,
                               const std::string& annotator_id, const AnnotatorProfile& profile) const;

private:
  ModelConfig config_;
  CorpusSchema schema_;
  RatingNormalizer normalizer_;
  ModelParameters params_;
};

}  // namespace demoe
