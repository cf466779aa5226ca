#pragma once

#include "demoe/corpus.hpp"
#include "demoe/evaluation.hpp"
#include "demoe/synthesis.hpp"
#include "demoe/training.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace demoe {

inline constexpr double kAlignmentEpsilon = 1e-3;
/// Lower bound on a cluster's trustworthiness term.
inline constexpr double kTrustFloor = 1e-3;

/// Mean over the persona's disclosed groups of the per-group MAE between its
/// synthetic ratings and the group's mean human rating on the same instances.
/// Throws InputError when none of its ratings overlaps a human group.
double fidelity_error(const std::vector<const SyntheticAnnotation*>& persona_annotations, const GroupRatingIndex& index,
                     const CorpusSchema& schema);

/// A = 1 / (fidelity + epsilon).
double alignment_score(double fidelity, double epsilon = kAlignmentEpsilon);

struct PersonaCluster {
  std::size_t id = 0;
  std::vector<std::string> members;  // real annotator ids
  Eigen::RowVectorXd centroid;       // standardized one-hot space
  std::size_t annotations = 0;
  double prevalence = 0.0;
  double trustworthiness = 0.0;
};

struct PersonaClustering {
  std::vector<PersonaCluster> clusters;
  std::map<std::string, std::size_t> assignment;  // annotator id -> cluster
  Eigen::RowVectorXd column_mean;
  Eigen::RowVectorXd column_scale;  // 0 for constant columns

  /// Cluster of an arbitrary profile (e.g. a persona): nearest centroid.
  std::size_t assign(const AnnotatorProfile& profile, const CorpusSchema& schema) const;
};

/// k-means over the standardized demographic one-hots of the annotators in
/// `records`. Prevalence is each cluster's share of the records; trustworthiness
/// starts at zero until set_trustworthiness is called. k is reduced to the
/// number of distinct profiles; k = 0 throws InputError.
PersonaClustering cluster_personas(const std::vector<AnnotationRecord>& records, const ProfileIndex& profiles,
                                   const CorpusSchema& schema, std::size_t k, std::uint64_t seed);

/// T(c) = MAE of the reference predictions on the cluster's annotators,
/// floored at kTrustFloor; clusters without predictions get the overall MAE.
void set_trustworthiness(PersonaClustering& clustering, const std::vector<PredictionRecord>& reference);

struct WeightClip {
  double min = 0.01;
  double max = 100.0;
};

struct SyntheticWeight {
  double alignment = 0.0;
  double trustworthiness = 0.0;
  double prevalence = 0.0;
  double raw = 0.0;
  double clipped = 0.0;
};

/// w = A / (T * P), then clipped. Throws std::invalid_argument on a non-positive component.
SyntheticWeight synthetic_weight(double alignment, double trustworthiness, double prevalence, const WeightClip& clip);

struct WeightRow {
  std::string instance_id;
  std::string persona_id;
  std::size_t cluster = 0;
  double fidelity = 0.0;
  SyntheticWeight weight;
};

struct WeightSummary {
  std::size_t count = 0;
  double min = 0.0;
  double max = 0.0;
  double mean = 0.0;
  double median = 0.0;
  std::size_t clipped_low = 0;
  std::size_t clipped_high = 0;
  WeightClip clip;

  nlohmann::json to_json() const;
};

struct WeightTable {
  std::vector<WeightRow> rows;  // one per synthetic annotation, input order
  /// Personas whose ratings overlap no human group; their fidelity falls back
  /// to the pooled fidelity of all synthetic ratings.
  std::vector<std::string> fallback_personas;

  std::string to_tsv() const;
  WeightSummary summary(const WeightClip& clip) const;
};

struct WeightingParams {
  std::size_t clusters = 8;
  double alignment_epsilon = kAlignmentEpsilon;
  WeightClip clip;
  std::uint64_t seed = 0;
};

/// Weight of every synthetic annotation given the real training records and a
/// reference model's predictions on them.
WeightTable compute_weights(const std::vector<SyntheticAnnotation>& synthetic,
                            const std::vector<AnnotationRecord>& real, const ProfileIndex& real_profiles,
                            const CorpusSchema& schema, const std::vector<PredictionRecord>& reference,
                            const WeightingParams& params);

enum class BlendStrategy { pt_ft, unweighted, weighted };
std::string_view to_string(BlendStrategy strategy);
BlendStrategy blend_strategy_from_string(const std::string& name);

struct BlendOptions {
  BlendStrategy strategy = BlendStrategy::weighted;
  /// Training options; for pt_ft these drive the fine-tune stage.
  TrainingOptions training;
  /// Pretrain stage epoch budget for pt_ft.
  std::size_t pretrain_epochs = 0;
};

struct BlendResult {
  DemMoE model;
  std::vector<TrainingLog> logs;  // one per stage
  std::optional<WeightSummary> weights;
};

/// Trains on real and synthetic examples. `synthetic_weights` (weighted only)
/// holds one weight per synthetic example; real examples always weigh 1.
/// pt_ft trains on synthetic only for `pretrain_epochs`, then on real only
/// from the resulting parameters; a zero fine-tune budget returns the
/// pretrained model.
BlendResult blend_train(DemMoE model, const TextEmbeddingStore& store, const std::vector<TrainingExample>& real,
                        std::vector<TrainingExample> synthetic, const std::vector<TrainingExample>& dev,
                        const BlendOptions& options, const std::vector<double>& synthetic_weights = {},
                        const EpochCallback& on_epoch = {});

/// Training examples for synthetic annotations, with persona profiles from `pool`.
std::vector<TrainingExample> synthetic_examples(const std::vector<SyntheticAnnotation>& synthetic,
                                                const ProfileIndex& persona_profiles);

}  // namespace demoe
