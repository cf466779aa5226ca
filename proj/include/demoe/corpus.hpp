#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace demoe {

/// Reserved attribute value for missing or undisclosed demographics. Always
/// accepted for every category, in addition to the declared vocabulary.
inline constexpr std::string_view kUndisclosed = "undisclosed";

struct RatingScale {
  double lower = 1.0;
  double upper = 5.0;
  bool discrete = true;

  bool contains(double rating) const { return rating >= lower && rating <= upper; }
  double clip(double rating) const;

  /// Integer scale points lower, lower+1, ..., upper. Entropy, EMD and the
  /// random baseline all work over these points.
  std::vector<double> points() const;

  /// Index of the scale point closest to `rating` (ties go to the lower point).
  std::size_t nearest_point(double rating) const;
};

struct DemographicCategory {
  std::string name;
  std::vector<std::string> vocabulary;

  bool allows(std::string_view value) const;

  /// Declared vocabulary followed by the reserved undisclosed value.
  std::vector<std::string> values() const;
};

enum class TextSource { inline_text, embedding_store };

struct CorpusSchema {
  RatingScale scale;
  std::vector<DemographicCategory> categories;
  TextSource text_source = TextSource::embedding_store;

  /// Throws InputError listing every problem found.
  void validate() const;

  std::size_t category_index(std::string_view name) const;

  /// Stable digest of the schema contents, stored in checkpoints.
  std::string fingerprint() const;

  nlohmann::json to_json() const;
  static CorpusSchema from_json(const nlohmann::json& j);
  static CorpusSchema load(const std::filesystem::path& path);
};

struct AnnotationRecord {
  std::string instance_id;
  std::string annotator_id;
  double rating = 0.0;
  bool is_synthetic = false;
  std::string text;
};

struct AnnotatorProfile {
  std::string annotator_id;
  std::map<std::string, std::string> attributes;

  /// Attribute value for `category`, or kUndisclosed if absent.
  std::string value(const std::string& category) const;

  /// Attribute values in schema category order; used as a combination key.
  std::vector<std::string> combination(const CorpusSchema& schema) const;
};

struct Corpus {
  std::vector<AnnotationRecord> records;
  std::vector<AnnotatorProfile> profiles;
};

/// Read-only lookup from annotator id to profile.
class ProfileIndex {
public:
  ProfileIndex() = default;
  explicit ProfileIndex(const std::vector<AnnotatorProfile>& profiles);

  void add(const AnnotatorProfile& profile);
  const AnnotatorProfile* find(const std::string& annotator_id) const;
  const AnnotatorProfile& at(const std::string& annotator_id) const;
  std::size_t size() const { return profiles_.size(); }

private:
  std::unordered_map<std::string, AnnotatorProfile> profiles_;
};

std::vector<AnnotationRecord> read_annotations(const std::filesystem::path& path, const CorpusSchema& schema);
std::vector<AnnotatorProfile> read_profiles(const std::filesystem::path& path, const CorpusSchema& schema);

/// Parses one profile object. Missing, null or empty category fields map to
/// kUndisclosed; values outside the vocabulary are rejected.
AnnotatorProfile parse_profile(const nlohmann::json& obj, const CorpusSchema& schema, std::size_t line = 0);

/// Reads and validates both files. Records referencing annotators with no
/// profile are rejected.
Corpus ingest(const std::filesystem::path& annotations, const std::filesystem::path& profiles,
              const CorpusSchema& schema);

/// Checks scale bounds and (instance, annotator) uniqueness of human records.
void validate_records(const std::vector<AnnotationRecord>& records, const CorpusSchema& schema);

nlohmann::json record_to_json(const AnnotationRecord& record);
nlohmann::json profile_to_json(const AnnotatorProfile& profile);

std::vector<std::string> unique_instances(const std::vector<AnnotationRecord>& records);
std::vector<std::string> unique_annotators(const std::vector<AnnotationRecord>& records);

// ---------------------------------------------------------------------------
// Instance-level splits

enum class Split { train, dev, test };

std::string_view to_string(Split split);
Split split_from_string(std::string_view name);

struct SplitFractions {
  double train = 0.8;
  double dev = 0.1;
  double test = 0.1;
};

struct SplitAssignment {
  std::map<std::string, Split> assignment;
  /// Share of test-split annotators that also annotate in the train split, in percent.
  double annotator_overlap_pct = 0.0;

  std::vector<std::string> instances(Split which) const;
  bool contains(const std::string& instance_id) const { return assignment.count(instance_id) > 0; }
  Split at(const std::string& instance_id) const;

  std::string to_tsv() const;
  static SplitAssignment from_tsv(const std::string& text);
};

/// Shuffles the sorted distinct instance ids with a seeded generator and cuts
/// them into train/dev/test blocks. Annotators may appear in several splits.
SplitAssignment split(const std::vector<AnnotationRecord>& records, std::uint64_t seed,
                      const SplitFractions& fractions);

/// Percentage of `test`-split annotators also present in the `train` split.
double annotator_overlap_pct(const std::vector<AnnotationRecord>& records, const SplitAssignment& assignment);

std::vector<AnnotationRecord> select_split(const std::vector<AnnotationRecord>& records,
                                           const SplitAssignment& assignment, Split which);

std::set<std::string> annotators_in(const std::vector<AnnotationRecord>& records);

// ---------------------------------------------------------------------------

/// z-score normalizer fitted on training-split human ratings only.
class RatingNormalizer {
public:
  RatingNormalizer() = default;
  RatingNormalizer(double mean, double std_dev);

  /// Ignores synthetic records. Throws InputError on empty input or zero spread.
  static RatingNormalizer fit(const std::vector<AnnotationRecord>& train_records);

  double normalize(double rating) const { return (rating - mean_) / std_dev_; }
  double denormalize(double z) const { return z * std_dev_ + mean_; }

  double mean() const { return mean_; }
  double std_dev() const { return std_dev_; }

private:
  double mean_ = 0.0;
  double std_dev_ = 1.0;
};

}  // namespace demoe
