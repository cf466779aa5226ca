#pragma once

#include "demoe/corpus.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace demoe {

enum class ResponseKind { single, multi_quality };

/// Prompt template for one dataset. The system template carries a
/// `{demographics}` slot; the user template carries a `{text}` slot.
struct DatasetTemplate {
  std::string id;
  std::string system_template;
  std::string user_template;
  RatingScale scale;
  ResponseKind kind = ResponseKind::single;
  /// Quality names for multi-quality responses; the score is their mean.
  std::vector<std::string> qualities;

  void validate() const;
};

/// Built-in templates: safety, politeness, offensiveness, toxicity, pcc.
/// Throws InputError for unknown ids.
const DatasetTemplate& dataset_template(const std::string& id);
std::vector<std::string> template_ids();

struct DecodingParams {
  double temperature = 0.7;
  int max_tokens = 512;

  nlohmann::json to_json() const;
};

struct ProviderRequest {
  std::string template_id;
  std::string system_prompt;
  std::string user_prompt;
  std::string persona_description;
  std::string persona_id;
  std::string instance_id;
  std::string model;
  DecodingParams params;
};

/// Substitutes every `{name}` slot. Throws InputError for a slot missing from `values`.
std::string fill_slots(const std::string& text, const std::vector<std::pair<std::string, std::string>>& values);

ProviderRequest render_prompt(const DatasetTemplate& tmpl, const AnnotatorProfile& persona, const CorpusSchema& schema,
                              const std::string& instance_id, const std::string& text, const DecodingParams& params,
                              const std::string& model);

struct ParseError {
  enum class Kind { missing_separator, malformed_rating, out_of_scale, missing_quality };
  Kind kind;
  std::string message;
  std::string raw;
};
std::string_view to_string(ParseError::Kind kind);

struct ParsedResponse {
  double rating = 0.0;
  std::string explanation;
  /// Per-quality ratings and explanations for multi-quality templates.
  std::vector<double> quality_ratings;
  std::vector<std::string> quality_explanations;
};

struct ParseOutcome {
  std::optional<ParsedResponse> value;
  std::optional<ParseError> error;
  bool ok() const { return value.has_value(); }
};

/// Extracts `[Explanation]:::[Rating]`: the rating is the bracketed integer
/// after the last `:::`, optionally followed by whitespace or periods. For
/// multi-quality templates each quality's line is parsed and the ratings averaged.
ParseOutcome parse_response(const std::string& raw, const DatasetTemplate& tmpl);

/// A well-formed response for `rating` (inverse of parse_response).
std::string format_response(const std::string& explanation, int rating);
std::string format_multi_quality_response(const std::vector<std::string>& qualities,
                                          const std::vector<std::string>& explanations,
                                          const std::vector<int>& ratings);

}  // namespace demoe
