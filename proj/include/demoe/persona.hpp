#pragma once

#include "demoe/corpus.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace demoe {

/// A synthetic annotator standing for one observed demographic combination.
struct Persona {
  std::string persona_id;
  /// Attribute map; `profile.annotator_id` equals `persona_id`.
  AnnotatorProfile profile;
  /// Attribute values in schema order.
  std::vector<std::string> combination;
  /// Number of real annotators with this combination.
  std::size_t frequency = 0;
  /// Real annotators the combination was observed on (sorted).
  std::vector<std::string> source_annotators;

  nlohmann::json to_json() const;
};

/// Stable identifier derived from the combination's content.
std::string persona_id_for(const std::vector<std::string>& combination);

/// One persona per distinct combination in `profiles`, ordered by combination.
std::vector<Persona> build_persona_pool(const std::vector<AnnotatorProfile>& profiles, const CorpusSchema& schema);

/// "category: value, ..." over disclosed attributes in schema order. Throws
/// InputError if a value contains braces or control characters.
std::string describe_persona(const AnnotatorProfile& profile, const CorpusSchema& schema);

}  // namespace demoe
