#pragma once

#include "demoe/corpus.hpp"
#include "demoe/text_store.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace demoe {

struct SimulatedCategory {
  std::string name;
  std::vector<std::string> values;
  /// Additive rating shift per value.
  std::vector<double> effects;
  /// Per value, multiplier of the instance's text score added to the rating.
  std::vector<double> text_interactions;
};

/// Synthetic corpus generator. Each instance has a random text embedding t
/// and a text score s = u . t for a fixed random unit direction u.
/// Annotator a rates instance i as
///   mid + text_weight * s + sum_c (effect_c(a) + interaction_c(a) * s) + noise * N(0, 1),
/// rounded to the nearest scale point when the scale is discrete and clipped.
struct SimulationSpec {
  std::size_t instances = 100;
  std::size_t annotators = 40;
  std::size_t per_instance = 5;
  std::size_t text_dim = 8;
  RatingScale scale{1.0, 5.0, true};
  double text_weight = 0.8;
  double noise = 0.4;
  /// Probability that a profile field is left undisclosed.
  double undisclosed_rate = 0.0;
  std::vector<SimulatedCategory> categories;
  std::uint64_t seed = 0;
};

struct SimulatedCorpus {
  CorpusSchema schema;
  Corpus corpus;
  TextEmbeddingStore store;
  std::map<std::string, std::string> texts;
};

SimulatedCorpus simulate_corpus(const SimulationSpec& spec);

/// Writes schema.json, annotations.jsonl, profiles.jsonl, embeddings.txt and
/// texts.jsonl into `dir` (created if missing).
void write_simulated_corpus(const SimulatedCorpus& sim, const std::filesystem::path& dir);

/// Two categories: "group" (values a/b) shifts ratings in opposite directions
/// and flips the text effect; "noise" (values x/y/z) has no effect.
SimulationSpec signal_and_noise_spec(std::uint64_t seed);

}  // namespace demoe
