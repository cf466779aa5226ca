#include "demoe/simulate.hpp"

#include "demoe/io.hpp"
#include "demoe/random.hpp"

#include <cmath>
#include <cstdio>

namespace demoe {

namespace {

std::string padded(const char* prefix, std::size_t i, std::size_t total)
{
  const int width = static_cast<int>(std::to_string(total).size());
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s%0*zu", prefix, width, i);
  return buf;
}

}  // namespace

SimulatedCorpus simulate_corpus(const SimulationSpec& spec)
{
  if (spec.instances == 0 || spec.annotators == 0 || spec.text_dim == 0)
    throw InputError("simulation needs instances, annotators and a text dimension");
  if (spec.per_instance == 0 || spec.per_instance > spec.annotators)
    throw InputError("per_instance must be between 1 and the number of annotators");
  for (const auto& c : spec.categories)
    if (c.values.empty() || c.effects.size() != c.values.size() ||
        (!c.text_interactions.empty() && c.text_interactions.size() != c.values.size()))
      throw InputError("simulated category '" + c.name + "' needs one effect per value");

  SimulatedCorpus out;
  out.schema.scale = spec.scale;
  for (const auto& c : spec.categories) out.schema.categories.push_back({c.name, c.values});
  out.schema.validate();
  out.store = TextEmbeddingStore(spec.text_dim);

  Rng direction_rng(substream_seed(spec.seed, "simulate.direction"));
  Eigen::VectorXd u(static_cast<Eigen::Index>(spec.text_dim));
  for (Eigen::Index j = 0; j < u.size(); ++j) u(j) = direction_rng.normal();
  u /= u.norm();

  Rng profile_rng(substream_seed(spec.seed, "simulate.profiles"));
  // Per annotator and category: value index, or -1 when undisclosed.
  std::vector<std::vector<long>> chosen(spec.annotators);
  for (std::size_t a = 0; a < spec.annotators; ++a) {
    AnnotatorProfile p;
    p.annotator_id = padded("a", a, spec.annotators);
    for (const auto& c : spec.categories) {
      const auto v = profile_rng.uniform_index(c.values.size());
      const bool hidden = profile_rng.uniform() < spec.undisclosed_rate;
      chosen[a].push_back(hidden ? -1 : static_cast<long>(v));
      p.attributes[c.name] = hidden ? std::string(kUndisclosed) : c.values[v];
    }
    out.corpus.profiles.push_back(std::move(p));
  }

  Rng text_rng(substream_seed(spec.seed, "simulate.text"));
  Rng rating_rng(substream_seed(spec.seed, "simulate.ratings"));
  const double mid = 0.5 * (spec.scale.lower + spec.scale.upper);
  for (std::size_t i = 0; i < spec.instances; ++i) {
    const std::string id = padded("i", i, spec.instances);
    Eigen::VectorXd t(static_cast<Eigen::Index>(spec.text_dim));
    for (Eigen::Index j = 0; j < t.size(); ++j) t(j) = text_rng.normal();
    const double s = u.dot(t);
    out.store.insert(id, t);
    out.texts[id] = "Sample text " + std::to_string(i) + ".";
    for (auto a : rating_rng.sample_without_replacement(spec.annotators, spec.per_instance)) {
      double r = mid + spec.text_weight * s;
      for (std::size_t c = 0; c < spec.categories.size(); ++c) {
        const long v = chosen[a][c];
        if (v < 0) continue;
        const auto& cat = spec.categories[c];
        r += cat.effects[static_cast<std::size_t>(v)];
        if (!cat.text_interactions.empty()) r += cat.text_interactions[static_cast<std::size_t>(v)] * s;
      }
      r += spec.noise * rating_rng.normal();
      r = spec.scale.clip(r);
      if (spec.scale.discrete) r = spec.scale.points()[spec.scale.nearest_point(r)];
      out.corpus.records.push_back({id, out.corpus.profiles[a].annotator_id, r, false, {}});
    }
  }
  return out;
}

SimulationSpec signal_and_noise_spec(std::uint64_t seed)
{
  SimulationSpec spec;
  spec.seed = seed;
  spec.categories = {
      {"group", {"a", "b"}, {-1.0, 1.0}, {0.6, -0.6}},
      {"noise", {"x", "y", "z"}, {0.0, 0.0, 0.0}, {}},
  };
  return spec;
}

void write_simulated_corpus(const SimulatedCorpus& sim, const std::filesystem::path& dir)
{
  std::filesystem::create_directories(dir);
  std::vector<nlohmann::json> records, profiles, texts;
  for (const auto& r : sim.corpus.records) records.push_back(record_to_json(r));
  for (const auto& p : sim.corpus.profiles) profiles.push_back(profile_to_json(p));
  for (const auto& [id, text] : sim.texts) texts.push_back({{"instance_id", id}, {"text", text}});
  write_file_atomic(dir / "schema.json", sim.schema.to_json().dump(2) + "\n");
  write_file_atomic(dir / "annotations.jsonl", to_json_lines(records));
  write_file_atomic(dir / "profiles.jsonl", to_json_lines(profiles));
  write_file_atomic(dir / "embeddings.txt", sim.store.serialize());
  write_file_atomic(dir / "texts.jsonl", to_json_lines(texts));
}

}  // namespace demoe
