#include "demoe/persona.hpp"

#include "demoe/digest.hpp"
#include "demoe/io.hpp"

#include <algorithm>
#include <map>

namespace demoe {

nlohmann::json Persona::to_json() const
{
  nlohmann::json j = profile_to_json(profile);
  j["persona_id"] = persona_id;
  j["frequency"] = frequency;
  j["source_annotators"] = source_annotators;
  return j;
}

std::string persona_id_for(const std::vector<std::string>& combination)
{
  return "persona-" + sha256_hex(nlohmann::json(combination).dump()).substr(0, 12);
}

std::vector<Persona> build_persona_pool(const std::vector<AnnotatorProfile>& profiles, const CorpusSchema& schema)
{
  std::map<std::vector<std::string>, std::vector<std::string>> groups;
  for (const auto& p : profiles) groups[p.combination(schema)].push_back(p.annotator_id);
  std::vector<Persona> pool;
  pool.reserve(groups.size());
  for (auto& [combo, members] : groups) {
    Persona persona;
    persona.persona_id = persona_id_for(combo);
    persona.combination = combo;
    persona.profile.annotator_id = persona.persona_id;
    for (std::size_t c = 0; c < schema.categories.size(); ++c)
      persona.profile.attributes[schema.categories[c].name] = combo[c];
    std::sort(members.begin(), members.end());
    persona.frequency = members.size();
    persona.source_annotators = std::move(members);
    pool.push_back(std::move(persona));
  }
  return pool;
}

std::string describe_persona(const AnnotatorProfile& profile, const CorpusSchema& schema)
{
  std::string out;
  for (const auto& cat : schema.categories) {
    const std::string value = profile.value(cat.name);
    if (value == kUndisclosed) continue;
    for (unsigned char ch : value)
      if (ch < 0x20 || ch == 0x7f || ch == '{' || ch == '}')
        throw InputError("persona attribute '" + cat.name + "' cannot be serialized into a prompt");
    if (!out.empty()) out += ", ";
    out += cat.name + ": " + value;
  }
  return out.empty() ? "no disclosed demographics" : out;
}

}  // namespace demoe
