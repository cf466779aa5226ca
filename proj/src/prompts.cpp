#include "demoe/prompts.hpp"

#include "demoe/io.hpp"
#include "demoe/persona.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <string_view>

namespace demoe::detail {
const std::vector<std::pair<std::string_view, std::string_view>>& template_sources();
}

namespace demoe {

namespace {

std::string trim(std::string_view s)
{
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::string lower(std::string s)
{
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::string strip_quotes(std::string s)
{
  s = trim(s);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = trim(std::string_view(s).substr(1, s.size() - 2));
  return s;
}

std::map<std::string, DatasetTemplate> build_templates()
{
  struct Spec {
    const char* id;
    const char* user;
    RatingScale scale;
    ResponseKind kind;
    std::vector<std::string> qualities;
  };
  const std::vector<Spec> specs = {
      {"safety", "Conversation:\n{text}", {1, 3, true}, ResponseKind::single, {}},
      {"politeness", "Email:\n{text}", {1, 5, true}, ResponseKind::single, {}},
      {"offensiveness", "Comment:\n{text}", {1, 5, true}, ResponseKind::single, {}},
      {"toxicity", "Comment:\n{text}", {1, 5, true}, ResponseKind::single, {}},
      {"pcc",
       "Snippet:\n{text}",
       {1, 5, false},
       ResponseKind::multi_quality,
       {"Encourages you to share your opinions", "Is supportive of you", "Gives thorough and clear information"}},
  };
  std::map<std::string, DatasetTemplate> out;
  for (const auto& s : specs) {
    const auto& sources = detail::template_sources();
    auto it = std::find_if(sources.begin(), sources.end(), [&](const auto& e) { return e.first == s.id; });
    if (it == sources.end()) continue;
    DatasetTemplate t{s.id, trim(it->second), s.user, s.scale, s.kind, s.qualities};
    t.validate();
    out.emplace(s.id, std::move(t));
  }
  return out;
}

const std::map<std::string, DatasetTemplate>& templates()
{
  static const auto store = build_templates();
  return store;
}

/// Parses the bracketed rating after the last ":::" in `text`.
ParseOutcome parse_single(const std::string& text, const std::string& raw, const RatingScale& scale)
{
  auto fail = [&](ParseError::Kind kind, std::string msg) {
    return ParseOutcome{std::nullopt, ParseError{kind, std::move(msg), raw}};
  };
  const auto sep = text.rfind(":::");
  if (sep == std::string::npos) return fail(ParseError::Kind::missing_separator, "response has no ':::' separator");
  std::string_view rest = std::string_view(text).substr(sep + 3);
  std::size_t i = 0;
  while (i < rest.size() && std::isspace(static_cast<unsigned char>(rest[i]))) ++i;
  if (i >= rest.size() || rest[i] != '[') return fail(ParseError::Kind::malformed_rating, "rating is not bracketed");
  ++i;
  while (i < rest.size() && rest[i] == ' ') ++i;
  const std::size_t start = i;
  if (i < rest.size() && (rest[i] == '-' || rest[i] == '+')) ++i;
  const std::size_t digits = i;
  while (i < rest.size() && std::isdigit(static_cast<unsigned char>(rest[i]))) ++i;
  if (i == digits || i - digits > 9) return fail(ParseError::Kind::malformed_rating, "rating is not an integer");
  const long value = std::stol(std::string(rest.substr(start, i - start)));
  while (i < rest.size() && rest[i] == ' ') ++i;
  if (i >= rest.size() || rest[i] != ']') return fail(ParseError::Kind::malformed_rating, "rating is not bracketed");
  ++i;
  for (; i < rest.size(); ++i)
    if (!std::isspace(static_cast<unsigned char>(rest[i])) && rest[i] != '.')
      return fail(ParseError::Kind::malformed_rating, "unexpected text after the rating");
  if (!scale.contains(static_cast<double>(value)))
    return fail(ParseError::Kind::out_of_scale, "rating " + std::to_string(value) + " is outside [" +
                                                    format_double(scale.lower) + ", " + format_double(scale.upper) + "]");
  ParsedResponse r;
  r.rating = static_cast<double>(value);
  r.explanation = strip_quotes(text.substr(0, sep));
  return {r, std::nullopt};
}

}  // namespace

void DatasetTemplate::validate() const
{
  if (system_template.find("{demographics}") == std::string::npos)
    throw InputError("template '" + id + "' lacks the {demographics} slot");
  if (user_template.find("{text}") == std::string::npos) throw InputError("template '" + id + "' lacks the {text} slot");
  if (kind == ResponseKind::multi_quality && qualities.empty())
    throw InputError("template '" + id + "' needs at least one quality");
}

const DatasetTemplate& dataset_template(const std::string& id)
{
  auto it = templates().find(id);
  if (it == templates().end()) throw InputError("no prompt template for dataset '" + id + "'");
  return it->second;
}

std::vector<std::string> template_ids()
{
  std::vector<std::string> ids;
  for (const auto& [id, t] : templates()) ids.push_back(id);
  return ids;
}

nlohmann::json DecodingParams::to_json() const { return {{"temperature", temperature}, {"max_tokens", max_tokens}}; }

std::string fill_slots(const std::string& text, const std::vector<std::pair<std::string, std::string>>& values)
{
  std::string out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto open = text.find('{', pos);
    if (open == std::string::npos) break;
    const auto close = text.find('}', open);
    if (close == std::string::npos) break;
    const std::string name = text.substr(open + 1, close - open - 1);
    auto it = std::find_if(values.begin(), values.end(), [&](const auto& v) { return v.first == name; });
    out.append(text, pos, open - pos);
    if (it == values.end()) {
      // Braces that are not slot names are copied verbatim.
      const bool slot_like =
          !name.empty() && std::all_of(name.begin(), name.end(), [](unsigned char c) { return std::isalnum(c) || c == '_'; });
      if (slot_like) throw InputError("template slot {" + name + "} has no value");
      out.append(text, open, close - open + 1);
    } else {
      out += it->second;
    }
    pos = close + 1;
  }
  out.append(text, pos, std::string::npos);
  return out;
}

ProviderRequest render_prompt(const DatasetTemplate& tmpl, const AnnotatorProfile& persona, const CorpusSchema& schema,
                              const std::string& instance_id, const std::string& text, const DecodingParams& params,
                              const std::string& model)
{
  ProviderRequest req;
  req.template_id = tmpl.id;
  req.persona_description = describe_persona(persona, schema);
  req.persona_id = persona.annotator_id;
  req.instance_id = instance_id;
  req.model = model;
  req.params = params;
  req.system_prompt = fill_slots(tmpl.system_template, {{"demographics", req.persona_description}});
  // Instance text is substituted last and never re-scanned for slots.
  const auto slot = tmpl.user_template.find("{text}");
  req.user_prompt = tmpl.user_template.substr(0, slot) + text + tmpl.user_template.substr(slot + 6);
  return req;
}

std::string_view to_string(ParseError::Kind kind)
{
  switch (kind) {
    case ParseError::Kind::missing_separator: return "missing_separator";
    case ParseError::Kind::malformed_rating: return "malformed_rating";
    case ParseError::Kind::out_of_scale: return "out_of_scale";
    case ParseError::Kind::missing_quality: return "missing_quality";
  }
  return "unknown";
}

ParseOutcome parse_response(const std::string& raw, const DatasetTemplate& tmpl)
{
  if (tmpl.kind == ResponseKind::single) return parse_single(trim(raw), raw, tmpl.scale);

  std::vector<std::optional<ParseOutcome>> per_quality(tmpl.qualities.size());
  std::vector<std::string> lowered;
  for (const auto& q : tmpl.qualities) lowered.push_back(lower(q));
  std::size_t start = 0;
  while (start <= raw.size()) {
    auto end = raw.find('\n', start);
    if (end == std::string::npos) end = raw.size();
    const std::string line = trim(std::string_view(raw).substr(start, end - start));
    start = end + 1;
    const auto sep = line.rfind(":::");
    if (sep == std::string::npos) continue;
    const std::string head = lower(line.substr(0, sep));
    for (std::size_t q = 0; q < lowered.size(); ++q) {
      const auto at = head.find(lowered[q]);
      if (at == std::string::npos) continue;
      auto outcome = parse_single(line, raw, tmpl.scale);
      if (outcome.ok()) {
        std::string expl = line.substr(at + lowered[q].size(), sep - at - lowered[q].size());
        expl = trim(expl);
        if (!expl.empty() && expl.front() == ':') expl = trim(std::string_view(expl).substr(1));
        outcome.value->explanation = strip_quotes(expl);
      }
      per_quality[q] = std::move(outcome);
      break;
    }
    if (end == raw.size()) break;
  }

  ParsedResponse combined;
  double total = 0;
  for (std::size_t q = 0; q < per_quality.size(); ++q) {
    if (!per_quality[q])
      return {std::nullopt,
              ParseError{ParseError::Kind::missing_quality, "no rating for quality '" + tmpl.qualities[q] + "'", raw}};
    if (!per_quality[q]->ok()) {
      auto err = *per_quality[q]->error;
      err.message = tmpl.qualities[q] + ": " + err.message;
      return {std::nullopt, err};
    }
    combined.quality_ratings.push_back(per_quality[q]->value->rating);
    combined.quality_explanations.push_back(per_quality[q]->value->explanation);
    total += per_quality[q]->value->rating;
  }
  combined.rating = total / static_cast<double>(per_quality.size());
  for (std::size_t q = 0; q < combined.quality_explanations.size(); ++q) {
    if (q) combined.explanation += "\n";
    combined.explanation += tmpl.qualities[q] + ": " + combined.quality_explanations[q];
  }
  return {combined, std::nullopt};
}

std::string format_response(const std::string& explanation, int rating)
{
  return "\"" + explanation + "\":::[" + std::to_string(rating) + "]";
}

std::string format_multi_quality_response(const std::vector<std::string>& qualities,
                                          const std::vector<std::string>& explanations,
                                          const std::vector<int>& ratings)
{
  std::string out;
  for (std::size_t q = 0; q < qualities.size(); ++q) {
    if (q) out += "\n";
    out += qualities[q] + ": " + explanations.at(q) + ":::[" + std::to_string(ratings.at(q)) + "]";
  }
  return out;
}

}  // namespace demoe
