#include "demoe/corpus.hpp"

#include "demoe/digest.hpp"
#include "demoe/io.hpp"
#include "demoe/random.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace demoe {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Schema

double RatingScale::clip(double rating) const
{
  return std::clamp(rating, lower, upper);
}

std::vector<double> RatingScale::points() const
{
  std::vector<double> pts;
  for (double v = lower; v <= upper + 1e-9; v += 1.0) pts.push_back(v);
  return pts;
}

std::size_t RatingScale::nearest_point(double rating) const
{
  const auto pts = points();
  const double clipped = clip(rating);
  std::size_t idx = static_cast<std::size_t>(std::floor(clipped - lower));
  if (idx + 1 < pts.size() && clipped - pts[idx] > 0.5) ++idx;
  return std::min(idx, pts.size() - 1);
}

bool DemographicCategory::allows(std::string_view value) const
{
  if (value == kUndisclosed) return true;
  return std::find(vocabulary.begin(), vocabulary.end(), value) != vocabulary.end();
}

std::vector<std::string> DemographicCategory::values() const
{
  std::vector<std::string> out = vocabulary;
  out.emplace_back(kUndisclosed);
  return out;
}

void CorpusSchema::validate() const
{
  std::vector<std::string> problems;
  if (!(std::isfinite(scale.lower) && std::isfinite(scale.upper)) || !(scale.lower < scale.upper))
    problems.push_back("rating_scale: lower must be < upper");
  if (categories.empty()) problems.push_back("demographic_categories: must be non-empty");
  std::set<std::string> names;
  for (const auto& c : categories) {
    if (c.name.empty()) problems.push_back("demographic_categories: empty category name");
    if (!names.insert(c.name).second) problems.push_back("demographic_categories: duplicate category '" + c.name + "'");
    std::set<std::string> seen;
    for (const auto& v : c.vocabulary) {
      if (v.empty()) problems.push_back("category '" + c.name + "': empty value");
      if (v == kUndisclosed) problems.push_back("category '" + c.name + "': 'undisclosed' is reserved");
      if (!seen.insert(v).second) problems.push_back("category '" + c.name + "': duplicate value '" + v + "'");
    }
  }
  if (!problems.empty()) {
    std::string msg = "invalid schema:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw InputError(msg);
  }
}

std::size_t CorpusSchema::category_index(std::string_view name) const
{
  for (std::size_t i = 0; i < categories.size(); ++i)
    if (categories[i].name == name) return i;
  throw InputError("unknown demographic category '" + std::string(name) + "'");
}

json CorpusSchema::to_json() const
{
  json cats = json::array();
  for (const auto& c : categories) cats.push_back({{"name", c.name}, {"values", c.vocabulary}});
  return {
      {"rating_scale", {{"lower", scale.lower}, {"upper", scale.upper}, {"discrete", scale.discrete}}},
      {"demographic_categories", cats},
      {"instance_text_source", text_source == TextSource::inline_text ? "inline" : "embedding_store"},
  };
}

std::string CorpusSchema::fingerprint() const
{
  return sha256_hex(to_json().dump()).substr(0, 16);
}

CorpusSchema CorpusSchema::from_json(const json& j)
{
  CorpusSchema schema;
  try {
    const auto& s = j.at("rating_scale");
    schema.scale.lower = s.at("lower").get<double>();
    schema.scale.upper = s.at("upper").get<double>();
    schema.scale.discrete = s.value("discrete", true);
    for (const auto& c : j.at("demographic_categories")) {
      DemographicCategory cat;
      cat.name = c.at("name").get<std::string>();
      cat.vocabulary = c.at("values").get<std::vector<std::string>>();
      schema.categories.push_back(std::move(cat));
    }
    const std::string src = j.value("instance_text_source", std::string("embedding_store"));
    if (src == "inline")
      schema.text_source = TextSource::inline_text;
    else if (src == "embedding_store")
      schema.text_source = TextSource::embedding_store;
    else
      throw InputError("instance_text_source must be 'inline' or 'embedding_store'");
  } catch (const json::exception& e) {
    throw InputError(std::string("invalid schema: ") + e.what());
  }
  schema.validate();
  return schema;
}

CorpusSchema CorpusSchema::load(const std::filesystem::path& path)
{
  return from_json(read_json_file(path));
}

// ---------------------------------------------------------------------------
// Records and profiles

std::string AnnotatorProfile::value(const std::string& category) const
{
  auto it = attributes.find(category);
  return it == attributes.end() ? std::string(kUndisclosed) : it->second;
}

std::vector<std::string> AnnotatorProfile::combination(const CorpusSchema& schema) const
{
  std::vector<std::string> out;
  out.reserve(schema.categories.size());
  for (const auto& c : schema.categories) out.push_back(value(c.name));
  return out;
}

ProfileIndex::ProfileIndex(const std::vector<AnnotatorProfile>& profiles)
{
  for (const auto& p : profiles) add(p);
}

void ProfileIndex::add(const AnnotatorProfile& profile)
{
  profiles_[profile.annotator_id] = profile;
}

const AnnotatorProfile* ProfileIndex::find(const std::string& annotator_id) const
{
  auto it = profiles_.find(annotator_id);
  return it == profiles_.end() ? nullptr : &it->second;
}

const AnnotatorProfile& ProfileIndex::at(const std::string& annotator_id) const
{
  const auto* p = find(annotator_id);
  if (!p) throw InputError("no profile for annotator '" + annotator_id + "'");
  return *p;
}

namespace {

std::string json_id(const json& obj, const char* key, std::size_t line)
{
  auto it = obj.find(key);
  if (it == obj.end()) throw InputError(std::string("missing field '") + key + "'", line);
  if (it->is_string()) {
    auto s = it->get<std::string>();
    if (s.empty()) throw InputError(std::string("empty field '") + key + "'", line);
    return s;
  }
  if (it->is_number_integer()) return std::to_string(it->get<long long>());
  throw InputError(std::string("field '") + key + "' must be a string", line);
}

}  // namespace

std::vector<AnnotationRecord> read_annotations(const std::filesystem::path& path, const CorpusSchema& schema)
{
  std::vector<AnnotationRecord> records;
  std::map<std::pair<std::string, std::string>, std::size_t> seen;
  for_each_json_line(path, [&](const json& obj, std::size_t line) {
    AnnotationRecord r;
    r.instance_id = json_id(obj, "instance_id", line);
    r.annotator_id = json_id(obj, "annotator_id", line);
    auto rating = obj.find("rating");
    if (rating == obj.end() || !rating->is_number()) throw InputError("field 'rating' must be a number", line);
    r.rating = rating->get<double>();
    if (!std::isfinite(r.rating) || !schema.scale.contains(r.rating))
      throw InputError("rating " + format_double(r.rating) + " outside scale [" + format_double(schema.scale.lower) +
                           ", " + format_double(schema.scale.upper) + "]",
                       line);
    if (schema.scale.discrete && r.rating != std::round(r.rating))
      throw InputError("rating " + format_double(r.rating) + " is not a discrete scale value", line);
    r.is_synthetic = obj.value("is_synthetic", false);
    if (auto t = obj.find("text"); t != obj.end() && t->is_string()) r.text = t->get<std::string>();
    if (!r.is_synthetic) {
      auto [it, inserted] = seen.emplace(std::make_pair(r.instance_id, r.annotator_id), line);
      if (!inserted)
        throw InputError("duplicate (instance, annotator) pair (" + r.instance_id + ", " + r.annotator_id +
                             "), first seen on line " + std::to_string(it->second),
                         line);
    }
    records.push_back(std::move(r));
  });
  return records;
}

AnnotatorProfile parse_profile(const json& obj, const CorpusSchema& schema, std::size_t line)
{
  AnnotatorProfile p;
  p.annotator_id = json_id(obj, "annotator_id", line);
  for (const auto& cat : schema.categories) {
    std::string value(kUndisclosed);
    if (auto it = obj.find(cat.name); it != obj.end() && !it->is_null()) {
      if (it->is_string())
        value = it->get<std::string>();
      else if (it->is_number_integer())
        value = std::to_string(it->get<long long>());
      else
        throw InputError("category '" + cat.name + "' must be a string", line);
      if (value.empty()) value = kUndisclosed;
    }
    if (!cat.allows(value)) throw InputError("unknown value '" + value + "' for category '" + cat.name + "'", line);
    p.attributes[cat.name] = value;
  }
  return p;
}

std::vector<AnnotatorProfile> read_profiles(const std::filesystem::path& path, const CorpusSchema& schema)
{
  std::vector<AnnotatorProfile> profiles;
  std::map<std::string, std::size_t> index;
  for_each_json_line(path, [&](const json& obj, std::size_t line) {
    AnnotatorProfile p = parse_profile(obj, schema, line);
    auto it = index.find(p.annotator_id);
    if (it != index.end()) {
      if (profiles[it->second].attributes != p.attributes)
        throw InputError("conflicting duplicate profile for annotator '" + p.annotator_id + "'", line);
      return;
    }
    index.emplace(p.annotator_id, profiles.size());
    profiles.push_back(std::move(p));
  });
  return profiles;
}

void validate_records(const std::vector<AnnotationRecord>& records, const CorpusSchema& schema)
{
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& r : records) {
    if (!std::isfinite(r.rating) || !schema.scale.contains(r.rating))
      throw InputError("rating " + format_double(r.rating) + " outside scale for (" + r.instance_id + ", " +
                       r.annotator_id + ")");
    if (!r.is_synthetic && !seen.emplace(r.instance_id, r.annotator_id).second)
      throw InputError("duplicate (instance, annotator) pair (" + r.instance_id + ", " + r.annotator_id + ")");
  }
}

Corpus ingest(const std::filesystem::path& annotations, const std::filesystem::path& profiles,
              const CorpusSchema& schema)
{
  schema.validate();
  Corpus corpus;
  corpus.records = read_annotations(annotations, schema);
  corpus.profiles = read_profiles(profiles, schema);
  // Annotators without a profile row are kept with all categories undisclosed.
  std::set<std::string> known;
  for (const auto& p : corpus.profiles) known.insert(p.annotator_id);
  for (const auto& id : unique_annotators(corpus.records)) {
    if (known.count(id)) continue;
    AnnotatorProfile p;
    p.annotator_id = id;
    for (const auto& c : schema.categories) p.attributes[c.name] = std::string(kUndisclosed);
    corpus.profiles.push_back(std::move(p));
  }
  return corpus;
}

json record_to_json(const AnnotationRecord& r)
{
  json j = {{"instance_id", r.instance_id}, {"annotator_id", r.annotator_id}, {"rating", r.rating}};
  if (r.is_synthetic) j["is_synthetic"] = true;
  if (!r.text.empty()) j["text"] = r.text;
  return j;
}

json profile_to_json(const AnnotatorProfile& p)
{
  json j = {{"annotator_id", p.annotator_id}};
  for (const auto& [k, v] : p.attributes) j[k] = v;
  return j;
}

std::vector<std::string> unique_instances(const std::vector<AnnotationRecord>& records)
{
  std::set<std::string> ids;
  for (const auto& r : records) ids.insert(r.instance_id);
  return {ids.begin(), ids.end()};
}

std::vector<std::string> unique_annotators(const std::vector<AnnotationRecord>& records)
{
  auto s = annotators_in(records);
  return {s.begin(), s.end()};
}

std::set<std::string> annotators_in(const std::vector<AnnotationRecord>& records)
{
  std::set<std::string> ids;
  for (const auto& r : records) ids.insert(r.annotator_id);
  return ids;
}

// ---------------------------------------------------------------------------
// Splits

std::string_view to_string(Split split)
{
  switch (split) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
  }
  return "train";
}

Split split_from_string(std::string_view name)
{
  if (name == "train") return Split::train;
  if (name == "dev") return Split::dev;
  if (name == "test") return Split::test;
  throw InputError("unknown split '" + std::string(name) + "'");
}

std::vector<std::string> SplitAssignment::instances(Split which) const
{
  std::vector<std::string> out;
  for (const auto& [id, s] : assignment)
    if (s == which) out.push_back(id);
  return out;
}

Split SplitAssignment::at(const std::string& instance_id) const
{
  auto it = assignment.find(instance_id);
  if (it == assignment.end()) throw InputError("instance '" + instance_id + "' has no split assignment");
  return it->second;
}

std::string SplitAssignment::to_tsv() const
{
  std::ostringstream out;
  out << "instance_id\tsplit\n";
  for (const auto& [id, s] : assignment) out << id << '\t' << to_string(s) << '\n';
  return out.str();
}

SplitAssignment SplitAssignment::from_tsv(const std::string& text)
{
  SplitAssignment result;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || (line_no == 1 && line.rfind("instance_id", 0) == 0)) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) throw InputError("split file: expected '<instance_id>\\t<split>'", line_no);
    auto id = line.substr(0, tab);
    if (!result.assignment.emplace(id, split_from_string(line.substr(tab + 1))).second)
      throw InputError("split file: instance '" + id + "' assigned twice", line_no);
  }
  return result;
}

SplitAssignment split(const std::vector<AnnotationRecord>& records, std::uint64_t seed,
                      const SplitFractions& fractions)
{
  const double sum = fractions.train + fractions.dev + fractions.test;
  if (!(fractions.train > 0 && fractions.dev > 0 && fractions.test > 0) || std::abs(sum - 1.0) > 1e-6)
    throw InputError("split fractions must be positive and sum to 1");
  if (records.empty()) throw InputError("cannot split an empty corpus");

  auto ids = unique_instances(records);
  Rng rng(substream_seed(seed, "split"));
  rng.shuffle(ids);

  const std::size_t n = ids.size();
  const auto n_train = std::min(n, static_cast<std::size_t>(std::llround(fractions.train * static_cast<double>(n))));
  const auto n_dev = std::min(n - n_train, static_cast<std::size_t>(std::llround(fractions.dev * static_cast<double>(n))));

  SplitAssignment result;
  for (std::size_t i = 0; i < n; ++i) {
    Split s = i < n_train ? Split::train : (i < n_train + n_dev ? Split::dev : Split::test);
    result.assignment.emplace(ids[i], s);
  }
  result.annotator_overlap_pct = annotator_overlap_pct(records, result);
  return result;
}

double annotator_overlap_pct(const std::vector<AnnotationRecord>& records, const SplitAssignment& assignment)
{
  std::set<std::string> train, test;
  for (const auto& r : records) {
    auto it = assignment.assignment.find(r.instance_id);
    if (it == assignment.assignment.end()) continue;
    if (it->second == Split::train) train.insert(r.annotator_id);
    if (it->second == Split::test) test.insert(r.annotator_id);
  }
  if (test.empty()) return 0.0;
  std::size_t shared = 0;
  for (const auto& a : test) shared += train.count(a);
  return 100.0 * static_cast<double>(shared) / static_cast<double>(test.size());
}

std::vector<AnnotationRecord> select_split(const std::vector<AnnotationRecord>& records,
                                           const SplitAssignment& assignment, Split which)
{
  std::vector<AnnotationRecord> out;
  for (const auto& r : records) {
    auto it = assignment.assignment.find(r.instance_id);
    if (it != assignment.assignment.end() && it->second == which) out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------

RatingNormalizer::RatingNormalizer(double mean, double std_dev) : mean_(mean), std_dev_(std_dev)
{
  if (!std::isfinite(mean) || !std::isfinite(std_dev) || !(std_dev > 0))
    throw InputError("normalizer requires finite mean and positive std_dev");
}

RatingNormalizer RatingNormalizer::fit(const std::vector<AnnotationRecord>& train_records)
{
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : train_records) {
    if (r.is_synthetic) continue;
    sum += r.rating;
    ++n;
  }
  if (n == 0) throw InputError("cannot fit normalizer: no human training ratings");
  const double mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (const auto& r : train_records)
    if (!r.is_synthetic) ss += (r.rating - mean) * (r.rating - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n));
  if (!(sd > 1e-12)) throw InputError("cannot fit normalizer: training ratings have zero spread");
  return RatingNormalizer(mean, sd);
}

}  // namespace demoe
