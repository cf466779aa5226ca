#include "demoe/blending.hpp"

#include "demoe/io.hpp"
#include "demoe/kmeans.hpp"
#include "demoe/random.hpp"
#include "demoe/ridge.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

namespace demoe {

double fidelity_error(const std::vector<const SyntheticAnnotation*>& persona_annotations, const GroupRatingIndex& index,
                      const CorpusSchema& schema)
{
  // Per group: sum of |synthetic - group mean| and pair count.
  std::map<std::pair<std::size_t, std::string>, std::pair<double, std::size_t>> groups;
  for (const auto* s : persona_annotations)
    for (std::size_t c = 0; c < schema.categories.size(); ++c) {
      const std::string v = s->persona.value(schema.categories[c].name);
      if (v == kUndisclosed) continue;
      const auto* ratings = index.ratings(s->instance_id, c, v);
      if (!ratings) continue;
      const double mean = std::accumulate(ratings->begin(), ratings->end(), 0.0) / static_cast<double>(ratings->size());
      auto& g = groups[{c, v}];
      g.first += std::abs(s->rating - mean);
      ++g.second;
    }
  if (groups.empty()) throw InputError("persona ratings overlap no human demographic group");
  double total = 0;
  for (const auto& [key, g] : groups) total += g.first / static_cast<double>(g.second);
  return total / static_cast<double>(groups.size());
}

double alignment_score(double fidelity, double epsilon)
{
  if (!(fidelity >= 0) || !(epsilon > 0)) throw std::invalid_argument("alignment needs fidelity >= 0 and epsilon > 0");
  return 1.0 / (fidelity + epsilon);
}

namespace {

struct Standardizer {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd scale;

  explicit Standardizer(const Eigen::MatrixXd& X)
  {
    const auto n = static_cast<double>(X.rows());
    mean = X.colwise().mean();
    scale.resize(X.cols());
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
      const double var = (X.col(j).array() - mean(j)).square().sum() / n;
      scale(j) = var > 1e-24 ? std::sqrt(var) : 0.0;
    }
  }
};

Eigen::RowVectorXd standardize_row(const Eigen::RowVectorXd& x, const Eigen::RowVectorXd& mean,
                                   const Eigen::RowVectorXd& scale)
{
  Eigen::RowVectorXd z(x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) z(j) = scale(j) > 0 ? (x(j) - mean(j)) / scale(j) : 0.0;
  return z;
}

}  // namespace

std::size_t PersonaClustering::assign(const AnnotatorProfile& profile, const CorpusSchema& schema) const
{
  OneHotEncoder encoder(schema);
  Eigen::MatrixXd centroids(static_cast<Eigen::Index>(clusters.size()), column_mean.size());
  for (std::size_t c = 0; c < clusters.size(); ++c) centroids.row(static_cast<Eigen::Index>(c)) = clusters[c].centroid;
  return nearest_centroid(centroids, standardize_row(encoder.encode(profile).transpose(), column_mean, column_scale));
}

PersonaClustering cluster_personas(const std::vector<AnnotationRecord>& records, const ProfileIndex& profiles,
                                   const CorpusSchema& schema, std::size_t k, std::uint64_t seed)
{
  std::map<std::string, std::size_t> counts;
  for (const auto& r : records)
    if (!r.is_synthetic) ++counts[r.annotator_id];
  if (counts.empty()) throw InputError("persona clustering needs real annotations");

  OneHotEncoder encoder(schema);
  Eigen::MatrixXd X(static_cast<Eigen::Index>(counts.size()), static_cast<Eigen::Index>(encoder.width()));
  std::vector<std::string> ids;
  for (const auto& [id, n] : counts) {
    const AnnotatorProfile* p = profiles.find(id);
    X.row(static_cast<Eigen::Index>(ids.size())) = encoder.encode(p ? *p : AnnotatorProfile{id, {}}).transpose();
    ids.push_back(id);
  }
  const Standardizer st(X);
  Eigen::MatrixXd Z(X.rows(), X.cols());
  for (Eigen::Index i = 0; i < X.rows(); ++i) Z.row(i) = standardize_row(X.row(i), st.mean, st.scale);

  // Fewer distinct profiles than requested clusters: one cluster per distinct profile.
  std::set<std::vector<double>> distinct;
  for (Eigen::Index i = 0; i < Z.rows(); ++i) distinct.insert(std::vector<double>(Z.row(i).begin(), Z.row(i).end()));
  k = std::min(k, distinct.size());

  KMeansResult km;
  try {
    km = kmeans(Z, k, substream_seed(seed, "blending.kmeans"));
  } catch (const std::invalid_argument& e) {
    throw InputError(std::string("persona clustering: ") + e.what());
  }

  PersonaClustering out;
  out.column_mean = st.mean;
  out.column_scale = st.scale;
  out.clusters.resize(k);
  std::size_t total = 0;
  for (std::size_t c = 0; c < k; ++c) {
    out.clusters[c].id = c;
    out.clusters[c].centroid = km.centroids.row(static_cast<Eigen::Index>(c));
  }
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto& cl = out.clusters[km.assignment[i]];
    cl.members.push_back(ids[i]);
    cl.annotations += counts.at(ids[i]);
    total += counts.at(ids[i]);
    out.assignment[ids[i]] = km.assignment[i];
  }
  for (auto& cl : out.clusters) cl.prevalence = static_cast<double>(cl.annotations) / static_cast<double>(total);
  return out;
}

void set_trustworthiness(PersonaClustering& clustering, const std::vector<PredictionRecord>& reference)
{
  if (reference.empty()) throw InputError("trustworthiness needs reference predictions");
  std::vector<std::pair<double, std::size_t>> err(clustering.clusters.size(), {0.0, 0});
  double overall = 0;
  for (const auto& p : reference) {
    const double e = std::abs(p.predicted - p.actual);
    overall += e;
    auto it = clustering.assignment.find(p.annotator_id);
    if (it == clustering.assignment.end()) continue;
    err[it->second].first += e;
    ++err[it->second].second;
  }
  overall /= static_cast<double>(reference.size());
  for (std::size_t c = 0; c < err.size(); ++c) {
    const double mae = err[c].second ? err[c].first / static_cast<double>(err[c].second) : overall;
    clustering.clusters[c].trustworthiness = std::max(mae, kTrustFloor);
  }
}

SyntheticWeight synthetic_weight(double alignment, double trustworthiness, double prevalence, const WeightClip& clip)
{
  if (!(alignment > 0) || !(trustworthiness > 0) || !(prevalence > 0))
    throw std::invalid_argument("weight components must be positive");
  if (!(clip.min > 0) || !(clip.max >= clip.min)) throw std::invalid_argument("invalid weight clip bounds");
  SyntheticWeight w{alignment, trustworthiness, prevalence, 0.0, 0.0};
  w.raw = alignment / (trustworthiness * prevalence);
  w.clipped = std::clamp(w.raw, clip.min, clip.max);
  return w;
}

std::string WeightTable::to_tsv() const
{
  std::ostringstream out;
  out << "instance_id\tannotator_id\tcluster\tfidelity\tA\tT\tP\traw_weight\tweight\n";
  for (const auto& r : rows)
    out << r.instance_id << '\t' << r.persona_id << '\t' << r.cluster << '\t' << format_double(r.fidelity) << '\t'
        << format_double(r.weight.alignment) << '\t' << format_double(r.weight.trustworthiness) << '\t'
        << format_double(r.weight.prevalence) << '\t' << format_double(r.weight.raw) << '\t'
        << format_double(r.weight.clipped) << '\n';
  return out.str();
}

WeightSummary WeightTable::summary(const WeightClip& clip) const
{
  WeightSummary s;
  s.clip = clip;
  s.count = rows.size();
  if (rows.empty()) return s;
  std::vector<double> w;
  for (const auto& r : rows) {
    w.push_back(r.weight.clipped);
    if (r.weight.raw < clip.min) ++s.clipped_low;
    if (r.weight.raw > clip.max) ++s.clipped_high;
  }
  std::sort(w.begin(), w.end());
  s.min = w.front();
  s.max = w.back();
  s.mean = std::accumulate(w.begin(), w.end(), 0.0) / static_cast<double>(w.size());
  const std::size_t mid = w.size() / 2;
  s.median = w.size() % 2 ? w[mid] : 0.5 * (w[mid - 1] + w[mid]);
  return s;
}

nlohmann::json WeightSummary::to_json() const
{
  return {{"count", count},         {"min", min},
          {"max", max},             {"mean", mean},
          {"median", median},       {"clipped_low", clipped_low},
          {"clipped_high", clipped_high}, {"clip", {{"min", clip.min}, {"max", clip.max}}}};
}

WeightTable compute_weights(const std::vector<SyntheticAnnotation>& synthetic,
                            const std::vector<AnnotationRecord>& real, const ProfileIndex& real_profiles,
                            const CorpusSchema& schema, const std::vector<PredictionRecord>& reference,
                            const WeightingParams& params)
{
  const GroupRatingIndex index(real, real_profiles, schema);
  auto clustering = cluster_personas(real, real_profiles, schema, params.clusters, params.seed);
  set_trustworthiness(clustering, reference);

  std::map<std::string, std::vector<const SyntheticAnnotation*>> by_persona;
  for (const auto& s : synthetic) by_persona[s.persona_id].push_back(&s);

  WeightTable table;
  std::optional<double> pooled;
  std::map<std::string, std::pair<double, std::size_t>> persona_info;  // fidelity, cluster
  for (const auto& [id, anns] : by_persona) {
    double fid = 0;
    try {
      fid = fidelity_error(anns, index, schema);
    } catch (const InputError&) {
      if (!pooled) {
        std::vector<const SyntheticAnnotation*> all;
        for (const auto& s : synthetic) all.push_back(&s);
        pooled = fidelity_error(all, index, schema);
      }
      fid = *pooled;
      table.fallback_personas.push_back(id);
    }
    persona_info[id] = {fid, clustering.assign(anns.front()->persona, schema)};
  }
  for (const auto& s : synthetic) {
    const auto& [fid, cluster] = persona_info.at(s.persona_id);
    const auto& cl = clustering.clusters[cluster];
    // A cluster with no real annotations has zero prevalence; it is treated as a single annotation.
    const double prevalence = cl.prevalence > 0 ? cl.prevalence : 1.0 / static_cast<double>(real.size());
    table.rows.push_back({s.instance_id, s.persona_id, cluster, fid,
                          synthetic_weight(alignment_score(fid, params.alignment_epsilon), cl.trustworthiness,
                                           prevalence, params.clip)});
  }
  return table;
}

std::string_view to_string(BlendStrategy strategy)
{
  switch (strategy) {
    case BlendStrategy::pt_ft: return "pt_ft";
    case BlendStrategy::unweighted: return "unweighted";
    case BlendStrategy::weighted: return "weighted";
  }
  return "unknown";
}

BlendStrategy blend_strategy_from_string(const std::string& name)
{
  if (name == "pt_ft") return BlendStrategy::pt_ft;
  if (name == "unweighted") return BlendStrategy::unweighted;
  if (name == "weighted") return BlendStrategy::weighted;
  throw InputError("unknown blend strategy '" + name + "' (expected pt_ft, unweighted or weighted)");
}

BlendResult blend_train(DemMoE model, const TextEmbeddingStore& store, const std::vector<TrainingExample>& real,
                        std::vector<TrainingExample> synthetic, const std::vector<TrainingExample>& dev,
                        const BlendOptions& options, const std::vector<double>& synthetic_weights,
                        const EpochCallback& on_epoch)
{
  for (auto& s : synthetic) {
    s.is_synthetic = true;
    s.weight = 1.0;
  }
  switch (options.strategy) {
    case BlendStrategy::pt_ft: {
      if (synthetic.empty()) throw InputError("pt_ft needs synthetic annotations");
      if (options.pretrain_epochs == 0) throw InputError("pt_ft needs a positive pretrain epoch budget");
      auto pre = options.training;
      pre.optimizer.max_epochs = options.pretrain_epochs;
      auto stage1 = train(std::move(model), store, std::move(synthetic), dev, pre, on_epoch);
      BlendResult result{std::move(stage1.model), {std::move(stage1.log)}, std::nullopt};
      if (options.training.optimizer.max_epochs == 0) return result;
      auto stage2 = train(std::move(result.model), store, real, dev, options.training, on_epoch);
      result.model = std::move(stage2.model);
      result.logs.push_back(std::move(stage2.log));
      return result;
    }
    case BlendStrategy::unweighted:
    case BlendStrategy::weighted: {
      std::optional<WeightSummary> summary;
      if (options.strategy == BlendStrategy::weighted) {
        if (synthetic_weights.size() != synthetic.size())
          throw std::invalid_argument("weighted blending needs one weight per synthetic example");
        WeightTable t;
        for (std::size_t i = 0; i < synthetic.size(); ++i) {
          if (!(synthetic_weights[i] >= 0) || !std::isfinite(synthetic_weights[i]))
            throw std::invalid_argument("synthetic weights must be finite and non-negative");
          synthetic[i].weight = synthetic_weights[i];
          t.rows.push_back({synthetic[i].instance_id, synthetic[i].annotator_id, 0, 0.0,
                            {0, 0, 0, synthetic_weights[i], synthetic_weights[i]}});
        }
        summary = t.summary({0.0, std::numeric_limits<double>::max()});
      }
      std::vector<TrainingExample> all = real;
      for (auto& r : all) r.weight = 1.0;
      all.insert(all.end(), std::make_move_iterator(synthetic.begin()), std::make_move_iterator(synthetic.end()));
      auto run = train(std::move(model), store, std::move(all), dev, options.training, on_epoch);
      return {std::move(run.model), {std::move(run.log)}, summary};
    }
  }
  throw std::logic_error("unreachable blend strategy");
}

std::vector<TrainingExample> synthetic_examples(const std::vector<SyntheticAnnotation>& synthetic,
                                                const ProfileIndex& persona_profiles)
{
  std::vector<TrainingExample> out;
  out.reserve(synthetic.size());
  for (const auto& s : synthetic)
    out.push_back({s.instance_id, s.persona_id, &persona_profiles.at(s.persona_id), s.rating, 1.0, true});
  return out;
}

}  // namespace demoe
