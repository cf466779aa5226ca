#include "demoe/stats.hpp"

#include "demoe/io.hpp"
#include "demoe/ridge.hpp"

#include <algorithm>
#include <set>
#include <sstream>
#include <unordered_map>

namespace demoe {

AgreementMetric agreement_metric_from_string(const std::string& name)
{
  if (name == "interval") return AgreementMetric::interval;
  if (name == "nominal") return AgreementMetric::nominal;
  throw InputError("unknown agreement metric '" + name + "' (expected interval or nominal)");
}

namespace {

std::map<std::string, std::vector<double>> ratings_by_instance(const std::vector<AnnotationRecord>& records)
{
  std::map<std::string, std::vector<double>> by_instance;
  for (const auto& r : records) by_instance[r.instance_id].push_back(r.rating);
  return by_instance;
}

}  // namespace

double krippendorff_alpha(const std::vector<AnnotationRecord>& records, AgreementMetric metric)
{
  const auto units = ratings_by_instance(records);

  std::vector<double> values;
  std::size_t pairable_units = 0;
  for (const auto& [id, ratings] : units) {
    if (ratings.size() < 2) continue;
    ++pairable_units;
    values.insert(values.end(), ratings.begin(), ratings.end());
  }
  if (pairable_units < 2) throw InputError("krippendorff_alpha: need at least two instances with two or more ratings");

  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  const std::size_t V = values.size();
  auto index_of = [&](double v) {
    return static_cast<std::size_t>(std::lower_bound(values.begin(), values.end(), v) - values.begin());
  };

  // Coincidence matrix o[c][k].
  std::vector<double> o(V * V, 0.0);
  std::vector<double> counts(V);
  for (const auto& [id, ratings] : units) {
    const std::size_t m = ratings.size();
    if (m < 2) continue;
    std::fill(counts.begin(), counts.end(), 0.0);
    for (double r : ratings) counts[index_of(r)] += 1.0;
    const double inv = 1.0 / static_cast<double>(m - 1);
    for (std::size_t c = 0; c < V; ++c) {
      if (counts[c] == 0) continue;
      for (std::size_t k = 0; k < V; ++k) {
        if (counts[k] == 0) continue;
        const double pairs = c == k ? counts[c] * (counts[c] - 1.0) : counts[c] * counts[k];
        o[c * V + k] += pairs * inv;
      }
    }
  }

  std::vector<double> marginal(V, 0.0);
  double n = 0.0;
  for (std::size_t c = 0; c < V; ++c) {
    for (std::size_t k = 0; k < V; ++k) marginal[c] += o[c * V + k];
    n += marginal[c];
  }

  auto delta2 = [&](std::size_t c, std::size_t k) {
    if (metric == AgreementMetric::nominal) return c == k ? 0.0 : 1.0;
    const double d = values[c] - values[k];
    return d * d;
  };

  double observed = 0.0;
  double expected = 0.0;
  for (std::size_t c = 0; c < V; ++c) {
    for (std::size_t k = 0; k < V; ++k) {
      const double d = delta2(c, k);
      observed += o[c * V + k] * d;
      expected += marginal[c] * marginal[k] * d;
    }
  }
  if (expected == 0.0) return 1.0;
  return 1.0 - (n - 1.0) * observed / expected;
}

double mean_entropy(const std::vector<AnnotationRecord>& records, const RatingScale& scale, double log_base)
{
  if (records.empty()) throw InputError("mean_entropy: empty corpus");
  const auto units = ratings_by_instance(records);
  const auto n_points = scale.points().size();
  const double log_scale = std::log(log_base);
  double total = 0.0;
  std::vector<double> counts(n_points);
  for (const auto& [id, ratings] : units) {
    std::fill(counts.begin(), counts.end(), 0.0);
    for (double r : ratings) counts[scale.nearest_point(r)] += 1.0;
    double h = 0.0;
    const double m = static_cast<double>(ratings.size());
    for (double c : counts) {
      if (c == 0) continue;
      const double p = c / m;
      h -= p * std::log(p);
    }
    total += h / log_scale;
  }
  return total / static_cast<double>(units.size());
}

double mean_instance_sd(const std::vector<AnnotationRecord>& records)
{
  const auto units = ratings_by_instance(records);
  double total = 0.0;
  std::size_t used = 0;
  for (const auto& [id, ratings] : units) {
    if (ratings.size() < 2) continue;
    double mean = 0.0;
    for (double r : ratings) mean += r;
    mean /= static_cast<double>(ratings.size());
    double ss = 0.0;
    for (double r : ratings) ss += (r - mean) * (r - mean);
    total += std::sqrt(ss / static_cast<double>(ratings.size() - 1));
    ++used;
  }
  return used ? total / static_cast<double>(used) : 0.0;
}

std::map<std::string, double> demographic_signal(const std::vector<AnnotationRecord>& records,
                                                 const std::vector<AnnotatorProfile>& profiles,
                                                 const CorpusSchema& schema, double ridge_penalty)
{
  if (!(ridge_penalty > 0)) throw InputError("demographic_signal: ridge penalty must be positive");
  const OneHotEncoder encoder(schema);
  const ProfileIndex index(profiles);

  std::unordered_map<std::string, std::vector<std::size_t>> active_cache;
  RidgeAccumulator acc(encoder.width(), 1);
  Eigen::VectorXd y(1);
  for (const auto& r : records) {
    auto it = active_cache.find(r.annotator_id);
    if (it == active_cache.end())
      it = active_cache.emplace(r.annotator_id, encoder.active_columns(index.at(r.annotator_id))).first;
    y[0] = r.rating;
    acc.add_sparse(it->second, y);
  }
  const Eigen::MatrixXd beta = acc.solve_standardized(ridge_penalty);

  std::map<std::string, double> signal;
  for (const auto& block : encoder.blocks()) {
    const auto rows = beta.block(static_cast<Eigen::Index>(block.offset), 0, static_cast<Eigen::Index>(block.size), 1);
    signal[block.category] = rows.norm();
  }
  return signal;
}

nlohmann::json CorpusStatistics::to_json() const
{
  nlohmann::json j = {
      {"n_instances", n_instances},
      {"n_annotators", n_annotators},
      {"n_annotations", n_annotations},
      {"n_combinations", n_combinations},
      {"avg_annotators_per_instance", avg_annotators_per_instance},
      {"krippendorff_alpha", krippendorff_alpha ? nlohmann::json(*krippendorff_alpha) : nlohmann::json(nullptr)},
      {"mean_entropy", mean_entropy},
      {"mean_instance_sd", mean_instance_sd},
      {"demographic_signal", demographic_signal},
  };
  return j;
}

std::string CorpusStatistics::to_tsv(const std::string& dataset_name) const
{
  std::ostringstream out;
  out << "dataset\tn_instances\tn_annotators\tn_annotations\tn_combinations\tavg_per_instance\talpha\tmean_entropy\tmean_sd";
  for (const auto& [cat, v] : demographic_signal) out << "\tsignal_" << cat;
  out << '\n';
  out << dataset_name << '\t' << n_instances << '\t' << n_annotators << '\t' << n_annotations << '\t' << n_combinations
      << '\t' << format_double(avg_annotators_per_instance) << '\t'
      << (krippendorff_alpha ? format_double(*krippendorff_alpha) : std::string("nan")) << '\t'
      << format_double(mean_entropy) << '\t' << format_double(mean_instance_sd);
  for (const auto& [cat, v] : demographic_signal) out << '\t' << format_double(v);
  out << '\n';
  return out.str();
}

CorpusStatistics compute_statistics(const Corpus& corpus, const CorpusSchema& schema, const StatsOptions& options)
{
  if (corpus.records.empty()) throw InputError("corpus has no annotations");
  CorpusStatistics s;
  s.n_annotations = corpus.records.size();
  s.n_instances = unique_instances(corpus.records).size();
  const auto annotators = annotators_in(corpus.records);
  s.n_annotators = annotators.size();
  s.avg_annotators_per_instance = static_cast<double>(s.n_annotations) / static_cast<double>(s.n_instances);

  const ProfileIndex index(corpus.profiles);
  std::set<std::vector<std::string>> combos;
  for (const auto& a : annotators) combos.insert(index.at(a).combination(schema));
  s.n_combinations = combos.size();

  try {
    s.krippendorff_alpha = krippendorff_alpha(corpus.records, options.alpha_metric);
  } catch (const InputError&) {
    s.krippendorff_alpha.reset();
  }
  s.mean_entropy = mean_entropy(corpus.records, schema.scale, options.entropy_base);
  s.mean_instance_sd = mean_instance_sd(corpus.records);
  s.demographic_signal = demographic_signal(corpus.records, corpus.profiles, schema, options.ridge_penalty);
  return s;
}

}  // namespace demoe
