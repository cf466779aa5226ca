#include "demoe/evaluation.hpp"

#include "demoe/io.hpp"
#include "demoe/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace demoe {

std::vector<PredictionRecord> predict_records(const DemMoE& model, const TextEmbeddingStore& store,
                                              const std::vector<AnnotationRecord>& records,
                                              const ProfileIndex& profiles, bool clip)
{
  std::vector<PredictionRecord> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    double y = model.predict(store, r.instance_id, r.annotator_id, profiles.at(r.annotator_id));
    if (clip) y = model.schema().scale.clip(y);
    out.push_back({r.instance_id, r.annotator_id, y, r.rating});
  }
  return out;
}

std::vector<PredictionRecord> clip_predictions(std::vector<PredictionRecord> records, const RatingScale& scale)
{
  for (auto& r : records) r.predicted = scale.clip(r.predicted);
  return records;
}

double mae(std::span<const PredictionRecord> records)
{
  if (records.empty()) throw std::invalid_argument("mae: no predictions");
  double total = 0.0;
  for (const auto& r : records) total += std::abs(r.predicted - r.actual);
  return total / static_cast<double>(records.size());
}

Correlation pearson_r(std::span<const double> x, std::span<const double> y)
{
  if (x.size() != y.size()) throw std::invalid_argument("pearson_r: series differ in length");
  if (x.size() < 2) throw std::invalid_argument("pearson_r: need at least two points");
  // Constant series are detected exactly; the mean of identical values need not round-trip.
  auto constant = [](std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [&](double a) { return a == v.front(); });
  };
  if (constant(x) || constant(y)) return {0.0, true};
  const auto n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0 || syy <= 0) return {0.0, true};
  return {std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0), false};
}

Correlation pearson_r(std::span<const PredictionRecord> records)
{
  std::vector<double> p, a;
  p.reserve(records.size());
  a.reserve(records.size());
  for (const auto& r : records) {
    p.push_back(r.predicted);
    a.push_back(r.actual);
  }
  return pearson_r(p, a);
}

double emd_1d(const Eigen::Ref<const Eigen::VectorXd>& p, const Eigen::Ref<const Eigen::VectorXd>& q)
{
  if (p.size() != q.size()) throw std::invalid_argument("emd_1d: distributions have different supports");
  double cp = 0, cq = 0, total = 0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    cp += p[i];
    cq += q[i];
    total += std::abs(cp - cq);
  }
  return total;
}

Eigen::VectorXd rating_distribution(std::span<const double> ratings, const RatingScale& scale)
{
  Eigen::VectorXd h = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(scale.points().size()));
  for (double r : ratings) h[static_cast<Eigen::Index>(scale.nearest_point(r))] += 1.0;
  if (!ratings.empty()) h /= static_cast<double>(ratings.size());
  return h;
}

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

bool record_less(const PredictionRecord& a, const PredictionRecord& b)
{
  return std::tie(a.instance_id, a.annotator_id) < std::tie(b.instance_id, b.annotator_id);
}

double quantile(std::vector<double> values, double q)
{
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

double mean_of(const std::vector<double>& v)
{
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

SubgroupResult bootstrap_subgroup(const std::string& category, const std::string& value,
                                  const std::vector<double>& errors, const BootstrapOptions& options)
{
  SubgroupResult r{category, value, errors.size(), errors.empty(), kNaN, kNaN, kNaN};
  if (errors.empty()) return r;
  r.mae = mean_of(errors);
  std::vector<double> reps(options.n_boot);
  const std::string stream = "bootstrap/" + category + "=" + value;
  for (std::size_t b = 0; b < options.n_boot; ++b) {
    Rng rng(substream_seed(options.seed, stream, b));
    double s = 0;
    for (std::size_t i = 0; i < errors.size(); ++i) s += errors[rng.uniform_index(errors.size())];
    reps[b] = s / static_cast<double>(errors.size());
  }
  const double tail = (1.0 - options.confidence) / 2.0;
  // Percentile intervals can miss the point estimate on tiny, skewed samples.
  r.ci_lower = std::min(quantile(reps, tail), r.mae);
  r.ci_upper = std::max(quantile(reps, 1.0 - tail), r.mae);
  return r;
}

void check_bootstrap(const BootstrapOptions& o)
{
  if (o.n_boot < 100) throw std::invalid_argument("n_bootstrap must be >= 100");
  if (!(o.confidence > 0 && o.confidence < 1)) throw std::invalid_argument("confidence must be in (0, 1)");
  if (!(o.alpha > 0 && o.alpha < 1)) throw std::invalid_argument("significance level must be in (0, 1)");
}

nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

nlohmann::json subgroup_json(const SubgroupResult& s)
{
  return {{"category", s.category}, {"value", s.value},          {"count", s.count},
          {"empty", s.empty},       {"mae", number_or_null(s.mae)}, {"ci_lower", number_or_null(s.ci_lower)},
          {"ci_upper", number_or_null(s.ci_upper)}};
}

std::string tsv_number(double v) { return std::isfinite(v) ? format_double(v) : "NA"; }

}  // namespace

const SubgroupResult& GroupReport::find(const std::string& category, const std::string& value) const
{
  for (const auto& s : subgroups)
    if (s.category == category && s.value == value) return s;
  throw std::out_of_range("no subgroup " + category + "=" + value);
}

nlohmann::json GroupReport::to_json() const
{
  nlohmann::json groups = nlohmann::json::array();
  for (const auto& s : subgroups) groups.push_back(subgroup_json(s));
  return {{"system", system}, {"total", total}, {"overall", subgroup_json(overall)}, {"subgroups", groups}};
}

std::string GroupReport::to_tsv(bool header) const
{
  std::ostringstream out;
  if (header) out << "system\tcategory\tvalue\tcount\tmae\tci_lower\tci_upper\n";
  auto row = [&](const SubgroupResult& s) {
    out << system << '\t' << s.category << '\t' << s.value << '\t' << s.count << '\t' << tsv_number(s.mae) << '\t'
        << tsv_number(s.ci_lower) << '\t' << tsv_number(s.ci_upper) << '\n';
  };
  row(overall);
  for (const auto& s : subgroups) row(s);
  return out.str();
}

GroupReport group_mae_with_bootstrap(std::vector<PredictionRecord> records, const ProfileIndex& profiles,
                                     const CorpusSchema& schema, const BootstrapOptions& options,
                                     const std::string& system)
{
  check_bootstrap(options);
  if (records.empty()) throw std::invalid_argument("group_mae_with_bootstrap: no predictions");
  std::sort(records.begin(), records.end(), record_less);

  GroupReport report;
  report.system = system;
  report.total = records.size();
  std::vector<double> all;
  all.reserve(records.size());
  for (const auto& r : records) all.push_back(std::abs(r.predicted - r.actual));
  report.overall = bootstrap_subgroup("all", "all", all, options);

  for (const auto& cat : schema.categories) {
    std::map<std::string, std::vector<double>> by_value;
    for (const auto& v : cat.values()) by_value[v];
    for (std::size_t i = 0; i < records.size(); ++i)
      by_value.at(profiles.at(records[i].annotator_id).value(cat.name)).push_back(all[i]);
    for (const auto& v : cat.values()) report.subgroups.push_back(bootstrap_subgroup(cat.name, v, by_value[v], options));
  }
  return report;
}

std::vector<SystemComparison> compare_systems(const std::string& name_a, std::vector<PredictionRecord> a,
                                              const std::string& name_b, std::vector<PredictionRecord> b,
                                              const ProfileIndex& profiles, const CorpusSchema& schema,
                                              const BootstrapOptions& options)
{
  check_bootstrap(options);
  if (a.size() != b.size()) throw std::invalid_argument("compare_systems: systems cover different record sets");
  std::sort(a.begin(), a.end(), record_less);
  std::sort(b.begin(), b.end(), record_less);
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].instance_id != b[i].instance_id || a[i].annotator_id != b[i].annotator_id || a[i].actual != b[i].actual)
      throw std::invalid_argument("compare_systems: systems cover different record sets");

  auto compare = [&](const std::string& category, const std::string& value, const std::vector<std::size_t>& idx) {
    SystemComparison c{category, value, name_a, name_b, idx.size(), kNaN, kNaN, 1.0, false};
    if (idx.empty()) return c;
    std::vector<double> ea, eb;
    for (auto i : idx) {
      ea.push_back(std::abs(a[i].predicted - a[i].actual));
      eb.push_back(std::abs(b[i].predicted - b[i].actual));
    }
    c.mae_a = mean_of(ea);
    c.mae_b = mean_of(eb);
    const std::string stream = "compare/" + category + "=" + value;
    std::size_t not_better = 0;
    for (std::size_t r = 0; r < options.n_boot; ++r) {
      Rng rng(substream_seed(options.seed, stream, r));
      double diff = 0;
      for (std::size_t n = 0; n < idx.size(); ++n) {
        const auto k = rng.uniform_index(idx.size());
        diff += ea[k] - eb[k];
      }
      if (diff >= 0) ++not_better;
    }
    c.p_value = static_cast<double>(not_better) / static_cast<double>(options.n_boot);
    c.a_better = c.p_value < options.alpha;
    return c;
  };

  std::vector<SystemComparison> out;
  std::vector<std::size_t> all(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) all[i] = i;
  out.push_back(compare("all", "all", all));
  for (const auto& cat : schema.categories) {
    std::map<std::string, std::vector<std::size_t>> by_value;
    for (const auto& v : cat.values()) by_value[v];
    for (std::size_t i = 0; i < a.size(); ++i) by_value.at(profiles.at(a[i].annotator_id).value(cat.name)).push_back(i);
    for (const auto& v : cat.values()) out.push_back(compare(cat.name, v, by_value[v]));
  }
  return out;
}

std::string comparisons_to_tsv(const std::vector<SystemComparison>& comparisons)
{
  std::ostringstream out;
  out << "category\tvalue\tsystem_a\tsystem_b\tcount\tmae_a\tmae_b\tp_value\ta_better\n";
  for (const auto& c : comparisons)
    out << c.category << '\t' << c.value << '\t' << c.system_a << '\t' << c.system_b << '\t' << c.count << '\t'
        << tsv_number(c.mae_a) << '\t' << tsv_number(c.mae_b) << '\t' << format_double(c.p_value) << '\t'
        << (c.a_better ? "true" : "false") << '\n';
  return out.str();
}

namespace {

Correlation safe_pearson(const std::vector<double>& x, const std::vector<double>& y)
{
  if (x.size() < 2) return {0.0, true};
  return pearson_r(x, y);
}

nlohmann::json correlation_json(const Correlation& c) { return {{"r", c.r}, {"degenerate", c.degenerate}}; }

}  // namespace

DistributionMetrics distribution_metrics(std::span<const PredictionRecord> records, const RatingScale& scale)
{
  DistributionMetrics m;
  m.n_records = records.size();
  if (records.empty()) return m;
  m.empty = false;
  m.mae = mae(records);
  std::vector<double> p, a;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> by_instance;
  for (const auto& r : records) {
    p.push_back(r.predicted);
    a.push_back(r.actual);
    auto& slot = by_instance[r.instance_id];
    slot.first.push_back(r.predicted);
    slot.second.push_back(r.actual);
  }
  m.pearson = safe_pearson(p, a);

  std::vector<double> mp, ma;
  double emd_sum = 0, abs_sum = 0;
  for (const auto& [id, slot] : by_instance) {
    InstanceDistribution d;
    d.instance_id = id;
    d.predicted = rating_distribution(slot.first, scale);
    d.actual = rating_distribution(slot.second, scale);
    d.emd = emd_1d(d.predicted, d.actual);
    d.mean_predicted = mean_of(slot.first);
    d.mean_actual = mean_of(slot.second);
    emd_sum += d.emd;
    abs_sum += std::abs(d.mean_predicted - d.mean_actual);
    mp.push_back(d.mean_predicted);
    ma.push_back(d.mean_actual);
    m.instances.push_back(std::move(d));
  }
  m.n_instances = m.instances.size();
  m.mean_emd = emd_sum / static_cast<double>(m.n_instances);
  m.instance_mae = abs_sum / static_cast<double>(m.n_instances);
  m.instance_pearson = safe_pearson(mp, ma);
  return m;
}

nlohmann::json DistributionMetrics::to_json(bool with_instances) const
{
  nlohmann::json j = {{"empty", empty}, {"n_records", n_records}, {"n_instances", n_instances}};
  if (!empty) {
    j["mae"] = mae;
    j["pearson"] = correlation_json(pearson);
    j["instance_mae"] = instance_mae;
    j["instance_pearson"] = correlation_json(instance_pearson);
    j["mean_emd"] = mean_emd;
  }
  if (with_instances) {
    nlohmann::json inst = nlohmann::json::array();
    for (const auto& d : instances)
      inst.push_back({{"instance_id", d.instance_id},
                      {"predicted", std::vector<double>(d.predicted.data(), d.predicted.data() + d.predicted.size())},
                      {"actual", std::vector<double>(d.actual.data(), d.actual.data() + d.actual.size())},
                      {"emd", d.emd}});
    j["instances"] = std::move(inst);
  }
  return j;
}

nlohmann::json DistributionReport::to_json(bool with_instances) const
{
  return {{"overall", overall.to_json(with_instances)},
          {"seen", seen.to_json(with_instances)},
          {"unseen", unseen.to_json(with_instances)}};
}

DistributionReport seen_unseen_split_eval(const std::vector<PredictionRecord>& records,
                                          const std::set<std::string>& train_annotators, const RatingScale& scale)
{
  std::vector<PredictionRecord> seen, unseen;
  for (const auto& r : records) (train_annotators.count(r.annotator_id) ? seen : unseen).push_back(r);
  return {distribution_metrics(records, scale), distribution_metrics(seen, scale), distribution_metrics(unseen, scale)};
}

Correlation error_density_correlation(const GroupReport& report, const std::optional<std::map<std::string, double>>& counts)
{
  std::vector<double> errors, sizes;
  for (const auto& s : report.subgroups) {
    if (s.empty) continue;
    double n = static_cast<double>(s.count);
    if (counts) {
      auto it = counts->find(s.category + "=" + s.value);
      if (it == counts->end()) continue;
      n = it->second;
    }
    errors.push_back(s.mae);
    sizes.push_back(n);
  }
  if (errors.size() < 2) throw std::invalid_argument("error_density_correlation: need at least two groups");
  return pearson_r(errors, sizes);
}

BaselineKind baseline_kind_from_string(const std::string& name)
{
  if (name == "random") return BaselineKind::random;
  if (name == "mean") return BaselineKind::mean;
  throw std::invalid_argument("unknown baseline '" + name + "' (expected random or mean)");
}

std::vector<PredictionRecord> baseline_predict(BaselineKind kind, const std::vector<AnnotationRecord>& train_records,
                                               const std::vector<AnnotationRecord>& targets, const RatingScale& scale,
                                               std::uint64_t seed)
{
  std::vector<PredictionRecord> out;
  out.reserve(targets.size());
  if (kind == BaselineKind::mean) {
    if (train_records.empty()) throw std::invalid_argument("mean baseline needs training ratings");
    double total = 0;
    for (const auto& r : train_records) total += r.rating;
    const double mean = total / static_cast<double>(train_records.size());
    for (const auto& t : targets) out.push_back({t.instance_id, t.annotator_id, mean, t.rating});
    return out;
  }
  const auto points = scale.points();
  Rng rng(substream_seed(seed, "baseline.random"));
  for (const auto& t : targets) out.push_back({t.instance_id, t.annotator_id, points[rng.uniform_index(points.size())], t.rating});
  return out;
}

}  // namespace demoe
