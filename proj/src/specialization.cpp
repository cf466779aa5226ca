#include "demoe/specialization.hpp"

#include "demoe/io.hpp"
#include "demoe/losses.hpp"
#include "demoe/ridge.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace demoe {

std::vector<GroupUsage> collect_group_usage(const std::vector<RoutingDecision>& decisions,
                                            const std::vector<const AnnotatorProfile*>& profiles,
                                            const CorpusSchema& schema, std::size_t num_experts)
{
  if (decisions.size() != profiles.size()) throw std::invalid_argument("one profile per routing decision required");
  std::vector<GroupUsage> out;
  for (const auto& cat : schema.categories) {
    GroupUsage g;
    g.category = cat.name;
    std::map<std::string, std::pair<Eigen::VectorXd, std::size_t>> acc;
    for (std::size_t i = 0; i < decisions.size(); ++i) {
      auto [it, fresh] = acc.try_emplace(profiles[i]->value(cat.name),
                                         Eigen::VectorXd::Zero(static_cast<Eigen::Index>(num_experts)), 0);
      it->second.first += usage_vector(decisions[i], num_experts);
      ++it->second.second;
    }
    for (const auto& v : cat.values()) {
      auto it = acc.find(v);
      if (it == acc.end()) continue;
      g.values.push_back(v);
      g.usage.push_back(it->second.first / it->second.first.sum());
      g.counts.push_back(it->second.second);
    }
    out.push_back(std::move(g));
  }
  return out;
}

SpecializationScore within_group_score(const GroupUsage& usage)
{
  SpecializationScore s;
  s.category = usage.category;
  s.n_subgroups = usage.usage.size();
  if (usage.usage.size() < 2) return s;
  const auto K = usage.usage.front().size();
  double total = 0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < usage.usage.size(); ++i)
    for (std::size_t j = i + 1; j < usage.usage.size(); ++j) {
      total += symmetric_kl(usage.usage[i], usage.usage[j]);
      ++pairs;
    }
  s.raw = total / static_cast<double>(pairs);
  s.normalized = K > 1 ? s.raw / std::log(static_cast<double>(K)) : 0.0;
  return s;
}

namespace {

double correlation_distance(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b)
{
  const Eigen::RowVectorXd ca = a.array() - a.mean();
  const Eigen::RowVectorXd cb = b.array() - b.mean();
  const double den = std::sqrt(ca.squaredNorm() * cb.squaredNorm());
  const double r = den > 1e-300 ? ca.dot(cb) / den : 0.0;
  return 1.0 - r;
}

}  // namespace

std::vector<std::size_t> cluster_order(const Eigen::MatrixXd& rows)
{
  const auto n = static_cast<std::size_t>(rows.rows());
  if (n == 0) return {};
  Eigen::MatrixXd dist(rows.rows(), rows.rows());
  for (Eigen::Index i = 0; i < rows.rows(); ++i)
    for (Eigen::Index j = 0; j < rows.rows(); ++j)
      dist(i, j) = i == j ? 0.0 : correlation_distance(rows.row(i), rows.row(j));

  // Each live cluster keeps its leaf order; merging concatenates left then right.
  std::vector<std::vector<std::size_t>> clusters(n);
  for (std::size_t i = 0; i < n; ++i) clusters[i] = {i};
  std::vector<bool> live(n, true);
  for (std::size_t step = 1; step < n; ++step) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t bi = 0, bj = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!live[i]) continue;
      for (std::size_t j = i + 1; j < n; ++j) {
        if (!live[j]) continue;
        double sum = 0;
        for (auto a : clusters[i])
          for (auto b : clusters[j]) sum += dist(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
        const double avg = sum / static_cast<double>(clusters[i].size() * clusters[j].size());
        if (avg < best - 1e-15) {
          best = avg;
          bi = i;
          bj = j;
        }
      }
    }
    clusters[bi].insert(clusters[bi].end(), clusters[bj].begin(), clusters[bj].end());
    clusters[bj].clear();
    live[bj] = false;
  }
  for (std::size_t i = 0; i < n; ++i)
    if (live[i]) return clusters[i];
  return {};
}

CrossGroupMap cross_group_map(const Eigen::MatrixXd& usage, const std::vector<const AnnotatorProfile*>& profiles,
                              const CorpusSchema& schema, double ridge_penalty)
{
  if (static_cast<std::size_t>(usage.rows()) != profiles.size())
    throw std::invalid_argument("cross_group_map: one profile per usage row required");
  OneHotEncoder encoder(schema);
  RidgeAccumulator acc(encoder.width(), static_cast<std::size_t>(usage.cols()));
  for (std::size_t i = 0; i < profiles.size(); ++i)
    acc.add_sparse(encoder.active_columns(*profiles[i]), usage.row(static_cast<Eigen::Index>(i)).transpose());

  CrossGroupMap map;
  map.features = encoder.column_names();
  for (Eigen::Index e = 0; e < usage.cols(); ++e) map.experts.push_back("expert" + std::to_string(e));
  map.coefficients = acc.solve_standardized(ridge_penalty);
  map.row_order = cluster_order(map.coefficients);
  map.col_order = cluster_order(map.coefficients.transpose());
  return map;
}

std::string CrossGroupMap::to_tsv() const
{
  std::ostringstream out;
  out << "feature\texpert\tcoefficient\trow_rank\tcol_rank\n";
  for (std::size_t r = 0; r < row_order.size(); ++r)
    for (std::size_t c = 0; c < col_order.size(); ++c)
      out << features[row_order[r]] << '\t' << experts[col_order[c]] << '\t'
          << format_double(coefficients(static_cast<Eigen::Index>(row_order[r]), static_cast<Eigen::Index>(col_order[c])))
          << '\t' << r << '\t' << c << '\n';
  return out.str();
}

Eigen::MatrixXd usage_heatmap(const GroupUsage& usage)
{
  if (usage.usage.empty()) return {};
  Eigen::MatrixXd m(static_cast<Eigen::Index>(usage.usage.size()), usage.usage.front().size());
  for (std::size_t i = 0; i < usage.usage.size(); ++i) {
    const double total = usage.usage[i].sum();
    m.row(static_cast<Eigen::Index>(i)) = total > 0 ? Eigen::RowVectorXd(usage.usage[i].transpose() / total)
                                                    : Eigen::RowVectorXd(usage.usage[i].transpose());
  }
  return m;
}

std::string usage_heatmap_tsv(const GroupUsage& usage)
{
  const auto m = usage_heatmap(usage);
  std::ostringstream out;
  out << "category\tvalue\texpert\tshare\tcount\n";
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index e = 0; e < m.cols(); ++e)
      out << usage.category << '\t' << usage.values[static_cast<std::size_t>(i)] << "\texpert" << e << '\t'
          << format_double(m(i, e)) << '\t' << usage.counts[static_cast<std::size_t>(i)] << '\n';
  return out.str();
}

std::string specialization_scores_tsv(const std::vector<SpecializationScore>& scores)
{
  std::ostringstream out;
  out << "category\traw\tnormalized\tsubgroups\n";
  for (const auto& s : scores)
    out << s.category << '\t' << format_double(s.raw) << '\t' << format_double(s.normalized) << '\t' << s.n_subgroups
        << '\n';
  return out.str();
}

}  // namespace demoe
