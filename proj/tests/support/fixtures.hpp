#pragma once

// Shared fixtures and independent oracles for the unit and acceptance tests.

#include "demoe/corpus.hpp"
#include "demoe/model.hpp"
#include "demoe/random.hpp"
#include "demoe/text_store.hpp"
#include "demoe/training.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <unistd.h>
#include <vector>

namespace demoe::testing {

/// Scratch directory removed on destruction.
class TempDir {
public:
  TempDir()
  {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("demoe-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir()
  {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path write(const std::string& name, const std::string& contents) const
  {
    const auto p = path_ / name;
    std::ofstream(p, std::ios::binary) << contents;
    return p;
  }

private:
  std::filesystem::path path_;
};

inline CorpusSchema two_category_schema()
{
  CorpusSchema schema;
  schema.scale = {1.0, 5.0, true};
  schema.categories = {{"group", {"a", "b"}}, {"noise", {"x", "y"}}};
  return schema;
}

/// Annotators a0..a{n-1}; group alternates a/b, noise cycles x/y every two.
inline std::vector<AnnotatorProfile> alternating_profiles(std::size_t n)
{
  std::vector<AnnotatorProfile> out;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back({"a" + std::to_string(i), {{"group", i % 2 ? "b" : "a"}, {"noise", (i / 2) % 2 ? "y" : "x"}}});
  return out;
}

/// Small model plus data for loss and gradient checks: 2 experts, d = 4, t = 8,
/// four instances rated by four annotators (16 samples).
struct LossFixture {
  CorpusSchema schema = two_category_schema();
  std::vector<AnnotatorProfile> profiles = alternating_profiles(4);
  TextEmbeddingStore store{8};
  std::vector<TrainingExample> batch;
  std::vector<Eigen::VectorXd> noise;
  std::unique_ptr<DemMoE> model;

  explicit LossFixture(std::uint64_t seed = 3, std::size_t experts = 2, std::size_t top_k = 2)
  {
    Rng rng(seed);
    for (int i = 0; i < 4; ++i) {
      Eigen::VectorXd t(8);
      for (auto& v : t) v = rng.normal();
      store.insert("t" + std::to_string(i), t);
    }
    ModelConfig cfg;
    cfg.text_dim = 8;
    cfg.annotator_dim = 4;
    cfg.demographic_dim = 4;
    cfg.num_experts = experts;
    cfg.top_k = top_k;
    cfg.expert_hidden = 6;
    cfg.expert_output = 5;
    cfg.init_log_variance = -1.0;
    cfg.seed = seed;
    std::vector<std::string> ids;
    for (const auto& p : profiles) ids.push_back(p.annotator_id);
    model = std::make_unique<DemMoE>(cfg, schema, RatingNormalizer(3.0, 1.2), ids);
    // Spread the gate so routing is not uniform.
    for (auto& w : model->parameters().gate.weight.reshaped()) w *= 4.0;
    for (int i = 0; i < 4; ++i)
      for (std::size_t a = 0; a < profiles.size(); ++a) {
        const double rating = 1.0 + static_cast<double>((i * 3 + static_cast<int>(a)) % 5);
        batch.push_back({"t" + std::to_string(i), profiles[a].annotator_id, &profiles[a], rating, 1.0, false});
        Eigen::VectorXd e(static_cast<Eigen::Index>(model->noise_dim()));
        for (auto& v : e) v = rng.normal();
        noise.push_back(e);
      }
  }
};

struct GradientCheck {
  std::size_t checked = 0;
  double max_relative_error = 0.0;
  std::string worst;
};

/// Compares every analytic partial derivative of total_loss with a central
/// finite difference. Relative error uses max(|a|, |n|, floor) as denominator.
inline GradientCheck check_gradient(const DemMoE& model, const TextEmbeddingStore& store,
                                    const std::vector<TrainingExample>& batch,
                                    const std::vector<Eigen::VectorXd>& noise, const LossWeights& weights,
                                    const PhaseWeights& phase_weights, Phase phase, double step = 1e-5,
                                    double floor = 1e-6)
{
  const auto analytic = total_loss(model, store, batch, &noise, weights, phase_weights, phase, true);
  Gradient grad = analytic.gradient;
  std::map<std::string, std::span<double>> by_name;
  for (auto& t : named_tensors(grad)) by_name[t.name] = t.values;

  DemMoE probe = model;
  GradientCheck out;
  for (auto& tensor : named_tensors(probe.parameters())) {
    const auto it = by_name.find(tensor.name);
    for (std::size_t i = 0; i < tensor.values.size(); ++i) {
      const double saved = tensor.values[i];
      tensor.values[i] = saved + step;
      const double up = total_loss(probe, store, batch, &noise, weights, phase_weights, phase, false).breakdown.total;
      tensor.values[i] = saved - step;
      const double down = total_loss(probe, store, batch, &noise, weights, phase_weights, phase, false).breakdown.total;
      tensor.values[i] = saved;
      const double numeric = (up - down) / (2 * step);
      const double a = it == by_name.end() ? 0.0 : it->second[i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      ++out.checked;
      if (rel > out.max_relative_error) {
        out.max_relative_error = rel;
        out.worst = tensor.name + "[" + std::to_string(i) + "] analytic " + std::to_string(a) + " numeric " +
                    std::to_string(numeric);
      }
    }
  }
  return out;
}

/// Offensiveness-preset lambda values with every auxiliary term switched on.
inline LossWeights preset_loss_weights()
{
  LossWeights w;
  w.annotator_kl = 0.001;
  w.demographic_kl = 0.0001;
  w.demo_specialization = 0.0112;
  return w;
}

inline PhaseWeights preset_phase_c() { return {0.897, 0.45, 0.585}; }

// ---------------------------------------------------------------------------
// Independent oracles

/// Krippendorff's interval alpha via explicit pair enumeration:
/// 1 - (n - 1) * sum_u sum_{pairs in u} d / (m_u - 1) / sum_{all pairs} d.
inline double alpha_by_pairs(const std::map<std::string, std::vector<double>>& units)
{
  std::vector<double> pooled;
  double within = 0;
  for (const auto& [id, v] : units) {
    if (v.size() < 2) continue;
    double s = 0;
    for (std::size_t a = 0; a < v.size(); ++a)
      for (std::size_t b = 0; b < v.size(); ++b)
        if (a != b) s += (v[a] - v[b]) * (v[a] - v[b]);
    within += s / static_cast<double>(v.size() - 1);
    pooled.insert(pooled.end(), v.begin(), v.end());
  }
  double between = 0;
  for (std::size_t a = 0; a < pooled.size(); ++a)
    for (std::size_t b = 0; b < pooled.size(); ++b)
      if (a != b) between += (pooled[a] - pooled[b]) * (pooled[a] - pooled[b]);
  const double n = static_cast<double>(pooled.size());
  return 1.0 - (n - 1) * within / between;
}

/// Optimal transport cost between two distributions on support points
/// 0..K-1 with cost |i - j|, solved as a minimum-cost flow by successive
/// shortest augmenting paths (Bellman-Ford) on the complete bipartite graph.
inline double transport_cost(const Eigen::VectorXd& p, const Eigen::VectorXd& q)
{
  struct Edge {
    std::size_t to;
    double cap;
    double cost;
    std::size_t rev;
  };
  const auto K = static_cast<std::size_t>(p.size());
  // Nodes: source 0, supply 1..K, demand K+1..2K, sink 2K+1.
  const std::size_t n = 2 * K + 2, source = 0, sink = 2 * K + 1;
  std::vector<std::vector<Edge>> g(n);
  auto add = [&](std::size_t u, std::size_t v, double cap, double cost) {
    g[u].push_back({v, cap, cost, g[v].size()});
    g[v].push_back({u, 0.0, -cost, g[u].size() - 1});
  };
  for (std::size_t i = 0; i < K; ++i) {
    add(source, 1 + i, p(static_cast<Eigen::Index>(i)), 0.0);
    add(K + 1 + i, sink, q(static_cast<Eigen::Index>(i)), 0.0);
    for (std::size_t j = 0; j < K; ++j)
      add(1 + i, K + 1 + j, 1e9, std::abs(static_cast<double>(i) - static_cast<double>(j)));
  }
  const double inf = std::numeric_limits<double>::infinity();
  double cost = 0;
  for (;;) {
    std::vector<double> dist(n, inf);
    std::vector<std::size_t> prev_node(n, n), prev_edge(n, 0);
    dist[source] = 0;
    for (std::size_t round = 0; round < n; ++round) {
      bool changed = false;
      for (std::size_t u = 0; u < n; ++u) {
        if (dist[u] == inf) continue;
        for (std::size_t e = 0; e < g[u].size(); ++e) {
          const Edge& ed = g[u][e];
          if (ed.cap > 1e-15 && dist[u] + ed.cost < dist[ed.to] - 1e-12) {
            dist[ed.to] = dist[u] + ed.cost;
            prev_node[ed.to] = u;
            prev_edge[ed.to] = e;
            changed = true;
          }
        }
      }
      if (!changed) break;
    }
    if (dist[sink] == inf) break;
    double flow = inf;
    for (std::size_t v = sink; v != source; v = prev_node[v]) flow = std::min(flow, g[prev_node[v]][prev_edge[v]].cap);
    for (std::size_t v = sink; v != source; v = prev_node[v]) {
      Edge& ed = g[prev_node[v]][prev_edge[v]];
      ed.cap -= flow;
      g[v][ed.rev].cap += flow;
    }
    cost += flow * dist[sink];
  }
  return cost;
}

inline Eigen::VectorXd random_distribution(Rng& rng, std::size_t k)
{
  Eigen::VectorXd v(static_cast<Eigen::Index>(k));
  for (auto& x : v) x = rng.uniform() < 0.2 ? 0.0 : rng.uniform();
  if (v.sum() == 0) v(0) = 1;
  return v / v.sum();
}

/// KL(p || q) after the usage smoothing.
inline double kl_smoothed(const Eigen::VectorXd& p, const Eigen::VectorXd& q, double eps = 1e-8)
{
  const double z = 1.0 + static_cast<double>(p.size()) * eps;
  double s = 0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double a = (p(i) + eps) / z, b = (q(i) + eps) / z;
    s += a * std::log(a / b);
  }
  return s;
}

}  // namespace demoe::testing
