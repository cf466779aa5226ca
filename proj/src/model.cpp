#include "demoe/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace demoe {

namespace {

constexpr double kEmbeddingInitScale = 0.1;

Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng)
{
  Eigen::MatrixXd m(rows, cols);
  const double scale = 1.0 / std::sqrt(static_cast<double>(std::max<Eigen::Index>(cols, 1)));
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = scale * rng.normal();
  return m;
}

const GaussianEmbedding& annotator_embedding(const EmbeddingTables& tables, const std::string& annotator_id)
{
  auto it = tables.annotators.find(annotator_id);
  return it == tables.annotators.end() ? tables.default_annotator : it->second;
}

}  // namespace

GaussianEmbedding GaussianEmbedding::random(std::size_t dim, Rng& rng, double mean_scale, double log_variance)
{
  GaussianEmbedding g;
  g.mean.resize(static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < g.mean.size(); ++i) g.mean[i] = mean_scale * rng.normal();
  g.log_variance = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(dim), log_variance);
  return g;
}

GaussianEmbedding GaussianEmbedding::zeros(std::size_t dim)
{
  GaussianEmbedding g;
  g.mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim));
  g.log_variance = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim));
  return g;
}

Eigen::VectorXd GaussianEmbedding::sample(const Eigen::Ref<const Eigen::VectorXd>& noise) const
{
  return mean.array() + (0.5 * log_variance.array()).exp() * noise.array();
}

Eigen::VectorXd Expert::operator()(const Eigen::Ref<const Eigen::VectorXd>& x) const
{
  return w2 * (w1 * x + b1).array().tanh().matrix() + b2;
}

Eigen::VectorXd softmax(const Eigen::Ref<const Eigen::VectorXd>& scores)
{
  const double m = scores.maxCoeff();
  Eigen::VectorXd e = (scores.array() - m).exp();
  return e / e.sum();
}

std::vector<std::size_t> top_k_indices(const Eigen::Ref<const Eigen::VectorXd>& values, std::size_t k)
{
  std::vector<std::size_t> idx(static_cast<std::size_t>(values.size()));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return values[static_cast<Eigen::Index>(a)] > values[static_cast<Eigen::Index>(b)];
  });
  idx.resize(std::min(k, idx.size()));
  return idx;
}

RoutingDecision route(const GateParameters& gate, const ModelInput& input, std::size_t k, bool renormalize)
{
  const auto experts = static_cast<std::size_t>(gate.weight.rows());
  if (k < 1 || k > experts)
    throw std::invalid_argument("top_k must be in [1, " + std::to_string(experts) + "], got " + std::to_string(k));
  if (!input.x.allFinite()) throw NonFiniteError("gate input is not finite");

  RoutingDecision d;
  d.scores = gate.weight * input.x + gate.bias;
  d.probabilities = softmax(d.scores);
  d.selected = top_k_indices(d.probabilities, k);
  double mass = 0.0;
  for (auto j : d.selected) mass += d.probabilities[static_cast<Eigen::Index>(j)];
  for (auto j : d.selected) {
    const double p = d.probabilities[static_cast<Eigen::Index>(j)];
    d.weights.push_back(renormalize ? p / mass : p);
  }
  return d;
}

ForwardResult forward(const ExpertPool& pool, const RoutingDecision& decision, const ModelInput& input,
                      const RatingNormalizer& normalizer)
{
  ForwardResult r;
  r.hidden = Eigen::VectorXd::Zero(pool.head.weight.size());
  for (std::size_t n = 0; n < decision.selected.size(); ++n) {
    r.expert_outputs.push_back(pool.experts.at(decision.selected[n])(input.x));
    r.hidden += decision.weights[n] * r.expert_outputs.back();
  }
  r.normalized_output = pool.head.weight.dot(r.hidden) + pool.head.bias;
  r.prediction = normalizer.denormalize(r.normalized_output);
  return r;
}

Eigen::VectorXd usage_vector(const RoutingDecision& decision, std::size_t num_experts)
{
  Eigen::VectorXd u = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(num_experts));
  for (std::size_t n = 0; n < decision.selected.size(); ++n)
    u[static_cast<Eigen::Index>(decision.selected[n])] += decision.weights[n];
  return u;
}

Eigen::VectorXd expert_usage(std::span<const RoutingDecision> decisions, std::size_t num_experts)
{
  if (decisions.empty()) throw std::invalid_argument("expert_usage: no routing decisions");
  Eigen::VectorXd u = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(num_experts));
  for (const auto& d : decisions) u += usage_vector(d, num_experts);
  const double total = u.sum();
  if (total > 0) u /= total;
  return u;
}

ModelInput embed_with_noise(const EmbeddingTables& tables, const TextEmbeddingStore& store, const CorpusSchema& schema,
                            const std::string& instance_id, const std::string& annotator_id,
                            const AnnotatorProfile& profile, const Eigen::VectorXd* noise)
{
  const Eigen::VectorXd& text = store.at(instance_id);
  const GaussianEmbedding& ann = annotator_embedding(tables, annotator_id);
  const auto a = static_cast<Eigen::Index>(ann.dim());
  Eigen::Index total = text.size() + a;
  for (const auto& table : tables.demographics) total += static_cast<Eigen::Index>(table.begin()->second.dim());
  const Eigen::Index noise_len = total - text.size();
  if (noise && noise->size() != noise_len)
    throw std::invalid_argument("noise vector has size " + std::to_string(noise->size()) + ", expected " +
                                std::to_string(noise_len));

  ModelInput in;
  in.x.resize(total);
  in.x.head(text.size()) = text;
  Eigen::Index off = text.size();
  in.x.segment(off, a) = noise ? ann.sample(noise->segment(0, a)) : ann.mean;
  off += a;
  for (std::size_t c = 0; c < schema.categories.size(); ++c) {
    const auto& cat = schema.categories[c];
    const auto& table = tables.demographics.at(c);
    const std::string value = profile.value(cat.name);
    auto it = table.find(value);
    if (it == table.end())
      throw std::invalid_argument("unknown value '" + value + "' for category '" + cat.name + "'");
    const auto dd = static_cast<Eigen::Index>(it->second.dim());
    in.x.segment(off, dd) =
        noise ? it->second.sample(noise->segment(off - text.size(), dd)) : it->second.mean;
    off += dd;
  }
  return in;
}

ModelInput embed_sample(const EmbeddingTables& tables, const TextEmbeddingStore& store, const CorpusSchema& schema,
                        const std::string& instance_id, const std::string& annotator_id,
                        const AnnotatorProfile& profile, std::optional<std::uint64_t> noise_seed)
{
  if (!noise_seed) return embed_with_noise(tables, store, schema, instance_id, annotator_id, profile, nullptr);
  Eigen::Index n = static_cast<Eigen::Index>(annotator_embedding(tables, annotator_id).dim());
  for (const auto& table : tables.demographics) n += static_cast<Eigen::Index>(table.begin()->second.dim());
  Eigen::VectorXd noise(n);
  Rng rng(*noise_seed);
  rng.fill_normal(std::span<double>(noise.data(), static_cast<std::size_t>(n)));
  return embed_with_noise(tables, store, schema, instance_id, annotator_id, profile, &noise);
}

namespace {

std::span<double> view(Eigen::MatrixXd& m) { return {m.data(), static_cast<std::size_t>(m.size())}; }
std::span<double> view(Eigen::VectorXd& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

void add_embedding(std::vector<NamedTensor>& out, const std::string& prefix, GaussianEmbedding& g)
{
  out.push_back({prefix + ".mean", false, view(g.mean)});
  out.push_back({prefix + ".log_variance", false, view(g.log_variance)});
}

}  // namespace

std::vector<NamedTensor> named_tensors(ModelParameters& params, bool include_default)
{
  std::vector<NamedTensor> out;
  out.push_back({"gate.weight", true, view(params.gate.weight)});
  out.push_back({"gate.bias", true, view(params.gate.bias)});
  for (std::size_t e = 0; e < params.pool.experts.size(); ++e) {
    auto& ex = params.pool.experts[e];
    const std::string p = "expert" + std::to_string(e);
    out.push_back({p + ".w1", false, view(ex.w1)});
    out.push_back({p + ".b1", false, view(ex.b1)});
    out.push_back({p + ".w2", false, view(ex.w2)});
    out.push_back({p + ".b2", false, view(ex.b2)});
  }
  out.push_back({"head.weight", false, view(params.pool.head.weight)});
  out.push_back({"head.bias", false, std::span<double>(&params.pool.head.bias, 1)});
  if (include_default) add_embedding(out, "annotator_default", params.embeddings.default_annotator);
  for (auto& [id, g] : params.embeddings.annotators) add_embedding(out, "annotator[" + id + "]", g);
  for (std::size_t c = 0; c < params.embeddings.demographics.size(); ++c)
    for (auto& [value, g] : params.embeddings.demographics[c])
      add_embedding(out, "demographic[" + std::to_string(c) + "=" + value + "]", g);
  return out;
}

DemMoE::DemMoE(ModelConfig config, CorpusSchema schema, RatingNormalizer normalizer,
               const std::vector<std::string>& annotator_ids)
    : config_(config), schema_(std::move(schema)), normalizer_(normalizer)
{
  schema_.validate();
  if (config_.text_dim == 0) throw std::invalid_argument("text_dim must be positive");
  if (config_.annotator_dim == 0 || config_.demographic_dim == 0)
    throw std::invalid_argument("embedding dimensions must be positive");
  if (config_.num_experts == 0) config_.num_experts = schema_.categories.size();
  if (config_.num_experts == 0) throw std::invalid_argument("model needs at least one expert");
  if (config_.top_k < 1 || config_.top_k > config_.num_experts)
    throw std::invalid_argument("top_k must be in [1, " + std::to_string(config_.num_experts) + "], got " +
                                std::to_string(config_.top_k));
  if (config_.expert_hidden == 0 || config_.expert_output == 0)
    throw std::invalid_argument("expert dimensions must be positive");

  const auto E = static_cast<Eigen::Index>(config_.num_experts);
  const auto in = static_cast<Eigen::Index>(input_dim());
  const auto H = static_cast<Eigen::Index>(config_.expert_hidden);
  const auto O = static_cast<Eigen::Index>(config_.expert_output);

  Rng gate_rng(substream_seed(config_.seed, "init.gate"));
  params_.gate.weight = random_matrix(E, in, gate_rng);
  params_.gate.bias = Eigen::VectorXd::Zero(E);

  Rng expert_rng(substream_seed(config_.seed, "init.experts"));
  for (Eigen::Index e = 0; e < E; ++e) {
    Expert ex;
    ex.w1 = random_matrix(H, in, expert_rng);
    ex.b1 = Eigen::VectorXd::Zero(H);
    ex.w2 = random_matrix(O, H, expert_rng);
    ex.b2 = Eigen::VectorXd::Zero(O);
    params_.pool.experts.push_back(std::move(ex));
  }
  Rng head_rng(substream_seed(config_.seed, "init.head"));
  params_.pool.head.weight = random_matrix(O, 1, head_rng).col(0) / std::sqrt(static_cast<double>(O));
  params_.pool.head.bias = 0.0;

  Rng default_rng(substream_seed(config_.seed, "init.default_annotator"));
  params_.embeddings.default_annotator =
      GaussianEmbedding::random(config_.annotator_dim, default_rng, kEmbeddingInitScale, config_.init_log_variance);

  std::vector<std::string> ids = annotator_ids;
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  Rng ann_rng(substream_seed(config_.seed, "init.annotators"));
  for (const auto& id : ids)
    params_.embeddings.annotators.emplace(
        id, GaussianEmbedding::random(config_.annotator_dim, ann_rng, kEmbeddingInitScale, config_.init_log_variance));

  Rng demo_rng(substream_seed(config_.seed, "init.demographics"));
  for (const auto& cat : schema_.categories) {
    std::map<std::string, GaussianEmbedding> table;
    for (const auto& v : cat.values())
      table.emplace(v, GaussianEmbedding::random(config_.demographic_dim, demo_rng, kEmbeddingInitScale,
                                                 config_.init_log_variance));
    params_.embeddings.demographics.push_back(std::move(table));
  }
}

DemMoE::DemMoE(ModelConfig config, CorpusSchema schema, RatingNormalizer normalizer, ModelParameters params)
    : config_(config), schema_(std::move(schema)), normalizer_(normalizer), params_(std::move(params))
{
  if (config_.num_experts == 0) config_.num_experts = params_.pool.experts.size();
  if (params_.pool.experts.size() != config_.num_experts)
    throw std::invalid_argument("parameter expert count does not match the configuration");
  if (params_.embeddings.demographics.size() != schema_.categories.size())
    throw std::invalid_argument("demographic tables do not match the schema");
  if (static_cast<std::size_t>(params_.gate.weight.cols()) != input_dim())
    throw std::invalid_argument("gate input width does not match the configuration");
}

std::size_t DemMoE::input_dim() const { return config_.text_dim + noise_dim(); }

std::size_t DemMoE::noise_dim() const
{
  return config_.annotator_dim + schema_.categories.size() * config_.demographic_dim;
}

ModelInput DemMoE::embed(const TextEmbeddingStore& store, const std::string& instance_id,
                         const std::string& annotator_id, const AnnotatorProfile& profile,
                         const Eigen::VectorXd* noise) const
{
  if (store.dim() != config_.text_dim)
    throw std::invalid_argument("text embedding dimension " + std::to_string(store.dim()) +
                                " does not match model text_dim " + std::to_string(config_.text_dim));
  return embed_with_noise(params_.embeddings, store, schema_, instance_id, annotator_id, profile, noise);
}

RoutingDecision DemMoE::route(const ModelInput& input) const
{
  return demoe::route(params_.gate, input, config_.top_k, config_.renormalize_topk);
}

double DemMoE::predict(const TextEmbeddingStore& store, const std::string& instance_id,
                       const std::string& annotator_id, const AnnotatorProfile& profile) const
{
  const auto in = embed(store, instance_id, annotator_id, profile);
  return forward(params_.pool, route(in), in, normalizer_).prediction;
}

RoutingDecision DemMoE::route_sample(const TextEmbeddingStore& store, const std::string& instance_id,
                                     const std::string& annotator_id, const AnnotatorProfile& profile) const
{
  return route(embed(store, instance_id, annotator_id, profile));
}

}  // namespace demoe
