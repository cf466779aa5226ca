#include "demoe/checkpoint.hpp"

#include "demoe/io.hpp"

namespace demoe {

namespace {

constexpr const char* kFormat = "demoe-checkpoint";
constexpr int kFormatVersion = 1;

nlohmann::json vector_json(const Eigen::VectorXd& v)
{
  return std::vector<double>(v.data(), v.data() + v.size());
}

Eigen::VectorXd vector_from(const nlohmann::json& j)
{
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

nlohmann::json matrix_json(const Eigen::MatrixXd& m)
{
  // Column-major, matching Eigen's storage.
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::vector<double>(m.data(), m.data() + m.size())}};
}

Eigen::MatrixXd matrix_from(const nlohmann::json& j)
{
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != rows * cols) throw InputError("checkpoint: matrix size mismatch");
  return Eigen::Map<const Eigen::MatrixXd>(data.data(), rows, cols);
}

nlohmann::json embedding_json(const GaussianEmbedding& g)
{
  return {{"mean", vector_json(g.mean)}, {"log_variance", vector_json(g.log_variance)}};
}

GaussianEmbedding embedding_from(const nlohmann::json& j)
{
  GaussianEmbedding g{vector_from(j.at("mean")), vector_from(j.at("log_variance"))};
  if (g.mean.size() != g.log_variance.size()) throw InputError("checkpoint: embedding size mismatch");
  return g;
}

}  // namespace

nlohmann::json model_config_to_json(const ModelConfig& c)
{
  return {{"text_dim", c.text_dim},
          {"annotator_dim", c.annotator_dim},
          {"demographic_dim", c.demographic_dim},
          {"num_experts", c.num_experts},
          {"top_k", c.top_k},
          {"expert_hidden", c.expert_hidden},
          {"expert_output", c.expert_output},
          {"renormalize_topk", c.renormalize_topk},
          {"init_log_variance", c.init_log_variance},
          {"seed", c.seed}};
}

ModelConfig model_config_from_json(const nlohmann::json& j)
{
  ModelConfig c;
  c.text_dim = j.at("text_dim").get<std::size_t>();
  c.annotator_dim = j.at("annotator_dim").get<std::size_t>();
  c.demographic_dim = j.at("demographic_dim").get<std::size_t>();
  c.num_experts = j.at("num_experts").get<std::size_t>();
  c.top_k = j.at("top_k").get<std::size_t>();
  c.expert_hidden = j.at("expert_hidden").get<std::size_t>();
  c.expert_output = j.at("expert_output").get<std::size_t>();
  c.renormalize_topk = j.at("renormalize_topk").get<bool>();
  c.init_log_variance = j.at("init_log_variance").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

nlohmann::json model_to_json(const DemMoE& model)
{
  const auto& p = model.parameters();
  nlohmann::json experts = nlohmann::json::array();
  for (const auto& e : p.pool.experts)
    experts.push_back(
        {{"w1", matrix_json(e.w1)}, {"b1", vector_json(e.b1)}, {"w2", matrix_json(e.w2)}, {"b2", vector_json(e.b2)}});
  nlohmann::json annotators = nlohmann::json::object();
  for (const auto& [id, g] : p.embeddings.annotators) annotators[id] = embedding_json(g);
  nlohmann::json demographics = nlohmann::json::array();
  for (const auto& table : p.embeddings.demographics) {
    nlohmann::json t = nlohmann::json::object();
    for (const auto& [v, g] : table) t[v] = embedding_json(g);
    demographics.push_back(std::move(t));
  }

  return {{"format", kFormat},
          {"format_version", kFormatVersion},
          {"config", model_config_to_json(model.config())},
          {"seed", model.config().seed},
          {"schema", model.schema().to_json()},
          {"schema_fingerprint", model.schema().fingerprint()},
          {"normalizer", {{"mean", model.normalizer().mean()}, {"std", model.normalizer().std_dev()}}},
          {"parameters",
           {{"gate", {{"weight", matrix_json(p.gate.weight)}, {"bias", vector_json(p.gate.bias)}}},
            {"experts", experts},
            {"head", {{"weight", vector_json(p.pool.head.weight)}, {"bias", p.pool.head.bias}}},
            {"default_annotator", embedding_json(p.embeddings.default_annotator)},
            {"annotators", annotators},
            {"demographics", demographics}}}};
}

DemMoE model_from_json(const nlohmann::json& a)
{
  try {
    if (a.value("format", "") != kFormat) throw InputError("not a model checkpoint");
    if (a.at("format_version").get<int>() != kFormatVersion)
      throw InputError("unsupported checkpoint version " + a.at("format_version").dump());
    auto schema = CorpusSchema::from_json(a.at("schema"));
    if (schema.fingerprint() != a.at("schema_fingerprint").get<std::string>())
      throw InputError("checkpoint schema fingerprint does not match its stored schema");
    const auto config = model_config_from_json(a.at("config"));
    const auto& n = a.at("normalizer");
    RatingNormalizer normalizer(n.at("mean").get<double>(), n.at("std").get<double>());

    const auto& pj = a.at("parameters");
    ModelParameters p;
    p.gate.weight = matrix_from(pj.at("gate").at("weight"));
    p.gate.bias = vector_from(pj.at("gate").at("bias"));
    for (const auto& e : pj.at("experts"))
      p.pool.experts.push_back(
          {matrix_from(e.at("w1")), vector_from(e.at("b1")), matrix_from(e.at("w2")), vector_from(e.at("b2"))});
    p.pool.head.weight = vector_from(pj.at("head").at("weight"));
    p.pool.head.bias = pj.at("head").at("bias").get<double>();
    p.embeddings.default_annotator = embedding_from(pj.at("default_annotator"));
    for (const auto& [id, g] : pj.at("annotators").items()) p.embeddings.annotators.emplace(id, embedding_from(g));
    for (const auto& t : pj.at("demographics")) {
      std::map<std::string, GaussianEmbedding> table;
      for (const auto& [v, g] : t.items()) table.emplace(v, embedding_from(g));
      p.embeddings.demographics.push_back(std::move(table));
    }
    return DemMoE(config, std::move(schema), normalizer, std::move(p));
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed checkpoint: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw InputError(std::string("inconsistent checkpoint: ") + e.what());
  }
}

void save_checkpoint(const DemMoE& model, const std::filesystem::path& path)
{
  write_file_atomic(path, model_to_json(model).dump() + "\n");
}

DemMoE load_checkpoint(const std::filesystem::path& path) { return model_from_json(read_json_file(path)); }

void require_schema(const DemMoE& model, const CorpusSchema& schema)
{
  if (model.schema().fingerprint() != schema.fingerprint())
    throw InputError("checkpoint was trained on schema " + model.schema().fingerprint() + " but the corpus schema is " +
                     schema.fingerprint());
}

}  // namespace demoe
