#pragma once

#include "demoe/model.hpp"

#include <json.hpp>

#include <filesystem>

namespace demoe {

/// Self-describing model archive: model configuration, full schema and its
/// fingerprint, normalizer statistics, construction seed and every tensor.
nlohmann::json model_to_json(const DemMoE& model);
DemMoE model_from_json(const nlohmann::json& archive);

void save_checkpoint(const DemMoE& model, const std::filesystem::path& path);
DemMoE load_checkpoint(const std::filesystem::path& path);

/// Throws InputError if `schema` differs from the schema the model was built for.
void require_schema(const DemMoE& model, const CorpusSchema& schema);

nlohmann::json model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace demoe
