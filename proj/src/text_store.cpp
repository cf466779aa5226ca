#include "demoe/text_store.hpp"

#include "demoe/io.hpp"

#include <cmath>
#include <optional>
#include <fstream>
#include <sstream>

namespace demoe {

TextEmbeddingStore TextEmbeddingStore::load(const std::filesystem::path& path)
{
  std::ifstream in(path);
  if (!in) throw InputError("cannot open text embeddings " + path.string());
  std::string line;
  std::size_t line_no = 0;
  std::optional<TextEmbeddingStore> store;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#' || line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    if (!store) {
      std::string tag;
      long long dim = 0;
      if (!(ls >> tag >> dim) || tag != "dim" || dim <= 0)
        throw InputError("text embeddings: expected header 'dim <t>'", line_no);
      store.emplace(static_cast<std::size_t>(dim));
      continue;
    }
    std::string id;
    ls >> id;
    Eigen::VectorXd v(static_cast<Eigen::Index>(store->dim()));
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      if (!(ls >> v[i])) throw InputError("text embeddings: expected " + std::to_string(store->dim()) + " values", line_no);
    }
    std::string extra;
    if (ls >> extra) throw InputError("text embeddings: too many values", line_no);
    if (store->contains(id)) throw InputError("text embeddings: duplicate instance '" + id + "'", line_no);
    store->insert(id, std::move(v));
  }
  if (!store) throw InputError("text embeddings: missing 'dim <t>' header");
  return std::move(*store);
}

std::string TextEmbeddingStore::serialize() const
{
  std::string out = "dim " + std::to_string(dim_) + "\n";
  for (const auto& [id, v] : vectors_) {
    out += id;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      out += ' ';
      out += format_double(v[i]);
    }
    out += '\n';
  }
  return out;
}

void TextEmbeddingStore::insert(const std::string& instance_id, Eigen::VectorXd embedding)
{
  if (static_cast<std::size_t>(embedding.size()) != dim_)
    throw InputError("text embedding for '" + instance_id + "' has dimension " + std::to_string(embedding.size()) +
                     ", expected " + std::to_string(dim_));
  if (!embedding.allFinite()) throw InputError("text embedding for '" + instance_id + "' is not finite");
  vectors_[instance_id] = std::move(embedding);
}

const Eigen::VectorXd& TextEmbeddingStore::at(const std::string& instance_id) const
{
  auto it = vectors_.find(instance_id);
  if (it == vectors_.end()) throw InputError("missing text embedding for instance '" + instance_id + "'");
  return it->second;
}

}  // namespace demoe
