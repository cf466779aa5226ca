#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "demoe/provider.hpp"

#include "demoe/digest.hpp"
#include "demoe/io.hpp"
#include "demoe/random.hpp"

#include <cstdlib>
#include <fstream>

namespace demoe {

OfflineStubProvider::OfflineStubProvider(RatingScale scale, ResponseKind kind, std::vector<std::string> qualities)
    : scale_(scale), kind_(kind), qualities_(std::move(qualities))
{
}

void OfflineStubProvider::set_response(const std::string& instance_id, const std::string& persona_id,
                                       std::string response)
{
  std::lock_guard lock(mutex_);
  table_[{instance_id, persona_id}] = std::move(response);
}

void OfflineStubProvider::set_rating(const std::string& instance_id, const std::string& persona_id, int rating)
{
  if (kind_ == ResponseKind::multi_quality) {
    std::vector<std::string> expl(qualities_.size(), "stub explanation");
    set_response(instance_id, persona_id,
                 format_multi_quality_response(qualities_, expl, std::vector<int>(qualities_.size(), rating)));
  } else {
    set_response(instance_id, persona_id, format_response("stub explanation", rating));
  }
}

void OfflineStubProvider::fail_always(const std::string& instance_id, const std::string& persona_id)
{
  std::lock_guard lock(mutex_);
  permanent_.insert({instance_id, persona_id});
}

void OfflineStubProvider::fail_transiently(const std::string& instance_id, const std::string& persona_id, int times)
{
  std::lock_guard lock(mutex_);
  transient_[{instance_id, persona_id}] = times;
}

std::string OfflineStubProvider::complete(const ProviderRequest& request)
{
  ++requests_;
  const Key key{request.instance_id, request.persona_id};
  {
    std::lock_guard lock(mutex_);
    if (permanent_.count(key)) throw ProviderError("stub: permanent failure for " + key.first, false);
    if (auto it = transient_.find(key); it != transient_.end() && it->second > 0) {
      --it->second;
      throw ProviderError("stub: transient failure for " + key.first, true);
    }
    if (auto it = table_.find(key); it != table_.end()) return it->second;
  }
  const auto points = scale_.points();
  const std::uint64_t h = substream_seed(0, request.system_prompt + "\n" + request.user_prompt);
  if (kind_ == ResponseKind::multi_quality) {
    std::vector<std::string> expl(qualities_.size(), "stub explanation");
    std::vector<int> ratings;
    for (std::size_t q = 0; q < qualities_.size(); ++q)
      ratings.push_back(static_cast<int>(points[substream_seed(h, "quality", q) % points.size()]));
    return format_multi_quality_response(qualities_, expl, ratings);
  }
  return format_response("stub explanation", static_cast<int>(points[h % points.size()]));
}

HttpChatProvider::HttpChatProvider(HttpProviderConfig config) : config_(std::move(config))
{
  if (config_.endpoint.empty()) throw InputError("provider endpoint is required");
  if (config_.model.empty()) throw InputError("provider model is required");
  if (!config_.api_key_env.empty()) {
    const char* key = std::getenv(config_.api_key_env.c_str());
    if (!key || !*key) throw InputError("environment variable " + config_.api_key_env + " is not set");
    api_key_ = key;
  }
}

std::string HttpChatProvider::complete(const ProviderRequest& request)
{
  httplib::Client client(config_.endpoint);
  client.set_connection_timeout(config_.timeout);
  client.set_read_timeout(config_.timeout);
  client.set_write_timeout(config_.timeout);
  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

  const nlohmann::json body = {{"model", request.model.empty() ? config_.model : request.model},
                               {"messages",
                                {{{"role", "system"}, {"content", request.system_prompt}},
                                 {{"role", "user"}, {"content", request.user_prompt}}}},
                               {"temperature", request.params.temperature},
                               {"max_tokens", request.params.max_tokens}};
  auto res = client.Post(config_.path, headers, body.dump(), "application/json");
  if (!res) throw ProviderError("provider request failed: " + httplib::to_string(res.error()), true);
  if (res->status == 429 || res->status >= 500)
    throw ProviderError("provider returned HTTP " + std::to_string(res->status), true);
  if (res->status != 200) throw ProviderError("provider returned HTTP " + std::to_string(res->status), false);
  try {
    const auto j = nlohmann::json::parse(res->body);
    return j.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ProviderError(std::string("malformed provider response: ") + e.what(), false);
  }
}

std::string cache_key(const ProviderRequest& request)
{
  const nlohmann::json j = {{"template", request.template_id},
                            {"persona_id", request.persona_id},
                            {"persona", request.persona_description},
                            {"instance", request.instance_id},
                            {"prompt_digest", sha256_hex(request.system_prompt + '\0' + request.user_prompt)},
                            {"params", request.params.to_json()},
                            {"model", request.model}};
  return sha256_hex(j.dump());
}

ResponseCache::ResponseCache(std::filesystem::path path) : path_(std::move(path))
{
  if (!std::filesystem::exists(*path_)) return;
  for_each_json_line(*path_, [&](const nlohmann::json& row, std::size_t line) {
    if (!row.contains("key") || !row.contains("response")) throw InputError("cache entry needs key and response", line);
    entries_[row.at("key").get<std::string>()] = row.at("response").get<std::string>();
  });
}

std::optional<std::string> ResponseCache::get(const std::string& key) const
{
  std::shared_lock lock(mutex_);
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void ResponseCache::put(const std::string& key, const std::string& response)
{
  std::unique_lock lock(mutex_);
  if (!entries_.emplace(key, response).second) return;
  if (path_) {
    std::ofstream out(*path_, std::ios::app);
    out << nlohmann::json{{"key", key}, {"response", response}}.dump() << '\n';
    if (!out) throw std::runtime_error("cannot append to response cache " + path_->string());
  }
}

std::size_t ResponseCache::size() const
{
  std::shared_lock lock(mutex_);
  return entries_.size();
}

}  // namespace demoe
