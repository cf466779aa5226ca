#pragma once

#include "demoe/prompts.hpp"

#include <atomic>
#include <chrono>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <stdexcept>
#include <string>

namespace demoe {

class ProviderError : public std::runtime_error {
public:
  ProviderError(const std::string& what, bool transient) : std::runtime_error(what), transient_(transient) {}
  /// Timeouts, rate limits and server errors are transient and retried.
  bool transient() const { return transient_; }

private:
  bool transient_;
};

/// Request/response contract for a chat-completion style model.
class Provider {
public:
  virtual ~Provider() = default;
  virtual std::string id() const = 0;
  /// Returns the raw completion text or throws ProviderError. Must be safe to
  /// call from several threads.
  virtual std::string complete(const ProviderRequest& request) = 0;
};

/// Deterministic offline provider. Responses come from a table keyed by
/// (instance_id, persona_id); other requests get a rating derived from a hash
/// of the prompt. Faults can be injected per key.
class OfflineStubProvider : public Provider {
public:
  explicit OfflineStubProvider(RatingScale scale, ResponseKind kind = ResponseKind::single,
                               std::vector<std::string> qualities = {});

  std::string id() const override { return "offline-stub"; }
  std::string complete(const ProviderRequest& request) override;

  void set_response(const std::string& instance_id, const std::string& persona_id, std::string response);
  void set_rating(const std::string& instance_id, const std::string& persona_id, int rating);
  /// Every request for the key fails with a permanent error.
  void fail_always(const std::string& instance_id, const std::string& persona_id);
  /// The first `times` requests for the key fail with a transient error.
  void fail_transiently(const std::string& instance_id, const std::string& persona_id, int times);

  std::size_t requests() const { return requests_.load(); }

private:
  using Key = std::pair<std::string, std::string>;
  RatingScale scale_;
  ResponseKind kind_;
  std::vector<std::string> qualities_;
  std::mutex mutex_;
  std::map<Key, std::string> table_;
  std::set<Key> permanent_;
  std::map<Key, int> transient_;
  std::atomic<std::size_t> requests_{0};
};

struct HttpProviderConfig {
  /// Base URL, e.g. "http://localhost:8000" or "https://api.example.com".
  std::string endpoint;
  std::string path = "/v1/chat/completions";
  std::string model;
  /// Name of the environment variable holding the bearer token; empty for none.
  std::string api_key_env;
  std::chrono::seconds timeout{60};
};

/// Client for OpenAI-compatible chat-completion endpoints.
class HttpChatProvider : public Provider {
public:
  explicit HttpChatProvider(HttpProviderConfig config);

  std::string id() const override { return "http:" + config_.model; }
  std::string complete(const ProviderRequest& request) override;

private:
  HttpProviderConfig config_;
  std::string api_key_;
};

/// Canonical cache key: SHA-256 of the JSON encoding of template id, persona
/// id and description, instance id, a digest of the prompt text, decoding
/// parameters and model.
std::string cache_key(const ProviderRequest& request);

/// Thread-safe response cache with optional JSON-lines persistence.
class ResponseCache {
public:
  ResponseCache() = default;
  /// Loads existing entries from `path` (if present) and appends new ones to it.
  explicit ResponseCache(std::filesystem::path path);

  std::optional<std::string> get(const std::string& key) const;
  void put(const std::string& key, const std::string& response);
  std::size_t size() const;

private:
  mutable std::shared_mutex mutex_;
  std::map<std::string, std::string> entries_;
  std::optional<std::filesystem::path> path_;
};

}  // namespace demoe
