#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mgtood/core.hpp"

namespace mgtood {

struct EmbedRequest {
  std::vector<std::string> texts;
  std::optional<std::string> model;
};

struct EmbedResponse {
  std::vector<Embedding> embeddings;
  int dim = 0;
  std::string model;
};

struct EmbedClientOptions {
  double timeout_seconds = 30.0;
  int retries = 3;
  double backoff_base_seconds = 0.5;
  std::size_t max_batch_size = 64;
  std::optional<std::string> bearer_token;
};

/// Environment variable that, when set, replaces the endpoint argument.
inline constexpr const char* kEmbedEndpointEnv = "MGTOOD_EMBED_ENDPOINT";

/// POSTs {texts, model} to {endpoint}/v1/embed in batches. Retries 5xx and
/// transport failures with exponential backoff; 4xx fails at once. Every
/// response is checked against the count/dim contract.
EmbedResponse embed_remote(const std::string& endpoint, const EmbedRequest& request,
                           const EmbedClientOptions& options = {});

/// Signed feature hashing of character trigrams, L2-normalized. The empty
/// string maps to the zero vector.
std::vector<Embedding> embed_fallback(const std::vector<std::string>& texts, int dim, std::uint64_t seed = 0);

}  // namespace mgtood
