#include "mgtood/embed_client.hpp"

#include <chrono>
#include <cstdlib>
#include <thread>

#include <httplib.h>
#include <json.hpp>

namespace mgtood {

using json = nlohmann::json;

namespace {

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = 14695981039346656037ull ^ (seed * 0x9e3779b97f4a7c15ull);
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

struct Attempt {
  int status = 0;  // 0 means transport failure
  std::string body;
  std::string error;
};

EmbedResponse parse_response(const std::string& body, std::size_t expected_count) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception& e) {
    throw DataError(std::string("embed: response is not valid JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("embeddings") || !j["embeddings"].is_array()) {
    throw DataError("embed: response lacks an 'embeddings' array");
  }
  EmbedResponse r;
  if (j.contains("model") && j["model"].is_string()) r.model = j["model"].get<std::string>();
  const auto& rows = j["embeddings"];
  if (rows.size() != expected_count) {
    throw DataError("embed: schema violation, " + std::to_string(rows.size()) + " vectors for " +
                    std::to_string(expected_count) + " texts");
  }
  std::optional<int> dim;
  if (j.contains("dim")) {
    if (!j["dim"].is_number_integer()) throw DataError("embed: 'dim' must be an integer");
    dim = j["dim"].get<int>();
  }
  for (const auto& row : rows) {
    if (!row.is_array()) throw DataError("embed: embedding rows must be arrays");
    const int d = static_cast<int>(row.size());
    if (!dim) dim = d;
    if (d != *dim || d == 0) throw DataError("embed: schema violation, inconsistent embedding dim");
    Embedding e(d);
    for (int i = 0; i < d; ++i) {
      if (!row[i].is_number()) throw DataError("embed: embedding entries must be numbers");
      e[i] = row[i].get<double>();
      if (!std::isfinite(e[i])) throw DataError("embed: non-finite embedding entry");
    }
    r.embeddings.push_back(std::move(e));
  }
  r.dim = dim.value_or(0);
  return r;
}

}  // namespace

EmbedResponse embed_remote(const std::string& endpoint_arg, const EmbedRequest& request,
                           const EmbedClientOptions& options) {
  std::string endpoint = endpoint_arg;
  if (const char* env = std::getenv(kEmbedEndpointEnv); env && *env) endpoint = env;
  while (!endpoint.empty() && endpoint.back() == '/') endpoint.pop_back();
  if (endpoint.empty()) throw ConfigError("embed: no endpoint given");
  if (options.retries < 0) throw ConfigError("embed: retries must be non-negative");
  if (options.max_batch_size == 0) throw ConfigError("embed: max_batch_size must be positive");

  httplib::Client client(endpoint);
  if (!client.is_valid()) throw ConfigError("embed: unsupported endpoint '" + endpoint + "'");
  const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(
      std::chrono::duration<double>(options.timeout_seconds));
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);
  if (options.bearer_token) client.set_bearer_token_auth(*options.bearer_token);

  EmbedResponse out;
  for (std::size_t begin = 0; begin < request.texts.size(); begin += options.max_batch_size) {
    const std::size_t end = std::min(request.texts.size(), begin + options.max_batch_size);
    json body = {{"texts", std::vector<std::string>(request.texts.begin() + begin, request.texts.begin() + end)}};
    if (request.model) body["model"] = *request.model;
    const std::string payload = body.dump();

    Attempt last;
    for (int attempt = 0;; ++attempt) {
      auto res = client.Post("/v1/embed", payload, "application/json");
      last = Attempt{};
      if (res) {
        last.status = res->status;
        last.body = res->body;
      } else {
        last.error = httplib::to_string(res.error());
      }
      if (last.status >= 200 && last.status < 300) break;
      if (last.status >= 400 && last.status < 500) {
        throw Error("embed: request rejected with HTTP " + std::to_string(last.status) + ": " + last.body);
      }
      if (attempt >= options.retries) {
        throw Error("embed: giving up after " + std::to_string(attempt + 1) + " attempts (" +
                    (last.status ? "HTTP " + std::to_string(last.status) : last.error) + ")");
      }
      const double wait = options.backoff_base_seconds * static_cast<double>(1u << std::min(attempt, 20));
      std::this_thread::sleep_for(std::chrono::duration<double>(wait));
    }

    auto part = parse_response(last.body, end - begin);
    if (begin == 0) {
      out.dim = part.dim;
      out.model = part.model;
    } else if (part.dim != out.dim) {
      throw DataError("embed: schema violation, dim changed between batches");
    }
    for (auto& e : part.embeddings) out.embeddings.push_back(std::move(e));
  }
  return out;
}

std::vector<Embedding> embed_fallback(const std::vector<std::string>& texts, int dim, std::uint64_t seed) {
  if (dim < 8) throw ConfigError("embed_fallback: dim must be at least 8");
  std::vector<Embedding> out;
  out.reserve(texts.size());
  for (const auto& text : texts) {
    Embedding v = Embedding::Zero(dim);
    if (text.empty()) {
      warn("embed_fallback: empty text embedded as the zero vector");
      out.push_back(std::move(v));
      continue;
    }
    const std::string padded = "^" + text + "$";
    for (std::size_t i = 0; i + 3 <= padded.size(); ++i) {
      const std::uint64_t h = fnv1a(std::string_view(padded).substr(i, 3), seed);
      const auto bucket = static_cast<Eigen::Index>(h % static_cast<std::uint64_t>(dim));
      v[bucket] += (h >> 63) ? -1.0 : 1.0;
    }
    const double norm = v.norm();
    if (norm > 0.0) v /= norm;
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace mgtood
