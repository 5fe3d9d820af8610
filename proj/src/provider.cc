#include "medground/provider.h"

#include <cstdio>
#include <filesystem>

#include <httplib.h>

#include "medground/error.h"
#include "medground/json_io.h"
#include "medground/random.h"

namespace medground::forge {

std::string PromptKey(const std::string& prompt) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(Fnv1a64(prompt)));
  return buf;
}

std::string StubProvider::Complete(const CompletionRequest& request) {
  const auto keyed = dir_ / (PromptKey(request.prompt) + ".txt");
  if (std::filesystem::exists(keyed)) return ReadFile(keyed);
  const auto fallback = dir_ / "default.txt";
  if (!std::filesystem::exists(fallback)) {
    throw Error(ErrorKind::kProviderError,
                "stub has no response for prompt " + PromptKey(request.prompt));
  }
  std::string joined;
  for (std::size_t i = 0; i < request.labels.size(); ++i) {
    if (i > 0) joined += " and ";
    joined += request.labels[i];
  }
  std::string text = ReadFile(fallback);
  const std::string token = "{labels}";
  for (auto pos = text.find(token); pos != std::string::npos;
       pos = text.find(token, pos + joined.size())) {
    text.replace(pos, token.size(), joined);
  }
  return text;
}

HttpProvider::HttpProvider(std::string url, std::string api_key,
                           std::chrono::milliseconds timeout)
    : api_key_(std::move(api_key)), timeout_(timeout) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw Error(ErrorKind::kInvalidArgument, "provider url needs a scheme");
  }
  const auto path_start = url.find('/', scheme_end + 3);
  base_ = url.substr(0, path_start);
  path_ = path_start == std::string::npos ? "/" : url.substr(path_start);
}

std::string HttpProvider::Complete(const CompletionRequest& request) {
  Json body;
  body["prompt"] = request.prompt;
  body["max_tokens"] = request.max_tokens;
  body["temperature"] = request.temperature;

  httplib::Client client(base_);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout_);
  const auto usecs =
      std::chrono::duration_cast<std::chrono::microseconds>(timeout_ - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());
  httplib::Headers headers;
  if (!api_key_.empty()) {
    headers.emplace("Authorization", "Bearer " + api_key_);
  }
  const auto res = client.Post(path_, headers, body.dump(), "application/json");
  if (!res) {
    throw Error(ErrorKind::kProviderError,
                "provider request failed: " + httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    throw Error(ErrorKind::kProviderError,
                "provider returned HTTP " + std::to_string(res->status));
  }
  try {
    const Json reply = Json::parse(res->body);
    return reply.at("text").get<std::string>();
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorKind::kProviderError, "provider reply lacks 'text'");
  }
}

}  // namespace medground::forge
