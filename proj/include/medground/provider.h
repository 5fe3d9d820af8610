#pragma once

// Text-completion providers used to generate question/answer pairs.

#include <chrono>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace medground::forge {

struct CompletionRequest {
  std::string prompt;
  int max_tokens = 1024;
  double temperature = 0.7;
  // Labels the prompt is about. Not sent over the wire; the stub provider
  // uses them to fill its fallback response.
  std::vector<std::string> labels;
};

class CompletionProvider {
 public:
  virtual ~CompletionProvider() = default;
  // Returns the completion text. Throws Error(kProviderError) on failure.
  virtual std::string Complete(const CompletionRequest& request) = 0;
};

// Hex form of Fnv1a64(prompt), 16 lowercase digits.
std::string PromptKey(const std::string& prompt);

// Offline provider. Serves <dir>/<PromptKey(prompt)>.txt when present,
// otherwise <dir>/default.txt with every "{labels}" replaced by the request
// labels joined with " and ". Missing both is a ProviderError.
class StubProvider : public CompletionProvider {
 public:
  explicit StubProvider(std::filesystem::path dir) : dir_(std::move(dir)) {}
  std::string Complete(const CompletionRequest& request) override;

 private:
  std::filesystem::path dir_;
};

// POSTs {"prompt", "max_tokens", "temperature"} as JSON to `url` and reads
// {"text"} from the reply. A non-empty api_key is sent as a bearer token.
class HttpProvider : public CompletionProvider {
 public:
  HttpProvider(std::string url, std::string api_key,
               std::chrono::milliseconds timeout = std::chrono::seconds(60));
  std::string Complete(const CompletionRequest& request) override;

 private:
  std::string base_;  // scheme://host[:port]
  std::string path_;
  std::string api_key_;
  std::chrono::milliseconds timeout_;
};

}  // namespace medground::forge
