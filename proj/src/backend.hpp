#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "toymodel.hpp"

namespace icxlt {

struct GenerationRequest {
  std::string prompt;
  int max_new_tokens = 16;
  std::string decoding = "greedy";
};

struct GenerationResult {
  std::string text;
  bool ok = false;
  std::string error;  // set when !ok
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string generate(const GenerationRequest& req) = 0;
  virtual std::string describe() const = 0;
};

// Runs the bundled classifier in-process. Completions are the emitted label
// strings joined by the template's label separator.
class ToyBackend : public Backend {
 public:
  explicit ToyBackend(std::shared_ptr<const Model> model);
  std::string generate(const GenerationRequest& req) override;
  std::string describe() const override;
  const Model& model() const { return *model_; }

 private:
  std::shared_ptr<const Model> model_;
};

struct RemoteConfig {
  std::string base_url;       // "http://host:port"; ICXLT_BACKEND_URL overrides
  int timeout_ms = 30000;
  int max_retries = 2;        // attempts = max_retries + 1
  int backoff_base_ms = 250;  // doubled after every failed attempt
};

// Talks to a generation server: POST /generate with a JSON body
// {"prompt": ..., "max_new_tokens": ..., "decoding": "greedy"} and expects
// {"text": ...} back. Connection errors, timeouts and 5xx responses are
// retried; anything else malformed is a hard protocol error.
class RemoteBackend : public Backend {
 public:
  explicit RemoteBackend(RemoteConfig config);
  std::string generate(const GenerationRequest& req) override;
  std::string describe() const override;
  const RemoteConfig& config() const { return config_; }

 private:
  RemoteConfig config_;
};

struct BackendConfig {
  std::string kind = "toy";  // "toy" or "remote"
  std::string model_dir;     // toy: bundle directory
  RemoteConfig remote;
  double failure_rate_threshold = 0.01;
};

std::unique_ptr<Backend> make_backend(const BackendConfig& config,
                                      std::shared_ptr<const Model> model = nullptr);

// Number of concurrent generation workers: ICXLT_WORKERS or 4.
int backend_worker_count();

// Fans requests out over `workers` threads; results come back in request
// order. Per-request failures are captured, not thrown.
std::vector<GenerationResult> generate_many(Backend& backend,
                                            const std::vector<GenerationRequest>& requests,
                                            int workers);

}  // namespace icxlt
