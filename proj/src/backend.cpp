#include "backend.hpp"

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "prompting.hpp"
#include "util.hpp"

namespace icxlt {

using nlohmann::json;

ToyBackend::ToyBackend(std::shared_ptr<const Model> model) : model_(std::move(model)) {
  if (!model_) fail(ErrKind::Config, "toy backend needs a model");
}

std::string ToyBackend::generate(const GenerationRequest& req) {
  if (req.decoding != "greedy") fail(ErrKind::Config, "toy backend only decodes greedily");
  std::vector<int> ids = encode_prompt(req.prompt, model_->vocab, model_->tmpl);
  std::vector<int> heads = generate_greedy(model_->params, model_->vocab, ids, req.max_new_tokens);
  std::vector<std::string> labels = decode_labels(heads, model_->vocab);
  return join(labels, model_->tmpl.label_sep);
}

std::string ToyBackend::describe() const { return "toy"; }

RemoteBackend::RemoteBackend(RemoteConfig config) : config_(std::move(config)) {
  if (const char* env = std::getenv("ICXLT_BACKEND_URL"); env && *env) config_.base_url = env;
  if (config_.base_url.empty()) fail(ErrKind::Config, "remote backend needs a base url");
  if (config_.timeout_ms <= 0 || config_.max_retries < 0 || config_.backoff_base_ms < 0)
    fail(ErrKind::Config, "remote backend: bad timeout/retry settings");
}

std::string RemoteBackend::generate(const GenerationRequest& req) {
  json body;
  body["prompt"] = req.prompt;
  body["max_new_tokens"] = req.max_new_tokens;
  body["decoding"] = req.decoding;
  const std::string payload = body.dump();

  std::string last_error;
  const int attempts = config_.max_retries + 1;
  for (int attempt = 0; attempt < attempts; ++attempt) {
    if (attempt > 0) {
      auto wait = std::chrono::milliseconds(
          static_cast<long long>(config_.backoff_base_ms) << (attempt - 1));
      std::this_thread::sleep_for(wait);
    }
    httplib::Client cli(config_.base_url);
    cli.set_connection_timeout(std::chrono::milliseconds(config_.timeout_ms));
    cli.set_read_timeout(std::chrono::milliseconds(config_.timeout_ms));
    cli.set_write_timeout(std::chrono::milliseconds(config_.timeout_ms));

    auto res = cli.Post("/generate", payload, "application/json");
    if (!res) {
      last_error = "transport: " + httplib::to_string(res.error());
      continue;  // connection failures and timeouts are retryable
    }
    if (res->status >= 500) {
      last_error = "server returned " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200)
      fail(ErrKind::Backend, "backend rejected request with status " + std::to_string(res->status));

    json reply = json::parse(res->body, nullptr, false);
    if (reply.is_discarded() || !reply.is_object() || !reply.contains("text") ||
        !reply["text"].is_string())
      fail(ErrKind::Backend, "backend reply is not a {\"text\": ...} object");
    return reply["text"].get<std::string>();
  }
  fail(ErrKind::Backend,
       "backend unreachable after " + std::to_string(attempts) + " attempts: " + last_error);
}

std::string RemoteBackend::describe() const { return "remote(" + config_.base_url + ")"; }

std::unique_ptr<Backend> make_backend(const BackendConfig& config,
                                      std::shared_ptr<const Model> model) {
  if (config.kind == "toy") {
    if (!model && !config.model_dir.empty())
      model = std::make_shared<const Model>(load_model(config.model_dir));
    return std::make_unique<ToyBackend>(std::move(model));
  }
  if (config.kind == "remote") return std::make_unique<RemoteBackend>(config.remote);
  fail(ErrKind::Config, "unknown backend kind '" + config.kind + "'");
}

int backend_worker_count() {
  const char* env = std::getenv("ICXLT_WORKERS");
  if (!env || !*env) return 4;
  char* end = nullptr;
  long v = std::strtol(env, &end, 10);
  if (!end || *end != '\0' || v < 1 || v > 256)
    fail(ErrKind::Config, "ICXLT_WORKERS must be an integer in [1, 256]");
  return static_cast<int>(v);
}

std::vector<GenerationResult> generate_many(Backend& backend,
                                            const std::vector<GenerationRequest>& requests,
                                            int workers) {
  std::vector<GenerationResult> results(requests.size());
  if (requests.empty()) return results;
  if (workers < 1) fail(ErrKind::Config, "worker count must be >= 1");
  workers = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(workers), requests.size()));

  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= requests.size()) return;
      try {
        results[i].text = backend.generate(requests[i]);
        results[i].ok = true;
      } catch (const std::exception& e) {
        results[i].ok = false;
        results[i].error = e.what();
      }
    }
  };

  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return results;
}

}  // namespace icxlt
