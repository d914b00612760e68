#pragma once

#include <chrono>
#include <map>
#include <mutex>
#include <string>

#include "json.hpp"
#include "tof/core_model.hpp"
#include "tof/protocol.hpp"
#include "tof/synthetic.hpp"

namespace tof {

struct ServerOptions {
  int protocol_version = kProtocolVersion;
  std::string name = "synthetic-worker";
  // Artificial latency added to each verify request (timeout tests).
  std::chrono::milliseconds verify_delay{0};
  bool deterministic = true;
};

/// Constants an independent worker needs to reproduce the landscape:
/// hash key, dimension, penalty, pull, noise scale and the stage targets.
nlohmann::json landscape_constants(const SyntheticLandscape& landscape);

/// Worker side of the protocol backed by the synthetic landscape. Serves
/// generate, partial_denoise, verify, gate and decompose requests; answers
/// malformed or unknown requests with an error message and keeps going.
class SyntheticWorkerServer {
 public:
  explicit SyntheticWorkerServer(const RunConfig& config, ServerOptions options = {});

  /// Sends hello + capabilities, then serves until shutdown or EOF.
  void serve(Transport& transport);

  /// Answer to one request; `kind` of the result is a *_response or "error".
  WorkerMessage handle(const WorkerMessage& request);

  std::size_t stored_latents() const;

 private:
  nlohmann::json generate(const nlohmann::json& p, bool partial);
  nlohmann::json verify(const nlohmann::json& p);
  nlohmann::json gate(const nlohmann::json& p);
  nlohmann::json decompose(const nlohmann::json& p);

  LatentRef lookup(const std::string& handle) const;
  void store(const LatentRef& latent);

  RunConfig config_;
  ServerOptions options_;
  SyntheticGenerator generator_;
  std::map<std::string, SyntheticVerifier> verifiers_;
  mutable std::mutex mutex_;
  std::map<std::string, LatentRef> latents_;
};

}  // namespace tof
