#pragma once

#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "tof/core_model.hpp"
#include "tof/generator.hpp"
#include "tof/protocol.hpp"
#include "tof/search.hpp"
#include "tof/verifier.hpp"

namespace tof {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitWorker = 3,
  kExitUsage = 64,
};

/// Generator, ensemble and hooks for one run. Verifier ids declared by an
/// attached worker are served by that worker; the rest ("synthetic",
/// "alignment", "smoothness", "constant") run in process.
struct Backends {
  std::vector<std::shared_ptr<WorkerSession>> sessions;
  std::unique_ptr<Generator> generator;
  Ensemble ensemble;
  std::unique_ptr<PromptDecomposer> decomposer;
  std::function<GateDecision(const PartialFrameState&, double)> clarity;

  SearchOptions options(int threads) const;
  void shutdown();
};

/// Attaches one worker session per entry of config.worker_endpoints (each a
/// shell command) and builds the remaining backends in process. Throws
/// ConfigError for verifier ids nobody serves.
Backends make_backends(const RunConfig& config, const SessionOptions& session = {});

/// Reads and validates a config file; throws ConfigError.
RunConfig load_config(const std::string& path);

/// Parses "n=1..16", "1,2,4,8" or mixtures such as "n=1..4,8,16".
/// Throws ConfigError on malformed or non-increasing grids.
std::vector<int> parse_grid(const std::string& spec);

/// Entry point of the `tof` executable; args exclude the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tof
