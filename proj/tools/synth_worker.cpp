// Stdio worker serving the synthetic landscape over the NDJSON protocol.

#include <chrono>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "tof/cli.hpp"
#include "tof/errors.hpp"
#include "tof/manifest.hpp"
#include "tof/synth_server.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Synthetic protocol worker", "tof_synth_worker"};
  std::string config_path;
  int version = tof::kProtocolVersion;
  int delay_ms = 0;
  bool nondeterministic = false;
  bool dump_constants = false;
  app.add_option("--config", config_path, "Run configuration (landscape and schedule)");
  app.add_option("--protocol-version", version, "Version announced in hello");
  app.add_option("--verify-delay-ms", delay_ms, "Latency added to every verify request");
  app.add_flag("--nondeterministic", nondeterministic, "Declare deterministic=false");
  app.add_flag("--dump-constants", dump_constants, "Print the landscape constants as JSON and exit");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : tof::kExitUsage;
  }
  try {
    const tof::RunConfig cfg = config_path.empty() ? tof::default_config() : tof::load_config(config_path);
    if (dump_constants) {
      std::cout << tof::dump_pretty(tof::landscape_constants(tof::SyntheticLandscape(cfg.landscape)));
      return 0;
    }
    tof::ServerOptions opts;
    opts.protocol_version = version;
    opts.verify_delay = std::chrono::milliseconds(delay_ms);
    opts.deterministic = !nondeterministic;
    tof::StdioTransport io;
    tof::SyntheticWorkerServer(cfg, opts).serve(io);
  } catch (const tof::ConfigError& e) {
    std::cerr << e.what() << "\n";
    return tof::kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }
  return 0;
}
