#include "tof/cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "tof/analysis.hpp"
#include "tof/errors.hpp"
#include "tof/manifest.hpp"
#include "tof/seed.hpp"
#include "tof/synth_server.hpp"
#include "tof/synthetic.hpp"
#include "tof/worker_adapters.hpp"

namespace tof {

namespace {

enum class LogLevel { error = 0, info = 1, debug = 2 };

struct Logger {
  std::ostream& err;
  LogLevel level = LogLevel::info;

  void operator()(LogLevel at, const std::string& msg) const {
    if (at > level) return;
    static const char* names[] = {"error", "info", "debug"};
    err << "[tof " << names[static_cast<int>(at)] << "] " << msg << '\n';
  }
};

LogLevel log_level_from_env() {
  const char* v = std::getenv("TOF_LOG_LEVEL");
  if (v == nullptr || *v == '\0') return LogLevel::info;
  const std::string s(v);
  if (s == "error") return LogLevel::error;
  if (s == "info") return LogLevel::info;
  if (s == "debug") return LogLevel::debug;
  throw ConfigError("TOF_LOG_LEVEL must be one of error, info, debug (got '" + s + "')");
}

std::shared_ptr<Verifier> builtin_verifier(const std::string& id, const SyntheticLandscape& land) {
  if (id == "synthetic") return std::make_shared<SyntheticVerifier>(land, SyntheticTerm::full, id);
  if (id == "alignment") return std::make_shared<SyntheticVerifier>(land, SyntheticTerm::alignment, id);
  if (id == "smoothness") return std::make_shared<SyntheticVerifier>(land, SyntheticTerm::smoothness, id);
  if (id == "constant") return std::make_shared<ConstantVerifier>(0.0, id);
  return nullptr;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::filesystem::create_directories(p.parent_path().empty() ? "." : p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw RunError("cannot write " + p.string());
  out << text;
}

std::string utc_now() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string fmt(double v) {
  std::ostringstream ss;
  ss << std::setprecision(12) << v;
  return ss.str();
}

}  // namespace

SearchOptions Backends::options(int threads) const {
  SearchOptions o;
  o.threads = threads;
  o.decomposer = decomposer.get();
  o.clarity = clarity;
  return o;
}

void Backends::shutdown() {
  for (auto& s : sessions) s->shutdown();
}

Backends make_backends(const RunConfig& config, const SessionOptions& session) {
  Backends b;
  for (const auto& cmd : config.worker_endpoints) {
    b.sessions.push_back(std::make_shared<WorkerSession>(std::make_unique<SubprocessTransport>(cmd), session));
  }
  const SyntheticLandscape land(config.landscape);
  for (const auto& s : b.sessions) {
    if (!b.generator && s->capabilities().has_role("generator")) {
      b.generator = std::make_unique<WorkerGenerator>(s, config.schedule);
    }
    if (!b.decomposer && s->capabilities().has_role("decomposer")) {
      b.decomposer = std::make_unique<WorkerDecomposer>(s);
    }
    if (!b.clarity && s->capabilities().has_role("gate")) {
      std::shared_ptr<WorkerSession> keep = s;
      b.clarity = [keep](const PartialFrameState& st, double th) { return worker_clarity_gate(*keep, st, th); };
    }
  }
  if (!b.generator) b.generator = std::make_unique<SyntheticGenerator>(land, config.schedule);

  std::vector<std::string> unserved;
  for (const auto& [id, weight] : config.verifier_weights) {
    std::shared_ptr<Verifier> v;
    for (const auto& s : b.sessions) {
      const auto& caps = s->capabilities();
      if (caps.has_role("verifier") &&
          std::find(caps.verifier_ids.begin(), caps.verifier_ids.end(), id) != caps.verifier_ids.end()) {
        v = std::make_shared<WorkerVerifier>(s, id);
        break;
      }
    }
    if (!v) v = builtin_verifier(id, land);
    if (!v) {
      unserved.push_back("verifier '" + id + "' is neither built in nor served by an attached worker");
      continue;
    }
    b.ensemble.add(std::move(v), weight);
  }
  if (!unserved.empty()) throw ConfigError(unserved);
  return b;
}

RunConfig load_config(const std::string& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const InputError& e) {
    throw ConfigError(e.what());
  }
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return config_from_json(doc);
}

std::vector<int> parse_grid(const std::string& spec) {
  std::string s = spec;
  if (s.rfind("n=", 0) == 0) s = s.substr(2);
  if (s.empty()) throw ConfigError("empty grid '" + spec + "'");
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  auto parse_int = [&](const std::string& t) {
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(t, &used);
    } catch (const std::exception&) {
      throw ConfigError("malformed grid '" + spec + "'");
    }
    if (used != t.size() || v < 1) throw ConfigError("malformed grid '" + spec + "'");
    return v;
  };
  while (std::getline(ss, item, ',')) {
    const auto dots = item.find("..");
    if (dots == std::string::npos) {
      out.push_back(parse_int(item));
      continue;
    }
    const int lo = parse_int(item.substr(0, dots));
    const int hi = parse_int(item.substr(dots + 2));
    if (hi < lo) throw ConfigError("descending range in grid '" + spec + "'");
    for (int n = lo; n <= hi; ++n) out.push_back(n);
  }
  for (std::size_t i = 1; i < out.size(); ++i) {
    if (out[i] <= out[i - 1]) throw ConfigError("grid values must be strictly increasing: '" + spec + "'");
  }
  return out;
}

namespace {

struct CommonFlags {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string out_dir;
  std::vector<std::string> workers;
  int threads = 1;
};

RunConfig resolve_config(const CommonFlags& f, std::optional<Algorithm> algorithm) {
  RunConfig c = f.config_path.empty() ? default_config() : load_config(f.config_path);
  if (algorithm) c.algorithm = *algorithm;
  if (f.seed_given) c.master_seed = f.seed;
  if (!f.workers.empty()) c.worker_endpoints = f.workers;
  require_valid(c);
  return c;
}

int cmd_search(const CommonFlags& f, Algorithm alg, std::ostream& out, const Logger& log) {
  const RunConfig cfg = resolve_config(f, alg);
  log(LogLevel::info, std::string("running ") + to_string(alg) + " search, N=" + std::to_string(cfg.schedule.roots) +
                          " T=" + std::to_string(cfg.schedule.depth) + " seed=" + std::to_string(cfg.master_seed));
  Backends b = make_backends(cfg);
  const auto start = std::chrono::steady_clock::now();
  const std::string started = utc_now();
  SearchResult r = run_search(cfg, *b.generator, b.ensemble, b.options(f.threads));
  const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  b.shutdown();
  const std::filesystem::path dir = f.out_dir.empty() ? std::filesystem::path("tof-out") : std::filesystem::path(f.out_dir);
  const RunFiles files = write_run(dir, cfg, r,
                                   {{"started_at", started},
                                    {"elapsed_seconds", elapsed},
                                    {"threads", f.threads},
                                    {"events", r.events.size()}});
  const LedgerTotals tot = r.ledger.totals();
  log(LogLevel::debug, std::to_string(r.events.size()) + " events, " + std::to_string(r.finalists.size()) +
                           " finalists, " + std::to_string(elapsed) + " s");
  out << "best_score " << fmt(r.best_score()) << "\n"
      << "nfe " << tot.nfe << "\n"
      << "extend_calls " << tot.extend_calls << "\n"
      << "manifest " << files.manifest.string() << "\n";
  if (r.faults > 0) log(LogLevel::info, std::to_string(r.faults) + " backend faults absorbed");
  if (r.nondeterministic_backends) log(LogLevel::info, "nondeterministic backend attached; run flagged");
  return kExitOk;
}

int cmd_oracle(const CommonFlags& f, std::ostream& out, const Logger& log) {
  const RunConfig cfg = resolve_config(f, Algorithm::oracle);
  const SyntheticLandscape land(cfg.landscape);
  log(LogLevel::info, "enumerating " + std::to_string(tree_path_count(cfg.schedule)) + " paths");
  const OracleResult o = brute_force_oracle(land, cfg.schedule, cfg.master_seed);
  nlohmann::json event = {{"event", "oracle"}, {"paths", o.paths}, {"best_score", o.best_score},
                          {"best_seeds", o.best_seeds}};
  const std::string log_text = events_jsonl({event});
  const nlohmann::json manifest = {{"format", "tof-run-manifest/1"},
                                   {"algorithm", "oracle"},
                                   {"config", to_json(cfg)},
                                   {"best_seeds", o.best_seeds},
                                   {"scores", {{"final", o.best_score}}},
                                   {"paths", o.paths},
                                   {"event_log", {{"file", "events.jsonl"}, {"lines", 1}, {"sha1", git_blob_sha1(log_text)}}}};
  const std::filesystem::path dir = f.out_dir.empty() ? std::filesystem::path("tof-out") : std::filesystem::path(f.out_dir);
  write_text(dir / "events.jsonl", log_text);
  write_text(dir / "manifest.json", dump_pretty(manifest));
  out << "best_score " << fmt(o.best_score) << "\n"
      << "paths " << o.paths << "\n"
      << "manifest " << (dir / "manifest.json").string() << "\n";
  return kExitOk;
}

std::string render(const std::vector<ScalingCurve>& curves, const std::string& format) {
  if (format == "table") return curve_table(curves);
  if (format == "svg") return curve_svg(curves);
  if (curves.size() == 1) return dump_pretty(to_json(curves.front()));
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& c : curves) arr.push_back(to_json(c));
  return dump_pretty(arr);
}

int cmd_bench(const CommonFlags& f, const std::string& grid_spec, const std::string& which,
              const std::string& format, std::ostream& out, const Logger& log) {
  const RunConfig cfg = resolve_config(f, std::nullopt);
  const std::vector<int> grid = parse_grid(grid_spec);
  std::vector<Algorithm> algs;
  if (which == "both") {
    algs = {Algorithm::linear, Algorithm::tof};
  } else if (which == "linear") {
    algs = {Algorithm::linear};
  } else if (which == "tof") {
    algs = {Algorithm::tof};
  } else {
    algs = {cfg.algorithm == Algorithm::linear ? Algorithm::linear : Algorithm::tof};
  }
  std::vector<ScalingCurve> curves;
  for (Algorithm a : algs) {
    log(LogLevel::info, std::string("bench ") + to_string(a) + " over " + std::to_string(grid.size()) + " points");
    auto search = [&](const RunConfig& c) {
      Backends b = make_backends(c);
      SearchResult r = run_search(c, *b.generator, b.ensemble, b.options(f.threads));
      b.shutdown();
      log(LogLevel::debug, "n=" + std::to_string(c.schedule.roots) + " best=" + fmt(r.best_score()));
      return r;
    };
    curves.push_back(run_scaling_experiment(a, grid, cfg, search));
  }
  const std::string text = render(curves, format);
  if (!f.out_dir.empty()) {
    const char* name = format == "svg" ? "curve.svg" : format == "table" ? "curve.txt" : "curve.json";
    write_text(std::filesystem::path(f.out_dir) / name, text);
  }
  out << text;
  return kExitOk;
}

int cmd_fit(const std::string& input, const std::string& format, std::ostream& out) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_file(input));
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError(input + ": " + e.what());
  }
  std::vector<ScalingCurve> curves;
  if (doc.is_array()) {
    for (const auto& c : doc) curves.push_back(curve_from_json(c));
  } else {
    curves.push_back(curve_from_json(doc));
  }
  nlohmann::json fits = nlohmann::json::array();
  std::ostringstream table;
  table << "algorithm  s_inf  amplitude  ratio  residual_rms  degenerate\n";
  for (const auto& c : curves) {
    const GeometricFit g = fit_geometric_decay(c);
    nlohmann::json j = to_json(g);
    j["algorithm"] = to_string(c.algorithm);
    fits.push_back(j);
    table << to_string(c.algorithm) << "  " << fmt(g.s_inf) << "  " << fmt(g.amplitude) << "  "
          << (g.ratio ? fmt(*g.ratio) : std::string("-")) << "  " << fmt(g.residual_rms) << "  "
          << (g.degenerate ? "yes" : "no") << "\n";
  }
  if (format == "table") {
    out << table.str();
  } else {
    out << dump_pretty(fits.size() == 1 ? fits.front() : fits);
  }
  return kExitOk;
}

// protocol-check

struct Check {
  std::string name;
  bool ok = false;
  std::string detail;
};

int cmd_protocol_check(const CommonFlags& f, std::ostream& out, const Logger& log) {
  RunConfig cfg = resolve_config(f, Algorithm::tof);
  std::vector<Check> checks;
  auto record = [&](std::string name, bool ok, std::string detail = {}) {
    log(ok ? LogLevel::debug : LogLevel::error, name + (ok ? " ok" : " FAILED: " + detail));
    checks.push_back({std::move(name), ok, std::move(detail)});
  };

  std::unique_ptr<Transport> client;
  std::unique_ptr<Transport> server_end;
  std::thread server_thread;
  std::string worker_name;
  if (f.workers.empty()) {
    auto [a, b] = make_loopback_pair();
    client = std::move(a);
    server_end = std::move(b);
    server_thread = std::thread([&cfg, t = server_end.get()] { SyntheticWorkerServer(cfg).serve(*t); });
    worker_name = "in-process synthetic worker";
  } else {
    client = std::make_unique<SubprocessTransport>(f.workers.front());
    worker_name = f.workers.front();
  }
  struct Joiner {
    std::thread& t;
    Transport* end;
    ~Joiner() {
      if (end) end->close();
      if (t.joinable()) t.join();
    }
  } joiner{server_thread, server_end.get()};

  auto session = std::make_shared<WorkerSession>(std::move(client));
  const WorkerCapabilities& caps = session->capabilities();
  record("handshake", true, caps.name);
  record("role:generator", caps.has_role("generator"));
  record("role:verifier", caps.has_role("verifier"));

  const SyntheticLandscape land(cfg.landscape);
  SyntheticGenerator local(land, cfg.schedule);
  const StagedPrompts prompts = decompose_prompt(cfg.prompt);
  const int S = cfg.schedule.denoise_steps_per_frame;
  const std::uint64_t s0 = root_seed(cfg.master_seed, 0);
  const std::uint64_t s1 = child_seed(s0, 0, 1);

  // Round trips through the adapters.
  std::optional<CandidateNode> root_node;
  std::optional<CandidateNode> child_node;
  try {
    WorkerGenerator gen(session, cfg.schedule);
    const FrameResult root = gen.sample_root(s0, prompts.routed(stage_of_frame(0, cfg.schedule)));
    record("generate:root", !root.state.latent.handle.empty() && root.state.steps_done == S,
           root.state.latent.handle);
    CandidateNode rn;
    rn.node_id = 0;
    rn.seed = s0;
    rn.latent = root.state.latent;
    rn.stage = stage_of_frame(0, cfg.schedule);
    root_node = rn;
    const StagePrompt p1 = prompts.routed(stage_of_frame(1, cfg.schedule));
    const FrameResult child = gen.extend(rn, 1, s1, p1, S);
    record("generate:child", child.state.steps_done == S, child.state.latent.handle);
    CandidateNode cn = rn;
    cn.node_id = 1;
    cn.parent_id = 0;
    cn.frame_index = 1;
    cn.seed = s1;
    cn.latent = child.state.latent;
    cn.stage = p1.stage;
    child_node = cn;
    if (caps.supports_partial_denoise) {
      PartialFrameState st = gen.begin_frame(rn, 1, s1, p1);
      const int first = std::max(1, S / 2);
      const FrameResult a = gen.partial_denoise(st, first);
      const FrameResult b = gen.partial_denoise(a.state, S - first);
      record("partial_denoise", a.state.steps_done == first && b.state.steps_done == S && b.cost.continuation,
             a.state.latent.handle + " -> " + b.state.latent.handle);
      WorkerVerifier wv(session, "synthetic");
      Artifact split = gen.decode(std::vector<LatentRef>{rn.latent, b.state.latent});
      Artifact whole = gen.decode(std::vector<LatentRef>{rn.latent, child.state.latent});
      const double ds = wv.score(split, p1, ScoreMode::frame);
      const double dw = wv.score(whole, p1, ScoreMode::frame);
      record("partial_denoise:split_invariance", ds == dw, fmt(ds) + " vs " + fmt(dw));
      record("gate:clarity", worker_clarity_gate(*session, a.state, 0.4).verdict == (a.state.denoise_progress() >= 0.4));
    }
  } catch (const Error& e) {
    record("generator_round_trip", false, e.what());
  }

  if (root_node && child_node) {
    // Scores against the in-process closed form.
    const FrameResult lr = local.sample_root(s0, prompts.routed(root_node->stage));
    CandidateNode lrn = *root_node;
    lrn.latent = lr.state.latent;
    const FrameResult lc = local.extend(lrn, 1, s1, prompts.routed(child_node->stage), S);
    Artifact local_art = local.decode(std::vector<LatentRef>{lr.state.latent, lc.state.latent});
    local_art.stages = {root_node->stage, child_node->stage};
    Artifact remote_art;
    remote_art.frames = {root_node->latent, child_node->latent};
    remote_art.stages = local_art.stages;
    for (const auto& id : caps.verifier_ids) {
      try {
        WorkerVerifier wv(session, id);
        const double remote = wv.score(remote_art, prompts.routed(child_node->stage), ScoreMode::clip);
        auto v = builtin_verifier(id, land);
        if (v) {
          const double mine = v->score(local_art, prompts.routed(child_node->stage), ScoreMode::clip);
          record("verify:" + id, remote == mine, fmt(remote) + " vs " + fmt(mine));
        } else {
          record("verify:" + id, std::isfinite(remote), fmt(remote));
        }
      } catch (const Error& e) {
        record("verify:" + id, false, e.what());
      }
    }
    // Pipelined requests beyond the in-flight window.
    try {
      WorkerVerifier wv(session, "synthetic");
      std::vector<double> got(12);
      parallel_for(got.size(), 8, [&](std::size_t i) {
        got[i] = wv.score(remote_art, prompts.routed(child_node->stage), ScoreMode::clip);
      });
      bool same = true;
      for (double g : got) same = same && g == got.front();
      record("pipelining", same, std::to_string(got.size()) + " concurrent verify requests");
    } catch (const Error& e) {
      record("pipelining", false, e.what());
    }
  }

  if (caps.has_role("decomposer")) {
    try {
      WorkerDecomposer d(session);
      const StagedPrompts sp = d.decompose(cfg.prompt);
      record("decompose", !sp.initial.text.empty() && !sp.final.text.empty(), sp.intermediate.text);
    } catch (const Error& e) {
      record("decompose", false, e.what());
    }
  }

  // An unknown request kind must be answered with an error, not dropped.
  try {
    session->request("bogus_request", nlohmann::json::object());
    record("error_response", false, "unknown kind accepted");
  } catch (const TransportError& e) {
    record("error_response", true, e.what());
  } catch (const ProtocolError& e) {
    record("error_response", false, e.what());
  }

  // A short worker-backed ToF run must reproduce the in-process run.
  if (caps.has_role("generator") && caps.supports_partial_denoise) {
    try {
      RunConfig small = cfg;
      small.schedule = default_schedule(2, 4);
      small.gates.enabled = true;
      WorkerGenerator gen(session, small.schedule);
      Ensemble remote;
      remote.add(std::make_shared<WorkerVerifier>(session, "synthetic"), 1.0);
      SearchOptions ro;
      ro.clarity = [session](const PartialFrameState& st, double th) { return worker_clarity_gate(*session, st, th); };
      const SearchResult a = tof_search(small, gen, remote, ro);
      SyntheticGenerator lg(land, small.schedule);
      Ensemble mine;
      mine.add(std::make_shared<SyntheticVerifier>(land), 1.0);
      const SearchResult b = tof_search(small, lg, mine);
      bool same = a.best_score() == b.best_score() && a.best_path.nodes.size() == b.best_path.nodes.size() &&
                  a.ledger.totals() == b.ledger.totals();
      for (std::size_t i = 0; same && i < a.best_path.nodes.size(); ++i) {
        same = a.best_path.nodes[i].seed == b.best_path.nodes[i].seed &&
               a.best_path.nodes[i].node_id == b.best_path.nodes[i].node_id;
      }
      record("search_equivalence", same, fmt(a.best_score()) + " vs " + fmt(b.best_score()));
    } catch (const Error& e) {
      record("search_equivalence", false, e.what());
    }
  }

  session->shutdown();
  const auto acc = session->accounting();
  const std::string violation = session->violation();
  record("accounting", acc.issued == acc.answered + acc.timed_out,
         std::to_string(acc.issued) + " issued, " + std::to_string(acc.answered) + " answered, " +
             std::to_string(acc.timed_out) + " timed out");
  record("violations", violation.empty(), violation);

  int failed = 0;
  nlohmann::json jchecks = nlohmann::json::array();
  for (const auto& c : checks) {
    failed += c.ok ? 0 : 1;
    jchecks.push_back({{"name", c.name}, {"ok", c.ok}, {"detail", c.detail}});
  }
  const nlohmann::json report = {{"worker", worker_name},
                                 {"name", caps.name},
                                 {"checks", jchecks},
                                 {"accounting",
                                  {{"issued", acc.issued},
                                   {"answered", acc.answered},
                                   {"timed_out", acc.timed_out},
                                   {"error_responses", acc.error_responses},
                                   {"late_responses", acc.late_responses}}},
                                 {"violations", violation.empty() ? 0 : 1},
                                 {"failed", failed}};
  if (!f.out_dir.empty()) write_text(std::filesystem::path(f.out_dir) / "protocol-check.json", dump_pretty(report));
  out << dump_pretty(report);
  return failed == 0 ? kExitOk : kExitWorker;
}

void add_common(CLI::App& sub, CommonFlags& f, bool with_workers = true) {
  sub.add_option("--config", f.config_path, "Run configuration (JSON)");
  sub.add_option_function<std::uint64_t>(
      "--seed",
      [&f](const std::uint64_t& s) {
        f.seed = s;
        f.seed_given = true;
      },
      "Master seed (overrides the config)");
  sub.add_option("--out", f.out_dir, "Output directory");
  if (with_workers) sub.add_option("--workers", f.workers, "Worker command (repeatable)");
  sub.add_option("--threads", f.threads, "Worker threads")->check(CLI::Range(1, 1024));
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Logger log{err};
  try {
    log.level = log_level_from_env();
  } catch (const ConfigError& e) {
    err << e.what() << "\n";
    return kExitUsage;
  }

  CLI::App app{"Tree-of-Frames and Best-of-N search over frame-sequential generators", "tof"};
  app.require_subcommand(1, 1);
  CommonFlags flags;
  std::string grid = "n=1..16";
  std::string which = "config";
  std::string format = "json";
  std::string input;

  auto* linear = app.add_subcommand("linear", "Best-of-N search");
  auto* tofc = app.add_subcommand("tof", "Tree-of-Frames search");
  auto* oracle = app.add_subcommand("oracle", "Exhaustive search over the unpruned tree (synthetic only)");
  auto* bench = app.add_subcommand("bench", "Score-vs-N scaling curve");
  auto* fit = app.add_subcommand("fit", "Geometric decay fit of a scaling curve");
  auto* check = app.add_subcommand("protocol-check", "Worker protocol conformance check");
  add_common(*linear, flags);
  add_common(*tofc, flags);
  add_common(*oracle, flags, false);
  add_common(*bench, flags);
  add_common(*check, flags);
  bench->add_option("--grid", grid, "Root counts, e.g. n=1..16 or 1,2,4,8");
  bench->add_option("--algorithm", which, "linear, tof, both, or config")
      ->check(CLI::IsMember({"linear", "tof", "both", "config"}));
  bench->add_option("--format", format, "json, table or svg")->check(CLI::IsMember({"json", "table", "svg"}));
  fit->add_option("--input", input, "Curve JSON (one curve or an array)")->required();
  fit->add_option("--format", format, "json or table")->check(CLI::IsMember({"json", "table"}));

  std::vector<std::string> argv_store;
  argv_store.reserve(args.size() + 1);
  argv_store.push_back("tof");
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }

  try {
    if (linear->parsed()) return cmd_search(flags, Algorithm::linear, out, log);
    if (tofc->parsed()) return cmd_search(flags, Algorithm::tof, out, log);
    if (oracle->parsed()) return cmd_oracle(flags, out, log);
    if (bench->parsed()) return cmd_bench(flags, grid, which, format, out, log);
    if (fit->parsed()) return cmd_fit(input, format, out);
    if (check->parsed()) return cmd_protocol_check(flags, out, log);
  } catch (const ConfigError& e) {
    log(LogLevel::error, e.what());
    return kExitConfig;
  } catch (const OracleRefused& e) {
    log(LogLevel::error, e.what());
    return kExitConfig;
  } catch (const InputError& e) {
    log(LogLevel::error, e.what());
    return kExitConfig;
  } catch (const RangeError& e) {
    log(LogLevel::error, e.what());
    return kExitConfig;
  } catch (const ProtocolError& e) {
    log(LogLevel::error, e.what());
    return kExitWorker;
  } catch (const TransportError& e) {
    log(LogLevel::error, e.what());
    return kExitWorker;
  } catch (const CapabilityError& e) {
    log(LogLevel::error, e.what());
    return kExitWorker;
  } catch (const RunError& e) {
    log(LogLevel::error, e.what());
    return kExitWorker;
  } catch (const std::exception& e) {
    log(LogLevel::error, e.what());
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace tof
