#include <atomic>
#include <condition_variable>
#include <deque>
#include <functional>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include "doctest.h"
#include "tof/cli.hpp"
#include "tof/errors.hpp"
#include "tof/search.hpp"
#include "tof/seed.hpp"
#include "tof/synth_server.hpp"
#include "tof/worker_adapters.hpp"

using namespace tof;
using namespace std::chrono_literals;

namespace {

std::string hello_line(int version = 1) {
  return encode_message({0, "hello", {{"protocol_version", version}, {"name", "scripted"}}});
}

std::string caps_line() {
  return encode_message({0, "capabilities",
                         {{"supports_partial_denoise", true},
                          {"supports_branching", true},
                          {"deterministic", true},
                          {"roles", {"generator", "verifier"}},
                          {"verifier_ids", {"v"}}}});
}

// Worker thread over a loopback endpoint driven by a reply function.
class ScriptedWorker {
 public:
  using Reply = std::function<std::vector<std::string>(const WorkerMessage&)>;

  ScriptedWorker(std::vector<std::string> greeting, Reply reply) {
    auto [a, b] = make_loopback_pair();
    client_ = std::move(a);
    end_ = std::move(b);
    thread_ = std::thread([this, greeting = std::move(greeting), reply = std::move(reply)] {
      try {
        for (const auto& g : greeting) end_->write_line(g);
        while (auto line = end_->read_line()) {
          const WorkerMessage m = parse_message(*line);
          for (const auto& out : reply(m)) end_->write_line(out);
        }
      } catch (const Error&) {
      }
    });
  }
  ~ScriptedWorker() {
    end_->close();
    if (thread_.joinable()) thread_.join();
  }

  std::unique_ptr<Transport> client() { return std::move(client_); }

 private:
  std::unique_ptr<Transport> client_;
  std::unique_ptr<Transport> end_;
  std::thread thread_;
};

// Synthetic server on a loopback pair.
struct LocalServer {
  std::unique_ptr<Transport> client;
  std::unique_ptr<Transport> end;
  std::thread thread;

  explicit LocalServer(const RunConfig& cfg, ServerOptions opts = {}) {
    auto [a, b] = make_loopback_pair();
    client = std::move(a);
    end = std::move(b);
    thread = std::thread([cfg, opts, t = end.get()] { SyntheticWorkerServer(cfg, opts).serve(*t); });
  }
  ~LocalServer() {
    end->close();
    if (thread.joinable()) thread.join();
  }
};

StagePrompt prompt_for(const RunConfig& cfg, int t) {
  return decompose_prompt(cfg.prompt).routed(stage_of_frame(t, cfg.schedule));
}

// Transport that replays a recorded transcript and checks every line the
// engine writes against it.
class ReplayTransport final : public Transport {
 public:
  explicit ReplayTransport(std::vector<std::string> lines) : lines_(std::move(lines)) {
    queue_.push_back(lines_.at(0));
    queue_.push_back(lines_.at(1));
    next_ = 2;
  }
  void write_line(const std::string& line) override {
    std::lock_guard lock(m_);
    if (next_ + 1 >= lines_.size()) {
      mismatches_.push_back("unexpected extra request: " + line);
      return;
    }
    if (line != lines_[next_]) mismatches_.push_back("expected " + lines_[next_] + "\n     got " + line);
    queue_.push_back(lines_[next_ + 1]);
    next_ += 2;
    cv_.notify_all();
  }
  std::optional<std::string> read_line() override {
    std::unique_lock lock(m_);
    cv_.wait(lock, [&] { return !queue_.empty() || closed_; });
    if (queue_.empty()) return std::nullopt;
    std::string l = queue_.front();
    queue_.pop_front();
    return l;
  }
  void close() override {
    std::lock_guard lock(m_);
    closed_ = true;
    cv_.notify_all();
  }
  std::vector<std::string> mismatches() const {
    std::lock_guard lock(m_);
    return mismatches_;
  }
  std::size_t consumed() const {
    std::lock_guard lock(m_);
    return next_;
  }

 private:
  std::vector<std::string> lines_;
  std::deque<std::string> queue_;
  std::size_t next_ = 0;
  bool closed_ = false;
  mutable std::mutex m_;
  std::condition_variable cv_;
  std::vector<std::string> mismatches_;
};

// Transport decorator recording every line in wire order.
class RecordingTransport final : public Transport {
 public:
  explicit RecordingTransport(std::unique_ptr<Transport> inner) : inner_(std::move(inner)) {}
  void write_line(const std::string& line) override {
    {
      std::lock_guard lock(m_);
      lines_.push_back(line);
    }
    inner_->write_line(line);
  }
  std::optional<std::string> read_line() override {
    auto l = inner_->read_line();
    if (l) {
      std::lock_guard lock(m_);
      lines_.push_back(*l);
    }
    return l;
  }
  void close() override { inner_->close(); }
  std::vector<std::string> lines() const {
    std::lock_guard lock(m_);
    return lines_;
  }

 private:
  std::unique_ptr<Transport> inner_;
  mutable std::mutex m_;
  std::vector<std::string> lines_;
};

// Ten request/response exchanges through every adapter; returns what the
// adapters handed back to the engine.
std::vector<std::string> drive_adapters(const std::shared_ptr<WorkerSession>& session) {
  const RunConfig cfg = default_config();
  std::vector<std::string> out;
  WorkerDecomposer dec(session);
  const StagedPrompts sp = dec.decompose(cfg.prompt);
  out.push_back(sp.intermediate.text);
  WorkerGenerator gen(session, cfg.schedule);
  const std::uint64_t s0 = root_seed(7, 0);
  const FrameResult root = gen.sample_root(s0, sp.routed(Stage::initial));
  out.push_back(root.state.latent.handle);
  CandidateNode rn;
  rn.seed = s0;
  rn.latent = root.state.latent;
  const std::uint64_t s1 = child_seed(s0, 0, 1);
  const FrameResult child = gen.extend(rn, 1, s1, sp.routed(Stage::intermediate), cfg.schedule.denoise_steps_per_frame);
  out.push_back(child.state.latent.handle);
  const PartialFrameState st = gen.begin_frame(rn, 1, child_seed(s0, 1, 1), sp.routed(Stage::intermediate));
  const FrameResult part = gen.partial_denoise(st, 4);
  out.push_back(part.state.latent.handle);
  out.push_back(worker_clarity_gate(*session, part.state, 0.4).verdict ? "pass" : "reject");
  const FrameResult rest = gen.partial_denoise(part.state, 6);
  out.push_back(rest.state.latent.handle);
  Artifact art = gen.decode(std::vector<LatentRef>{root.state.latent, child.state.latent});
  art.stages = {Stage::initial, Stage::intermediate};
  std::ostringstream scores;
  scores.precision(17);
  const std::pair<const char*, ScoreMode> checks[] = {
      {"synthetic", ScoreMode::frame}, {"alignment", ScoreMode::clip}, {"smoothness", ScoreMode::final}};
  for (const auto& [id, mode] : checks) {
    WorkerVerifier v(session, id);
    scores << v.score(art, sp.routed(Stage::intermediate), mode) << ";";
  }
  out.push_back(scores.str());
  session->shutdown();
  return out;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  std::vector<std::string> lines;
  std::string l;
  while (std::getline(in, l)) {
    if (!l.empty()) lines.push_back(l);
  }
  return lines;
}

const std::string kGolden = std::string(TOF_TEST_DATA) + "/golden_transcript.ndjson";
const std::string kGoldenOutputs = std::string(TOF_TEST_DATA) + "/golden_adapter_outputs.json";

}  // namespace

TEST_SUITE("protocol") {

TEST_CASE("envelope encoding is canonical and parsing is strict") {
  const WorkerMessage m{12, "verify_request", {{"z", 1}, {"a", {{"y", 2}, {"b", 3}}}}};
  const std::string line = encode_message(m);
  CHECK(line == R"({"kind":"verify_request","msg_id":12,"payload":{"a":{"b":3,"y":2},"z":1}})");
  const WorkerMessage back = parse_message(line);
  CHECK(back.msg_id == 12);
  CHECK(back.kind == "verify_request");
  CHECK(back.payload == m.payload);
  CHECK_THROWS_AS(parse_message("not json"), ProtocolError);
  CHECK_THROWS_AS(parse_message("[1,2]"), ProtocolError);
  CHECK_THROWS_AS(parse_message(R"({"kind":"x","payload":{}})"), ProtocolError);
  CHECK_THROWS_AS(parse_message(R"({"msg_id":"1","kind":"x","payload":{}})"), ProtocolError);
  CHECK_THROWS_AS(parse_message(R"({"msg_id":1,"kind":"x","payload":[]})"), ProtocolError);
  CHECK(response_kind("generate_request") == "generate_response");
  CHECK(response_kind("shutdown_request") == "shutdown_response");
}

TEST_CASE("handshake reads capabilities") {
  LocalServer srv(default_config());
  WorkerSession s(std::move(srv.client));
  CHECK(s.capabilities().name == "synthetic-worker");
  CHECK(s.capabilities().supports_partial_denoise);
  CHECK(s.capabilities().deterministic);
  CHECK(s.capabilities().has_role("gate"));
  CHECK(s.capabilities().verifier_ids.size() == 4);
}

TEST_CASE("protocol version mismatch rejects the session") {
  ServerOptions o;
  o.protocol_version = 2;
  LocalServer srv(default_config(), o);
  CHECK_THROWS_AS(WorkerSession(std::move(srv.client)), ProtocolError);
}

TEST_CASE("silent worker times out during the handshake") {
  ScriptedWorker w({}, [](const WorkerMessage&) { return std::vector<std::string>{}; });
  SessionOptions o;
  o.handshake_timeout = 100ms;
  CHECK_THROWS_AS(WorkerSession(w.client(), o), TransportError);
}

TEST_CASE("latent handles pass through verbatim") {
  std::vector<std::string> parents;
  std::mutex m;
  int counter = 0;
  ScriptedWorker w({hello_line(), caps_line()}, [&](const WorkerMessage& req) {
    std::lock_guard lock(m);
    if (req.kind == "shutdown_request") return std::vector<std::string>{encode_message({req.msg_id, "shutdown_response", nlohmann::json::object()})};
    parents.push_back(req.payload["parent"].is_null() ? "<null>" : req.payload["parent"].get<std::string>());
    const std::string h = "opaque ☃ handle #" + std::to_string(counter++) + " {\"x\":1}";
    return std::vector<std::string>{encode_message(
        {req.msg_id, "generate_response", {{"latent_ref", h}, {"steps_done", 10}, {"steps_total", 10}}})};
  });
  auto session = std::make_shared<WorkerSession>(w.client());
  const RunConfig cfg = default_config();
  WorkerGenerator gen(session, cfg.schedule);
  const FrameResult r = gen.sample_root(1, prompt_for(cfg, 0));
  CHECK(r.state.latent.handle == "opaque ☃ handle #0 {\"x\":1}");
  CandidateNode n;
  n.latent = r.state.latent;
  const FrameResult c = gen.extend(n, 1, 2, prompt_for(cfg, 1), 10);
  CHECK(c.state.latent.handle == "opaque ☃ handle #1 {\"x\":1}");
  CHECK(parents == std::vector<std::string>{"<null>", r.state.latent.handle});
  session->shutdown();
}

TEST_CASE("out-of-order responses are matched by msg_id and the window is honoured") {
  std::vector<WorkerMessage> held;
  std::atomic<int> max_held{0};
  ScriptedWorker w({hello_line(), caps_line()}, [&](const WorkerMessage& req) {
    std::vector<std::string> out;
    if (req.kind == "shutdown_request") {
      out.push_back(encode_message({req.msg_id, "shutdown_response", nlohmann::json::object()}));
      return out;
    }
    held.push_back(req);
    max_held = std::max<int>(max_held, int(held.size()));
    if (held.size() == 4) {
      for (auto it = held.rbegin(); it != held.rend(); ++it) {
        out.push_back(encode_message({it->msg_id, "verify_response", {{"score", it->payload["k"]}}}));
      }
      held.clear();
    }
    return out;
  });
  auto session = std::make_shared<WorkerSession>(w.client());
  std::vector<int> got(8, -1);
  parallel_for(8, 8, [&](std::size_t i) {
    got[i] = session->request("verify_request", {{"k", int(i)}})["score"].get<int>();
  });
  for (int i = 0; i < 8; ++i) CHECK(got[i] == i);
  CHECK(max_held <= 4);
  const auto acc = session->accounting();
  CHECK(acc.issued == 8);
  CHECK(acc.answered == 8);
}

TEST_CASE("unknown msg_id terminates the session") {
  ScriptedWorker w({hello_line(), caps_line()}, [](const WorkerMessage& req) {
    return std::vector<std::string>{encode_message({req.msg_id + 100, "verify_response", {{"score", 1.0}}})};
  });
  WorkerSession s(w.client());
  CHECK_THROWS_AS(s.request("verify_request", {}), ProtocolError);
  CHECK_FALSE(s.violation().empty());
  CHECK_THROWS_AS(s.request("verify_request", {}), ProtocolError);
}

TEST_CASE("mismatched response kind terminates the session") {
  ScriptedWorker w({hello_line(), caps_line()}, [](const WorkerMessage& req) {
    return std::vector<std::string>{encode_message({req.msg_id, "generate_response", nlohmann::json::object()})};
  });
  WorkerSession s(w.client());
  CHECK_THROWS_AS(s.request("verify_request", {}), ProtocolError);
  INFO(s.violation());
  CHECK(s.violation().find("expected 'verify_response'") != std::string::npos);
}

TEST_CASE("malformed line terminates the session") {
  ScriptedWorker w({hello_line(), caps_line()}, [](const WorkerMessage&) {
    return std::vector<std::string>{"{this is not json"};
  });
  WorkerSession s(w.client());
  CHECK_THROWS_AS(s.request("verify_request", {}), ProtocolError);
  CHECK_FALSE(s.violation().empty());
}

TEST_CASE("request timeouts fail open for verifiers and count late replies") {
  ServerOptions o;
  o.verify_delay = 300ms;
  LocalServer srv(default_config(), o);
  SessionOptions so;
  so.request_timeout = 50ms;
  auto session = std::make_shared<WorkerSession>(std::move(srv.client), so);
  auto v = std::make_shared<WorkerVerifier>(session, "constant");
  const VerifierScore s = score_candidate(*v, 0, {}, {}, ScoreMode::final);
  CHECK_FALSE(s.scored);
  std::this_thread::sleep_for(400ms);
  const nlohmann::json d = session->request("decompose_request", {{"prompt", "x"}, {"id", "y"}});
  CHECK(d["prompts"].size() == 3);
  const auto acc = session->accounting();
  CHECK(acc.timed_out == 1);
  CHECK(acc.late_responses == 1);
  CHECK(acc.issued == acc.answered + acc.timed_out);
  CHECK(session->violation().empty());
}

TEST_CASE("worker error replies surface as transport errors and the session continues") {
  LocalServer srv(default_config());
  auto session = std::make_shared<WorkerSession>(std::move(srv.client));
  CHECK_THROWS_AS(session->request("bogus_request", {}), TransportError);
  CHECK_THROWS_AS(session->request("generate_request", {{"t", 0}}), TransportError);
  CHECK(session->request("gate_request", {{"gate", "clarity"}, {"progress", 0.5}, {"threshold", 0.4}})["verdict"] == true);
  CHECK(session->accounting().error_responses == 2);
}

TEST_CASE("server answers malformed requests with the offending msg_id") {
  SyntheticWorkerServer srv(default_config());
  const WorkerMessage r = srv.handle({41, "verify_request", {{"verifier_id", "synthetic"}}});
  CHECK(r.kind == "error");
  CHECK(r.msg_id == 41);
  const WorkerMessage u = srv.handle({42, "teleport_request", {}});
  CHECK(u.kind == "error");
  CHECK(u.msg_id == 42);
  auto [client, end] = make_loopback_pair();
  std::thread t([&] { SyntheticWorkerServer(default_config()).serve(*end); });
  client->write_line("garbage");
  client->write_line(encode_message({5, "decompose_request", {{"prompt", "p"}, {"id", "i"}}}));
  std::vector<WorkerMessage> got;
  for (int i = 0; i < 4; ++i) got.push_back(parse_message(*client->read_line()));
  CHECK(got[0].kind == "hello");
  CHECK(got[1].kind == "capabilities");
  CHECK(got[2].kind == "error");
  CHECK(got[3].kind == "decompose_response");
  CHECK(got[3].msg_id == 5);
  client->close();
  t.join();
}

TEST_CASE("worker generator without partial denoise support") {
  ScriptedWorker w({hello_line(), encode_message({0, "capabilities", {{"supports_partial_denoise", false},
                                                                       {"roles", {"generator"}}}})},
                   [](const WorkerMessage& req) {
                     return std::vector<std::string>{encode_message({req.msg_id, response_kind(req.kind), nlohmann::json::object()})};
                   });
  auto session = std::make_shared<WorkerSession>(w.client());
  WorkerGenerator gen(session, default_config().schedule);
  CHECK_THROWS_AS(gen.begin_frame({}, 1, 1, {}), CapabilityError);
  CHECK_THROWS_AS(WorkerVerifier(session, "v"), CapabilityError);
}

TEST_CASE("worker-backed search reproduces the in-process search") {
  for (bool gates : {false, true}) {
    RunConfig cfg = default_config();
    cfg.master_seed = 21;
    cfg.gates.enabled = gates;
    cfg.verifier_weights = {{"synthetic", 1.0}, {"alignment", 0.5}};
    LocalServer srv(cfg);
    auto session = std::make_shared<WorkerSession>(std::move(srv.client));
    WorkerGenerator wg(session, cfg.schedule);
    Ensemble we;
    we.add(std::make_shared<WorkerVerifier>(session, "synthetic"), 1.0);
    we.add(std::make_shared<WorkerVerifier>(session, "alignment"), 0.5);
    WorkerDecomposer dec(session);
    SearchOptions o;
    o.threads = 4;
    o.decomposer = &dec;
    o.clarity = [session](const PartialFrameState& st, double th) { return worker_clarity_gate(*session, st, th); };
    const SearchResult remote = tof_search(cfg, wg, we, o);
    session->shutdown();
    Backends local = make_backends(cfg);
    const SearchResult mine = tof_search(cfg, *local.generator, local.ensemble);
    CHECK(remote.best_score() == mine.best_score());
    CHECK(remote.events == mine.events);
    CHECK(remote.ledger.totals() == mine.ledger.totals());
  }
}

TEST_CASE("subprocess worker") {
  RunConfig cfg = default_config();
  cfg.worker_endpoints = {TOF_WORKER_EXE};
  cfg.master_seed = 3;
  Backends b = make_backends(cfg);
  REQUIRE(b.sessions.size() == 1);
  CHECK(b.sessions[0]->capabilities().name == "synthetic-worker");
  const SearchResult remote = run_search(cfg, *b.generator, b.ensemble, b.options(2));
  b.shutdown();
  RunConfig plain = cfg;
  plain.worker_endpoints.clear();
  Backends l = make_backends(plain);
  const SearchResult mine = run_search(plain, *l.generator, l.ensemble);
  CHECK(remote.best_score() == mine.best_score());
  CHECK(remote.events == mine.events);

  CHECK_THROWS_AS(WorkerSession(std::make_unique<SubprocessTransport>(std::string(TOF_WORKER_EXE) +
                                                                      " --protocol-version 2")),
                  ProtocolError);
  SessionOptions quick;
  quick.handshake_timeout = 500ms;
  CHECK_THROWS_AS(WorkerSession(std::make_unique<SubprocessTransport>("true"), quick), TransportError);
}

TEST_CASE("golden transcript replay") {
  if (std::getenv("TOF_REGEN_GOLDEN") != nullptr) {
    LocalServer srv(default_config());
    auto rec = std::make_unique<RecordingTransport>(std::move(srv.client));
    RecordingTransport* raw = rec.get();
    auto session = std::make_shared<WorkerSession>(std::move(rec));
    const std::vector<std::string> outputs = drive_adapters(session);
    std::ofstream t(kGolden);
    for (const auto& l : raw->lines()) t << l << "\n";
    std::ofstream o(kGoldenOutputs);
    o << nlohmann::json(outputs).dump(2) << "\n";
    MESSAGE("golden transcript regenerated");
  }
  const std::vector<std::string> lines = read_lines(kGolden);
  REQUIRE(lines.size() == 22);  // hello, capabilities, 10 request/response pairs

  // engine side: adapters emit the recorded requests byte for byte
  auto replay = std::make_unique<ReplayTransport>(lines);
  ReplayTransport* rp = replay.get();
  auto session = std::make_shared<WorkerSession>(std::move(replay));
  const std::vector<std::string> outputs = drive_adapters(session);
  for (const auto& m : rp->mismatches()) FAIL_CHECK(m);
  CHECK(rp->consumed() == lines.size());
  std::ifstream in(kGoldenOutputs);
  const nlohmann::json expected = nlohmann::json::parse(in);
  CHECK(nlohmann::json(outputs) == expected);

  // worker side: the synthetic server answers each recorded request identically
  SyntheticWorkerServer srv(default_config());
  for (std::size_t i = 2; i + 1 < lines.size(); i += 2) {
    CHECK(encode_message(srv.handle(parse_message(lines[i]))) == lines[i + 1]);
  }
}

}
