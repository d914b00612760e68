#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <semaphore>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include "json.hpp"

namespace tof {

inline constexpr int kProtocolVersion = 1;

/// One protocol line: {"kind": ..., "msg_id": ..., "payload": {...}}.
/// Worker-initiated messages (hello, capabilities) carry msg_id 0.
struct WorkerMessage {
  std::int64_t msg_id = 0;
  std::string kind;
  nlohmann::json payload = nlohmann::json::object();
};

/// Serializes to a single line without the trailing newline. Keys are sorted,
/// so encoding is canonical.
std::string encode_message(const WorkerMessage& message);

/// Throws ProtocolError on anything but a JSON object with an integer msg_id,
/// a string kind and an object payload.
WorkerMessage parse_message(std::string_view line);

/// "generate_request" -> "generate_response".
std::string response_kind(const std::string& request_kind);

/// Line-oriented duplex channel to a worker.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual void write_line(const std::string& line) = 0;
  /// Blocks for the next line; nullopt once the peer has closed.
  virtual std::optional<std::string> read_line() = 0;
  /// Closes the outgoing direction and unblocks pending reads.
  virtual void close() = 0;
};

/// Two connected in-memory endpoints.
std::pair<std::unique_ptr<Transport>, std::unique_ptr<Transport>> make_loopback_pair();

/// Runs `/bin/sh -c command` with its stdin/stdout as the channel.
class SubprocessTransport final : public Transport {
 public:
  explicit SubprocessTransport(const std::string& command);
  ~SubprocessTransport() override;

  SubprocessTransport(const SubprocessTransport&) = delete;
  SubprocessTransport& operator=(const SubprocessTransport&) = delete;

  void write_line(const std::string& line) override;
  std::optional<std::string> read_line() override;
  void close() override;

 private:
  int pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::string buffer_;
  std::mutex write_mutex_;
};

/// Transport over the current process's stdin/stdout (worker side).
class StdioTransport final : public Transport {
 public:
  void write_line(const std::string& line) override;
  std::optional<std::string> read_line() override;
  void close() override {}
};

struct SessionOptions {
  std::chrono::milliseconds handshake_timeout{10'000};
  std::chrono::milliseconds request_timeout{120'000};
  int in_flight_window = 4;
};

struct WorkerCapabilities {
  std::string name;
  bool supports_partial_denoise = false;
  bool supports_branching = true;
  bool deterministic = true;
  std::vector<std::string> roles;  // "generator", "verifier", "decomposer", "gate"
  std::vector<std::string> verifier_ids;

  bool has_role(const std::string& role) const;
};

/// Client side of one worker connection.
///
/// The constructor waits for hello + capabilities and rejects any protocol
/// version other than kProtocolVersion. Requests may be issued from several
/// threads; at most `in_flight_window` are outstanding and responses are
/// matched by msg_id in any order. A malformed line or a response to an
/// unknown msg_id terminates the session with a ProtocolError.
class WorkerSession {
 public:
  explicit WorkerSession(std::unique_ptr<Transport> transport, SessionOptions options = {});
  ~WorkerSession();

  WorkerSession(const WorkerSession&) = delete;
  WorkerSession& operator=(const WorkerSession&) = delete;

  const WorkerCapabilities& capabilities() const { return capabilities_; }

  /// Sends `kind` and returns the response payload. Throws TransportError on
  /// timeout, worker error responses, or a closed worker; ProtocolError once
  /// the session has been terminated by a protocol violation.
  nlohmann::json request(const std::string& kind, nlohmann::json payload);

  /// Sends shutdown, waits for its response and closes the transport.
  void shutdown();

  struct Accounting {
    std::int64_t issued = 0;
    std::int64_t answered = 0;
    std::int64_t timed_out = 0;
    std::int64_t error_responses = 0;
    std::int64_t late_responses = 0;
  };
  Accounting accounting() const;

  /// Non-empty once the session was terminated by a protocol violation.
  std::string violation() const;

 private:
  void reader_loop();
  void fail_all(const std::string& message, bool protocol);

  std::unique_ptr<Transport> transport_;
  SessionOptions options_;
  WorkerCapabilities capabilities_;

  mutable std::mutex mutex_;
  std::condition_variable handshake_cv_;
  std::optional<nlohmann::json> hello_;
  std::optional<nlohmann::json> caps_;
  std::map<std::int64_t, std::promise<WorkerMessage>> pending_;
  std::map<std::int64_t, std::string> pending_kind_;
  std::set<std::int64_t> timed_out_;
  std::int64_t next_id_ = 1;
  bool closed_ = false;
  bool shut_down_ = false;
  std::string violation_;
  std::string close_reason_;
  Accounting accounting_;

  std::mutex write_mutex_;
  std::counting_semaphore<1024> window_;
  std::thread reader_;
};

}  // namespace tof
