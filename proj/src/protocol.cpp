#include "tof/protocol.hpp"

#include <fcntl.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <deque>
#include <iostream>

#include "tof/errors.hpp"

namespace tof {

std::string encode_message(const WorkerMessage& m) {
  nlohmann::json doc = {{"msg_id", m.msg_id}, {"kind", m.kind}, {"payload", m.payload}};
  return doc.dump();
}

WorkerMessage parse_message(std::string_view line) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ProtocolError(std::string("malformed message line: ") + e.what());
  }
  if (!doc.is_object()) throw ProtocolError("message is not a JSON object");
  if (!doc.contains("msg_id") || !doc["msg_id"].is_number_integer()) throw ProtocolError("message lacks an integer msg_id");
  if (!doc.contains("kind") || !doc["kind"].is_string()) throw ProtocolError("message lacks a string kind");
  if (doc.contains("payload") && !doc["payload"].is_object()) throw ProtocolError("message payload is not an object");
  for (const auto& item : doc.items()) {
    if (item.key() != "msg_id" && item.key() != "kind" && item.key() != "payload") {
      throw ProtocolError("unknown envelope field '" + item.key() + "'");
    }
  }
  WorkerMessage m;
  m.msg_id = doc["msg_id"].get<std::int64_t>();
  m.kind = doc["kind"].get<std::string>();
  if (doc.contains("payload")) m.payload = doc["payload"];
  return m;
}

std::string response_kind(const std::string& request_kind) {
  constexpr std::string_view suffix = "_request";
  if (request_kind.size() > suffix.size() &&
      request_kind.compare(request_kind.size() - suffix.size(), suffix.size(), suffix) == 0) {
    return request_kind.substr(0, request_kind.size() - suffix.size()) + "_response";
  }
  return request_kind + "_response";
}

bool WorkerCapabilities::has_role(const std::string& role) const {
  return std::find(roles.begin(), roles.end(), role) != roles.end();
}

// Loopback

namespace {

struct LoopbackChannel {
  std::mutex mutex;
  std::condition_variable cv;
  std::deque<std::string> lines[2];  // lines[i] is read by endpoint i
  bool closed[2] = {false, false};   // endpoint i stopped writing
};

class LoopbackEnd final : public Transport {
 public:
  LoopbackEnd(std::shared_ptr<LoopbackChannel> ch, int side) : ch_(std::move(ch)), side_(side) {}
  ~LoopbackEnd() override { close(); }

  void write_line(const std::string& line) override {
    std::lock_guard lock(ch_->mutex);
    if (ch_->closed[side_] || ch_->closed[1 - side_]) throw TransportError("loopback peer closed");
    ch_->lines[1 - side_].push_back(line);
    ch_->cv.notify_all();
  }

  std::optional<std::string> read_line() override {
    std::unique_lock lock(ch_->mutex);
    ch_->cv.wait(lock, [&] { return !ch_->lines[side_].empty() || ch_->closed[1 - side_] || ch_->closed[side_]; });
    if (ch_->lines[side_].empty()) return std::nullopt;
    std::string line = std::move(ch_->lines[side_].front());
    ch_->lines[side_].pop_front();
    return line;
  }

  void close() override {
    std::lock_guard lock(ch_->mutex);
    ch_->closed[side_] = true;
    ch_->cv.notify_all();
  }

 private:
  std::shared_ptr<LoopbackChannel> ch_;
  int side_;
};

}  // namespace

std::pair<std::unique_ptr<Transport>, std::unique_ptr<Transport>> make_loopback_pair() {
  auto ch = std::make_shared<LoopbackChannel>();
  return {std::make_unique<LoopbackEnd>(ch, 0), std::make_unique<LoopbackEnd>(ch, 1)};
}

// Subprocess

SubprocessTransport::SubprocessTransport(const std::string& command) {
  ::signal(SIGPIPE, SIG_IGN);
  int in_pipe[2], out_pipe[2];
  if (::pipe(in_pipe) != 0) throw TransportError(std::string("pipe: ") + std::strerror(errno));
  if (::pipe(out_pipe) != 0) {
    ::close(in_pipe[0]);
    ::close(in_pipe[1]);
    throw TransportError(std::string("pipe: ") + std::strerror(errno));
  }
  pid_ = ::fork();
  if (pid_ < 0) throw TransportError(std::string("fork: ") + std::strerror(errno));
  if (pid_ == 0) {
    ::dup2(in_pipe[0], STDIN_FILENO);
    ::dup2(out_pipe[1], STDOUT_FILENO);
    ::close(in_pipe[0]);
    ::close(in_pipe[1]);
    ::close(out_pipe[0]);
    ::close(out_pipe[1]);
    const std::string exec_cmd = "exec " + command;
    ::execl("/bin/sh", "sh", "-c", exec_cmd.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::close(in_pipe[0]);
  ::close(out_pipe[1]);
  to_child_ = in_pipe[1];
  from_child_ = out_pipe[0];
  ::fcntl(to_child_, F_SETFD, FD_CLOEXEC);
  ::fcntl(from_child_, F_SETFD, FD_CLOEXEC);
}

SubprocessTransport::~SubprocessTransport() {
  close();
  if (from_child_ >= 0) ::close(from_child_);
}

void SubprocessTransport::write_line(const std::string& line) {
  std::lock_guard lock(write_mutex_);
  if (to_child_ < 0) throw TransportError("worker stdin already closed");
  std::string data = line + "\n";
  std::size_t off = 0;
  while (off < data.size()) {
    const ssize_t n = ::write(to_child_, data.data() + off, data.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw TransportError(std::string("write to worker: ") + std::strerror(errno));
    }
    off += static_cast<std::size_t>(n);
  }
}

std::optional<std::string> SubprocessTransport::read_line() {
  while (true) {
    const auto nl = buffer_.find('\n');
    if (nl != std::string::npos) {
      std::string line = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      return line;
    }
    char chunk[4096];
    const ssize_t n = ::read(from_child_, chunk, sizeof chunk);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) {
      if (buffer_.empty()) return std::nullopt;
      std::string rest = std::move(buffer_);
      buffer_.clear();
      return rest;
    }
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
}

void SubprocessTransport::close() {
  {
    std::lock_guard lock(write_mutex_);
    if (to_child_ >= 0) {
      ::close(to_child_);
      to_child_ = -1;
    }
  }
  if (pid_ > 0) {
    int status = 0;
    for (int i = 0; i < 200; ++i) {
      if (::waitpid(pid_, &status, WNOHANG) == pid_) {
        pid_ = -1;
        return;
      }
      ::usleep(10'000);
    }
    ::kill(pid_, SIGKILL);
    ::waitpid(pid_, &status, 0);
    pid_ = -1;
  }
}

// Stdio

void StdioTransport::write_line(const std::string& line) {
  std::cout << line << '\n' << std::flush;
  if (!std::cout) throw TransportError("stdout closed");
}

std::optional<std::string> StdioTransport::read_line() {
  std::string line;
  if (!std::getline(std::cin, line)) return std::nullopt;
  return line;
}

// WorkerSession

WorkerSession::WorkerSession(std::unique_ptr<Transport> transport, SessionOptions options)
    : transport_(std::move(transport)), options_(options), window_(std::max(1, options.in_flight_window)) {
  reader_ = std::thread([this] { reader_loop(); });
  std::unique_lock lock(mutex_);
  const bool ready = handshake_cv_.wait_for(lock, options_.handshake_timeout, [&] {
    return (hello_ && caps_) || closed_ || (hello_ && hello_->value("protocol_version", -1) != kProtocolVersion);
  });
  std::string failure;
  bool protocol = true;
  if (!violation_.empty()) {
    failure = violation_;
  } else if (hello_ && hello_->value("protocol_version", -1) != kProtocolVersion) {
    failure = "worker speaks protocol version " + hello_->value("protocol_version", nlohmann::json(nullptr)).dump() +
              ", expected " + std::to_string(kProtocolVersion);
  } else if (!ready) {
    failure = "worker handshake timed out";
    protocol = false;
  } else if (closed_) {
    failure = "worker closed during handshake";
    protocol = false;
  }
  if (failure.empty()) {
    try {
      const auto& c = *caps_;
      capabilities_.name = hello_->value("name", std::string("worker"));
      capabilities_.supports_partial_denoise = c.value("supports_partial_denoise", false);
      capabilities_.supports_branching = c.value("supports_branching", true);
      capabilities_.deterministic = c.value("deterministic", true);
      capabilities_.roles = c.value("roles", std::vector<std::string>{});
      capabilities_.verifier_ids = c.value("verifier_ids", std::vector<std::string>{});
    } catch (const nlohmann::json::exception& e) {
      failure = std::string("malformed capabilities: ") + e.what();
    }
  }
  if (!failure.empty()) {
    lock.unlock();
    transport_->close();
    if (reader_.joinable()) reader_.join();
    if (protocol) throw ProtocolError("session rejected: " + failure);
    throw TransportError("session rejected: " + failure);
  }
}

WorkerSession::~WorkerSession() {
  try {
    shutdown();
  } catch (...) {
  }
  transport_->close();
  if (reader_.joinable()) reader_.join();
}

void WorkerSession::fail_all(const std::string& message, bool protocol) {
  // caller holds mutex_
  for (auto& [id, promise] : pending_) {
    try {
      if (protocol) {
        throw ProtocolError(message);
      }
      throw TransportError(message);
    } catch (...) {
      promise.set_exception(std::current_exception());
    }
  }
  pending_.clear();
  pending_kind_.clear();
}

void WorkerSession::reader_loop() {
  while (true) {
    std::optional<std::string> line = transport_->read_line();
    std::lock_guard lock(mutex_);
    if (!line) {
      closed_ = true;
      if (close_reason_.empty()) close_reason_ = "worker closed the connection";
      fail_all(close_reason_, false);
      handshake_cv_.notify_all();
      return;
    }
    WorkerMessage m;
    try {
      m = parse_message(*line);
    } catch (const ProtocolError& e) {
      violation_ = e.what();
      closed_ = true;
      fail_all(violation_, true);
      handshake_cv_.notify_all();
      transport_->close();
      return;
    }
    if (m.kind == "hello" && !hello_) {
      hello_ = m.payload;
      handshake_cv_.notify_all();
      continue;
    }
    if (m.kind == "capabilities" && !caps_) {
      caps_ = m.payload;
      handshake_cv_.notify_all();
      continue;
    }
    auto it = pending_.find(m.msg_id);
    if (it == pending_.end()) {
      if (timed_out_.erase(m.msg_id) > 0) {
        ++accounting_.late_responses;
        continue;
      }
      violation_ = "response to unknown msg_id " + std::to_string(m.msg_id) + " (kind " + m.kind + ")";
      closed_ = true;
      fail_all(violation_, true);
      handshake_cv_.notify_all();
      transport_->close();
      return;
    }
    const std::string expected = response_kind(pending_kind_[m.msg_id]);
    if (m.kind != expected && m.kind != "error") {
      violation_ = "msg_id " + std::to_string(m.msg_id) + " answered with kind '" + m.kind + "', expected '" +
                   expected + "'";
      closed_ = true;
      fail_all(violation_, true);
      handshake_cv_.notify_all();
      transport_->close();
      return;
    }
    ++accounting_.answered;
    const std::int64_t id = m.msg_id;
    it->second.set_value(std::move(m));
    pending_.erase(it);
    pending_kind_.erase(id);
  }
}

nlohmann::json WorkerSession::request(const std::string& kind, nlohmann::json payload) {
  window_.acquire();
  struct Release {
    std::counting_semaphore<1024>& s;
    ~Release() { s.release(); }
  } release{window_};

  std::future<WorkerMessage> future;
  WorkerMessage msg;
  {
    std::lock_guard lock(mutex_);
    if (!violation_.empty()) throw ProtocolError("session terminated: " + violation_);
    if (closed_) throw TransportError("worker session closed: " + close_reason_);
    msg.msg_id = next_id_++;
    msg.kind = kind;
    msg.payload = payload.is_null() ? nlohmann::json::object() : std::move(payload);
    future = pending_[msg.msg_id].get_future();
    pending_kind_[msg.msg_id] = kind;
    ++accounting_.issued;
  }
  try {
    std::lock_guard wlock(write_mutex_);
    transport_->write_line(encode_message(msg));
  } catch (const TransportError&) {
    std::lock_guard lock(mutex_);
    pending_.erase(msg.msg_id);
    pending_kind_.erase(msg.msg_id);
    throw;
  }
  if (future.wait_for(options_.request_timeout) != std::future_status::ready) {
    std::lock_guard lock(mutex_);
    if (pending_.erase(msg.msg_id) > 0) {
      pending_kind_.erase(msg.msg_id);
      timed_out_.insert(msg.msg_id);
      ++accounting_.timed_out;
      throw TransportError(kind + " (msg_id " + std::to_string(msg.msg_id) + ") timed out");
    }
  }
  WorkerMessage reply = future.get();
  if (reply.kind == "error") {
    std::lock_guard lock(mutex_);
    ++accounting_.error_responses;
    throw TransportError("worker error on " + kind + ": " + reply.payload.value("message", std::string("(none)")));
  }
  return reply.payload;
}

void WorkerSession::shutdown() {
  {
    std::lock_guard lock(mutex_);
    if (shut_down_ || closed_) {
      shut_down_ = true;
      return;
    }
    shut_down_ = true;
  }
  try {
    request("shutdown_request", nlohmann::json::object());
  } catch (const Error&) {
  }
  {
    std::lock_guard lock(mutex_);
    if (close_reason_.empty()) close_reason_ = "session shut down";
  }
  transport_->close();
}

WorkerSession::Accounting WorkerSession::accounting() const {
  std::lock_guard lock(mutex_);
  return accounting_;
}

std::string WorkerSession::violation() const {
  std::lock_guard lock(mutex_);
  return violation_;
}

}  // namespace tof
