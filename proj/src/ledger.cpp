#include "tof/ledger.hpp"

#include <chrono>

namespace tof {

namespace {
std::int64_t now_ns() {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}
}  // namespace

CostEvent generate_event(int steps, int temporal_length, bool continuation) {
  return {CostKind::generate, steps, temporal_length, continuation, now_ns()};
}

CostEvent verify_event() { return {CostKind::verify, 0, 0, false, now_ns()}; }

nlohmann::json to_json(const LedgerTotals& t) {
  return {{"extend_calls", t.extend_calls},
          {"continuation_calls", t.continuation_calls},
          {"verify_calls", t.verify_calls},
          {"generate_steps", t.generate_steps},
          {"nfe", t.nfe}};
}

NfeLedger::NfeLedger(const NfeLedger& other) {
  std::lock_guard lock(other.mutex_);
  events_ = other.events_;
  totals_ = other.totals_;
}

NfeLedger& NfeLedger::operator=(const NfeLedger& other) {
  if (this == &other) return *this;
  std::scoped_lock lock(mutex_, other.mutex_);
  events_ = other.events_;
  totals_ = other.totals_;
  return *this;
}

void NfeLedger::append(const CostEvent& e) {
  std::lock_guard lock(mutex_);
  events_.push_back(e);
  if (e.kind == CostKind::verify) {
    ++totals_.verify_calls;
    return;
  }
  if (e.continuation) {
    ++totals_.continuation_calls;
  } else {
    ++totals_.extend_calls;
  }
  totals_.generate_steps += e.steps;
  totals_.nfe += e.nfe();
}

void NfeLedger::append(const std::vector<CostEvent>& events) {
  for (const auto& e : events) append(e);
}

LedgerTotals NfeLedger::totals() const {
  std::lock_guard lock(mutex_);
  return totals_;
}

std::vector<CostEvent> NfeLedger::events() const {
  std::lock_guard lock(mutex_);
  return events_;
}

std::size_t NfeLedger::size() const {
  std::lock_guard lock(mutex_);
  return events_.size();
}

}  // namespace tof
