#pragma once

#include <cstdint>
#include <mutex>
#include <vector>

#include "json.hpp"

namespace tof {

enum class CostKind { generate, verify };

/// One generation or verification cost event.
///
/// `continuation` marks a generate event that resumes a frame whose first
/// denoising segment was already recorded (image-level gating). Such events
/// add NFE but do not count as a separate extend call.
struct CostEvent {
  CostKind kind = CostKind::generate;
  int steps = 0;
  int temporal_length = 0;
  bool continuation = false;
  // Monotonic clock reading in nanoseconds. Informational; never enters NFE.
  std::int64_t wall_ns = 0;

  std::int64_t nfe() const { return kind == CostKind::generate ? std::int64_t{steps} * temporal_length : 0; }
};

CostEvent generate_event(int steps, int temporal_length, bool continuation = false);
CostEvent verify_event();

struct LedgerTotals {
  std::int64_t extend_calls = 0;
  std::int64_t continuation_calls = 0;
  std::int64_t verify_calls = 0;
  std::int64_t generate_steps = 0;
  std::int64_t nfe = 0;

  bool operator==(const LedgerTotals&) const = default;
};

nlohmann::json to_json(const LedgerTotals& totals);

/// Append-only record of cost events for one run. Safe to append from several
/// threads; totals are maintained incrementally.
class NfeLedger {
 public:
  NfeLedger() = default;
  NfeLedger(const NfeLedger& other);
  NfeLedger& operator=(const NfeLedger& other);

  void append(const CostEvent& event);
  void append(const std::vector<CostEvent>& events);

  LedgerTotals totals() const;
  std::vector<CostEvent> events() const;
  std::size_t size() const;

 private:
  mutable std::mutex mutex_;
  std::vector<CostEvent> events_;
  LedgerTotals totals_;
};

}  // namespace tof
