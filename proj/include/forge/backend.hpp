#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "forge/lowering.hpp"
#include "forge/tensor.hpp"

namespace forge {

struct ExecutionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Liveness of one register over instruction indices. Preloaded registers
// start at -1; the program output is extended one slot past the end so it
// is never reclaimed.
struct LiveInterval {
  int32_t reg = 0;
  int32_t start = 0;
  int32_t end = 0;

  bool operator==(const LiveInterval&) const = default;
};

// instruction index -> registers whose last read (or unused definition)
// lands there. Index -1 collects preloaded registers that are never read.
using DeadAfterMap = std::map<int32_t, std::vector<int32_t>>;

std::pair<std::vector<LiveInterval>, DeadAfterMap> compute_liveness(
    const IRProgram& program);

struct BufferAssignment {
  std::map<int32_t, int32_t> reg_to_buffer;
  int32_t buffer_count = 0;
  std::set<int32_t> pinned;  // registers whose buffers are never pooled
};

// Linear scan over intervals sorted by start. An interval expires only when
// end < start of the incoming one, so touching intervals never share.
// Pinned registers always take fresh buffers and never return them to the
// pool; everyone else reuses the pool front first.
BufferAssignment allocate_buffers(const std::vector<LiveInterval>& intervals,
                                  const std::set<int32_t>& pinned);

// 1 - used/total. Throws std::invalid_argument unless total >= used >= 0
// and total > 0.
double buffer_reduction(int64_t total_regs, int64_t used_buffers);

int64_t count_transitions(const std::vector<IRInstruction>& instructions);

struct ScheduleResult {
  IRProgram program;  // instructions reordered, everything else intact
  int64_t delta_before = 0;
  int64_t delta_after = 0;
};

// Device-affinity list scheduling: among ready instructions prefer the
// device of the previously emitted one, breaking ties by original index.
// Falls back to the incoming order if clustering would add transitions, so
// delta_after <= delta_before always holds.
ScheduleResult schedule(const IRProgram& program);

struct CompiledProgram {
  IRProgram program;  // scheduled order
  BufferAssignment buffers;
  std::vector<LiveInterval> intervals;  // over the scheduled order
  DeadAfterMap dead_after;
  int64_t delta_before = 0;
  int64_t delta_after = 0;

  int32_t reg_count() const { return program.reg_count; }
  int32_t buffer_count() const { return buffers.buffer_count; }
};

// schedule -> liveness -> allocation with {input, output} and all constant
// registers pinned. Deterministic.
CompiledProgram compile(const IRProgram& program);

struct ExecStats {
  int64_t peak_buffers = 0;      // max simultaneously occupied buffers
  int64_t final_occupancy = 0;   // buffers still held after the last instruction
};

// Flat instruction loop over a buffer-indexed register file. Buffers are
// released eagerly via the dead-after map. `input` is required exactly when
// the program declares an input register.
TensorValue execute(const CompiledProgram& compiled,
                    const std::optional<TensorValue>& input,
                    ExecStats* stats = nullptr);

// Stable JSON dump of the scheduled order, device lanes, and the transition
// and buffer counters.
std::string emit_schedule_json(const CompiledProgram& compiled);

}  // namespace forge
