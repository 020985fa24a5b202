#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "forge/graph.hpp"
#include "forge/tensor.hpp"

namespace forge {

struct LoweringError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Device { Npu, Cpu };

std::string to_string(Device d);

struct RegRef {
  int32_t reg = -1;
  bool operator==(const RegRef&) const = default;
};

using FrozenArg = std::variant<RegRef, Literal, ShapeLiteral>;

struct IRInstruction {
  int32_t op_id = 0;        // position in lowering order
  std::string opcode;       // "npu.module" or "cpu.fn.<kernel>"
  int32_t output_reg = -1;  // -1 when the op produces nothing
  std::vector<int32_t> input_regs;  // RegRefs of frozen_args, deduped in order
  Device device = Device::Cpu;
  std::string kernel;
  std::vector<FrozenArg> frozen_args;
  AttrMap frozen_attrs;

  bool operator==(const IRInstruction&) const = default;
};

// Header annotation recording the device split decided at lowering time.
struct DevicePlacement {
  int64_t npu_instructions = 0;
  int64_t cpu_instructions = 0;
  std::vector<std::string> npu_eligible;  // sorted kernel names

  bool operator==(const DevicePlacement&) const = default;
};

// Register-based program. Registers are dense and single-assignment:
// constants first in declaration order, then the input, then one register
// per instruction output.
struct IRProgram {
  std::vector<IRInstruction> instructions;
  std::map<int32_t, TensorValue> constants;  // preloaded registers
  int32_t input_reg = -1;   // -1 when the graph has no placeholder input
  int32_t output_reg = -1;
  int32_t reg_count = 0;
  std::optional<std::vector<int64_t>> input_shape;  // declared placeholder shape
  DevicePlacement placement;

  bool operator==(const IRProgram&) const = default;
};

struct LoweringOptions {
  std::set<std::string> npu_eligible = {};  // empty means the default set
};

// Kernel -> device under the configured NPU-eligible set. Unknown kernels
// raise LoweringError.
Device route_kernel(const std::string& kernel, const LoweringOptions& options = {});

// Graph -> IRProgram. One instruction per call_op in topological order;
// literal and shape arguments are frozen in place. The graph must validate,
// carry no unresolved tied aliases, and have at most one placeholder input.
IRProgram lower(const Graph& g, const LoweringOptions& options = {});

// Stable JSON dump ({idx, opcode, device, out, ins, kernel} per
// instruction plus the header). Byte-identical for identical programs.
std::string emit_ir_json(const IRProgram& program);

}  // namespace forge
