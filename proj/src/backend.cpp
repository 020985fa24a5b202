#include "forge/backend.hpp"

#include <algorithm>
#include <deque>
#include <unordered_map>

#include <json.hpp>

#include "forge/interpreter.hpp"

namespace forge {

std::pair<std::vector<LiveInterval>, DeadAfterMap> compute_liveness(
    const IRProgram& program) {
  const int32_t n = static_cast<int32_t>(program.instructions.size());

  std::unordered_map<int32_t, int32_t> start;
  for (const auto& [reg, _] : program.constants) start[reg] = -1;
  if (program.input_reg >= 0) start[program.input_reg] = -1;
  for (int32_t i = 0; i < n; ++i) {
    int32_t out = program.instructions[i].output_reg;
    if (out < 0) continue;
    if (start.count(out))
      throw ExecutionError("register " + std::to_string(out) +
                           " is assigned more than once");
    start[out] = i;
  }

  std::unordered_map<int32_t, int32_t> last_read;
  for (int32_t i = 0; i < n; ++i)
    for (int32_t reg : program.instructions[i].input_regs) {
      if (!start.count(reg))
        throw ExecutionError("register " + std::to_string(reg) +
                             " is read but never defined");
      last_read[reg] = i;  // indices ascend, so the last write wins
    }

  std::vector<LiveInterval> intervals;
  intervals.reserve(start.size());
  DeadAfterMap dead_after;
  for (const auto& [reg, s] : start) {
    LiveInterval iv;
    iv.reg = reg;
    iv.start = s;
    auto it = last_read.find(reg);
    iv.end = it != last_read.end() ? it->second : s;
    if (reg == program.output_reg) {
      iv.end = n;  // held for the caller, never reclaimed
    } else {
      dead_after[iv.end].push_back(reg);
    }
    intervals.push_back(iv);
  }
  std::sort(intervals.begin(), intervals.end(),
            [](const LiveInterval& a, const LiveInterval& b) {
              return a.reg < b.reg;
            });
  for (auto& [_, regs] : dead_after) std::sort(regs.begin(), regs.end());
  return {std::move(intervals), std::move(dead_after)};
}

BufferAssignment allocate_buffers(const std::vector<LiveInterval>& intervals,
                                  const std::set<int32_t>& pinned) {
  std::vector<LiveInterval> order = intervals;
  std::sort(order.begin(), order.end(),
            [](const LiveInterval& a, const LiveInterval& b) {
              return a.start != b.start ? a.start < b.start : a.reg < b.reg;
            });

  BufferAssignment assignment;
  assignment.pinned = pinned;
  std::vector<std::pair<int32_t, int32_t>> active;  // (end, buffer)
  std::deque<int32_t> free_bufs;
  int32_t next_buf = 0;

  for (const auto& iv : order) {
    // Strict inequality: an interval ending where another starts is still
    // live at that instruction, so they never share.
    size_t kept = 0;
    for (size_t i = 0; i < active.size(); ++i) {
      if (active[i].first < iv.start)
        free_bufs.push_back(active[i].second);
      else
        active[kept++] = active[i];
    }
    active.resize(kept);

    int32_t buf;
    if (pinned.count(iv.reg)) {
      buf = next_buf++;  // fresh and never pooled
    } else if (free_bufs.empty()) {
      buf = next_buf++;
      active.emplace_back(iv.end, buf);
    } else {
      buf = free_bufs.front();
      free_bufs.pop_front();
      active.emplace_back(iv.end, buf);
    }
    assignment.reg_to_buffer[iv.reg] = buf;
  }
  assignment.buffer_count = next_buf;
  return assignment;
}

double buffer_reduction(int64_t total_regs, int64_t used_buffers) {
  if (total_regs <= 0)
    throw std::invalid_argument("buffer_reduction: total_regs must be > 0");
  if (used_buffers < 0 || used_buffers > total_regs)
    throw std::invalid_argument(
        "buffer_reduction: used_buffers must be in [0, total_regs]");
  return 1.0 - static_cast<double>(used_buffers) / static_cast<double>(total_regs);
}

int64_t count_transitions(const std::vector<IRInstruction>& instructions) {
  int64_t transitions = 0;
  for (size_t i = 1; i < instructions.size(); ++i)
    if (instructions[i].device != instructions[i - 1].device) ++transitions;
  return transitions;
}

ScheduleResult schedule(const IRProgram& program) {
  const int32_t n = static_cast<int32_t>(program.instructions.size());

  std::unordered_map<int32_t, int32_t> producer;  // reg -> instruction index
  for (int32_t i = 0; i < n; ++i)
    if (program.instructions[i].output_reg >= 0)
      producer[program.instructions[i].output_reg] = i;

  std::vector<std::vector<int32_t>> dependents(n);
  std::vector<int32_t> indegree(n, 0);
  for (int32_t i = 0; i < n; ++i) {
    std::set<int32_t> deps;
    for (int32_t reg : program.instructions[i].input_regs) {
      auto it = producer.find(reg);
      if (it != producer.end() && it->second != i) deps.insert(it->second);
    }
    for (int32_t d : deps) {
      dependents[d].push_back(i);
      ++indegree[i];
    }
  }

  // Ready queues per device, ordered by original index.
  std::set<int32_t> ready_npu, ready_cpu;
  auto ready_for = [&](Device d) -> std::set<int32_t>& {
    return d == Device::Npu ? ready_npu : ready_cpu;
  };
  for (int32_t i = 0; i < n; ++i)
    if (indegree[i] == 0) ready_for(program.instructions[i].device).insert(i);

  std::vector<int32_t> order;
  order.reserve(n);
  bool have_last = false;
  Device last = Device::Cpu;
  while (static_cast<int32_t>(order.size()) < n) {
    int32_t pick;
    if (have_last && !ready_for(last).empty()) {
      pick = *ready_for(last).begin();
    } else if (!ready_npu.empty() &&
               (ready_cpu.empty() || *ready_npu.begin() < *ready_cpu.begin())) {
      pick = *ready_npu.begin();
    } else {
      pick = *ready_cpu.begin();
    }
    Device dev = program.instructions[pick].device;
    ready_for(dev).erase(pick);
    order.push_back(pick);
    have_last = true;
    last = dev;
    for (int32_t dep : dependents[pick])
      if (--indegree[dep] == 0)
        ready_for(program.instructions[dep].device).insert(dep);
  }

  ScheduleResult result;
  result.delta_before = count_transitions(program.instructions);
  result.program = program;
  result.program.instructions.clear();
  result.program.instructions.reserve(n);
  for (int32_t idx : order)
    result.program.instructions.push_back(program.instructions[idx]);
  result.delta_after = count_transitions(result.program.instructions);

  // Affinity clustering occasionally loses to the incoming order; keep the
  // original so delta never regresses.
  if (result.delta_after > result.delta_before) {
    result.program.instructions = program.instructions;
    result.delta_after = result.delta_before;
  }
  return result;
}

CompiledProgram compile(const IRProgram& program) {
  ScheduleResult sched = schedule(program);

  CompiledProgram compiled;
  compiled.delta_before = sched.delta_before;
  compiled.delta_after = sched.delta_after;
  compiled.program = std::move(sched.program);

  auto [intervals, dead_after] = compute_liveness(compiled.program);
  compiled.intervals = std::move(intervals);
  compiled.dead_after = std::move(dead_after);

  std::set<int32_t> pinned;
  for (const auto& [reg, _] : compiled.program.constants) pinned.insert(reg);
  if (compiled.program.input_reg >= 0) pinned.insert(compiled.program.input_reg);
  if (compiled.program.output_reg >= 0) pinned.insert(compiled.program.output_reg);
  compiled.buffers = allocate_buffers(compiled.intervals, pinned);
  return compiled;
}

TensorValue execute(const CompiledProgram& compiled,
                    const std::optional<TensorValue>& input, ExecStats* stats) {
  const IRProgram& program = compiled.program;
  std::vector<std::optional<TensorValue>> file(compiled.buffers.buffer_count);
  int64_t occupancy = 0, peak = 0;

  auto buffer_of = [&](int32_t reg) {
    auto it = compiled.buffers.reg_to_buffer.find(reg);
    if (it == compiled.buffers.reg_to_buffer.end())
      throw ExecutionError("register " + std::to_string(reg) + " has no buffer");
    return it->second;
  };
  auto occupy = [&](int32_t buf, TensorValue value) {
    if (file[buf].has_value())
      throw ExecutionError("buffer " + std::to_string(buf) +
                           " written while occupied");
    file[buf] = std::move(value);
    peak = std::max(peak, ++occupancy);
  };
  auto release = [&](int32_t reg) {
    int32_t buf = buffer_of(reg);
    if (file[buf].has_value()) {
      file[buf].reset();
      --occupancy;
    }
  };

  for (const auto& [reg, value] : program.constants) occupy(buffer_of(reg), value);
  if (program.input_reg >= 0) {
    if (!input.has_value())
      throw ExecutionError("program expects an input tensor");
    if (program.input_shape && *program.input_shape != input->shape)
      throw ExecutionError("input shape " + shape_to_string(input->shape) +
                           " does not match declared " +
                           shape_to_string(*program.input_shape));
    occupy(buffer_of(program.input_reg), *input);
  } else if (input.has_value()) {
    throw ExecutionError("program takes no input");
  }

  // Preloads that are never read die before the first instruction.
  if (auto it = compiled.dead_after.find(-1); it != compiled.dead_after.end())
    for (int32_t reg : it->second) release(reg);

  for (int32_t i = 0; i < static_cast<int32_t>(program.instructions.size()); ++i) {
    const IRInstruction& inst = program.instructions[i];
    std::vector<ArgValue> args;
    args.reserve(inst.frozen_args.size());
    for (const auto& fa : inst.frozen_args) {
      if (const auto* rr = std::get_if<RegRef>(&fa)) {
        int32_t buf = buffer_of(rr->reg);
        if (!file[buf].has_value())
          throw ExecutionError("instruction " + std::to_string(inst.op_id) +
                               " reads released register " +
                               std::to_string(rr->reg));
        args.emplace_back(*file[buf]);
      } else if (const auto* lit = std::get_if<Literal>(&fa)) {
        args.emplace_back(lit->value);
      } else {
        args.emplace_back(std::get<ShapeLiteral>(fa).dims);
      }
    }
    TensorValue value;
    try {
      value = eval_op(inst.kernel, args, inst.frozen_attrs);
    } catch (const EvalError& e) {
      throw ExecutionError("instruction " + std::to_string(inst.op_id) + ": " +
                           e.what());
    }
    if (inst.output_reg >= 0) occupy(buffer_of(inst.output_reg), std::move(value));

    if (auto it = compiled.dead_after.find(i); it != compiled.dead_after.end())
      for (int32_t reg : it->second) release(reg);
  }

  int32_t out_buf = buffer_of(program.output_reg);
  if (!file[out_buf].has_value())
    throw ExecutionError("output register was released");
  if (stats) {
    stats->peak_buffers = peak;
    stats->final_occupancy = occupancy;
  }
  return *file[out_buf];
}

std::string emit_schedule_json(const CompiledProgram& compiled) {
  using json = nlohmann::ordered_json;
  json doc = json::object();
  doc["delta_before"] = compiled.delta_before;
  doc["delta_after"] = compiled.delta_after;
  doc["reg_count"] = compiled.program.reg_count;
  doc["buffer_count"] = compiled.buffers.buffer_count;
  doc["rho_buf"] =
      buffer_reduction(compiled.program.reg_count, compiled.buffers.buffer_count);
  json order = json::array();
  json npu_lane = json::array();
  json cpu_lane = json::array();
  for (const auto& inst : compiled.program.instructions) {
    order.push_back(inst.op_id);
    (inst.device == Device::Npu ? npu_lane : cpu_lane).push_back(inst.op_id);
  }
  doc["order"] = std::move(order);
  json lanes = json::object();
  lanes["npu"] = std::move(npu_lane);
  lanes["cpu"] = std::move(cpu_lane);
  doc["lanes"] = std::move(lanes);
  return doc.dump(2);
}

}  // namespace forge
