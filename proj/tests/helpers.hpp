#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "forge/backend.hpp"
#include "forge/graph.hpp"
#include "forge/lowering.hpp"
#include "forge/tensor.hpp"

namespace forge::test {

// Deterministic generator so failures reproduce across platforms.
struct Rng {
  uint64_t state;
  explicit Rng(uint64_t seed) : state(seed) {}
  uint64_t next() {
    state += 0x9E3779B97F4A7C15ull;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double symmetric() { return 2.0 * uniform() - 1.0; }
  // Inclusive range.
  int64_t range(int64_t lo, int64_t hi) {
    return lo + static_cast<int64_t>(next() % static_cast<uint64_t>(hi - lo + 1));
  }
  bool chance(double p) { return uniform() < p; }
};

// Incremental construction of valid graphs for unit tests.
struct GraphBuilder {
  Graph g;

  explicit GraphBuilder(std::string name = "test") { g.name = std::move(name); }

  GraphBuilder& placeholder(const std::string& id,
                            std::vector<int64_t> shape = {}) {
    GraphNode n;
    n.id = id;
    n.kind = NodeKind::Placeholder;
    if (!shape.empty()) n.attrs["shape"] = std::move(shape);
    g.nodes.push_back(std::move(n));
    g.input_ids.push_back(id);
    return *this;
  }

  GraphBuilder& constant(const std::string& id, TensorValue value,
                         std::string token = "") {
    GraphNode n;
    n.id = id;
    n.kind = NodeKind::Constant;
    g.nodes.push_back(std::move(n));
    g.constants[id] =
        ConstantEntry{token.empty() ? "tok:" + id : std::move(token),
                      std::move(value), Dtype::F64};
    return *this;
  }

  GraphBuilder& alias(const std::string& id, const std::string& canonical) {
    GraphNode n;
    n.id = id;
    n.kind = NodeKind::Constant;
    g.nodes.push_back(std::move(n));
    g.tied_map[id] = canonical;
    return *this;
  }

  GraphBuilder& call(const std::string& id, const std::string& op,
                     std::vector<Argument> args, AttrMap attrs = {}) {
    GraphNode n;
    n.id = id;
    n.kind = NodeKind::CallOp;
    n.op_name = op;
    n.args = std::move(args);
    n.attrs = std::move(attrs);
    g.nodes.push_back(std::move(n));
    return *this;
  }

  GraphBuilder& output(const std::string& of, const std::string& id = "out") {
    GraphNode n;
    n.id = id;
    n.kind = NodeKind::Output;
    n.args = {NodeRef{of}};
    g.nodes.push_back(std::move(n));
    return *this;
  }

  Graph build() { return std::move(g); }
};

// By-value so unqualified calls with std::string arguments outrank the
// std::ref template that ADL drags in.
inline Argument ref(std::string id) { return NodeRef{std::move(id)}; }
inline Argument lit(double v) { return Literal{v}; }

inline TensorValue random_tensor(Rng& rng, std::vector<int64_t> shape) {
  TensorValue t = TensorValue::zeros(std::move(shape));
  for (auto& v : t.data) v = rng.symmetric();
  return t;
}

// Random valid graph over the closed vocabulary. Shape-correct by tracking
// the flowing [r, c] shape, so the result both validates and evaluates.
inline Graph random_graph(Rng& rng, int max_ops = 12) {
  const int64_t r = rng.range(2, 4);
  int64_t c = rng.range(2, 5);
  GraphBuilder b("rand" + std::to_string(rng.next() % 100000));
  b.placeholder("x", {r, c});
  std::string cur = "x";
  int consts = 0;

  const int ops = static_cast<int>(rng.range(1, max_ops));
  for (int i = 0; i < ops; ++i) {
    std::string id = "n" + std::to_string(i);
    switch (rng.range(0, 9)) {
      case 0: {
        std::string cid = "c" + std::to_string(consts++);
        b.constant(cid, random_tensor(rng, {r, c}));
        b.call(id, "add", {ref(cur), ref(cid)});
        break;
      }
      case 1: {
        std::string cid = "c" + std::to_string(consts++);
        b.constant(cid, random_tensor(rng, {c}));
        b.call(id, "mul", {ref(cur), ref(cid)});
        break;
      }
      case 2:
        b.call(id, "div_scalar", {ref(cur), lit(rng.symmetric() + 3.0)});
        break;
      case 3:
        b.call(id, "relu", {ref(cur)});
        break;
      case 4:
        b.call(id, "gelu", {ref(cur)});
        break;
      case 5:
        b.call(id, "silu", {ref(cur)});
        break;
      case 6:
        b.call(id, "softmax", {ref(cur)}, {{"axis", int64_t{-1}}});
        break;
      case 7:
        b.call(id, "contiguous", {ref(cur)});
        break;
      case 8: {
        std::string cid = "c" + std::to_string(consts++);
        int64_t c2 = rng.range(2, 5);
        b.constant(cid, random_tensor(rng, {c, c2}));
        b.call(id, "matmul", {ref(cur), ref(cid)});
        c = c2;
        break;
      }
      default: {
        std::string wid = "c" + std::to_string(consts++);
        int64_t c2 = rng.range(2, 5);
        b.constant(wid, random_tensor(rng, {c2, c}));
        std::vector<Argument> args = {ref(cur), ref(wid)};
        if (rng.chance(0.5)) {
          std::string bid = "c" + std::to_string(consts++);
          b.constant(bid, random_tensor(rng, {c2}));
          args.push_back(ref(bid));
        }
        b.call(id, "linear", std::move(args));
        c = c2;
        break;
      }
    }
    cur = id;
  }
  b.output(cur);
  return b.build();
}

inline std::vector<LiveInterval> random_intervals(Rng& rng, int max_regs,
                                                  int max_index = 40) {
  const int n = static_cast<int>(rng.range(1, max_regs));
  std::vector<LiveInterval> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    int32_t start = static_cast<int32_t>(rng.range(-1, max_index));
    int32_t end = static_cast<int32_t>(rng.range(start, max_index + 1));
    out.push_back(LiveInterval{i, start, end});
  }
  return out;
}

// Interval graphs: the chromatic number equals the clique number, which is
// the max count of intervals covering one point. Touching endpoints count
// as overlap, matching the allocator's strict expiry.
inline int32_t max_overlap(const std::vector<LiveInterval>& intervals) {
  int32_t best = 0;
  for (const auto& probe : intervals) {
    int32_t count = 0;
    for (const auto& iv : intervals)
      if (iv.start <= probe.start && probe.start <= iv.end) ++count;
    best = std::max(best, count);
  }
  return best;
}

inline bool intervals_overlap(const LiveInterval& a, const LiveInterval& b) {
  return a.start <= b.end && b.start <= a.end;
}

// Random dependency DAG wrapped as an IR program: instruction i writes reg i
// and reads a sparse subset of earlier outputs.
inline IRProgram random_dag_program(Rng& rng, int max_instructions = 9) {
  const int n = static_cast<int>(rng.range(1, max_instructions));
  IRProgram p;
  p.reg_count = n;
  for (int i = 0; i < n; ++i) {
    IRInstruction ins;
    ins.op_id = i;
    ins.output_reg = i;
    ins.device = rng.chance(0.5) ? Device::Npu : Device::Cpu;
    ins.kernel = ins.device == Device::Npu ? "matmul" : "add";
    ins.opcode = ins.device == Device::Npu ? "npu.module" : "cpu.fn.add";
    for (int j = 0; j < i; ++j)
      if (rng.chance(0.3)) {
        ins.input_regs.push_back(j);
        ins.frozen_args.push_back(RegRef{j});
      }
    if (ins.device == Device::Npu) ++p.placement.npu_instructions;
    else ++p.placement.cpu_instructions;
    p.instructions.push_back(std::move(ins));
  }
  p.output_reg = n - 1;
  return p;
}

inline IRProgram chain_program(Rng& rng, int n) {
  IRProgram p;
  p.reg_count = n;
  for (int i = 0; i < n; ++i) {
    IRInstruction ins;
    ins.op_id = i;
    ins.output_reg = i;
    ins.device = rng.chance(0.5) ? Device::Npu : Device::Cpu;
    ins.kernel = ins.device == Device::Npu ? "matmul" : "add";
    ins.opcode = ins.device == Device::Npu ? "npu.module" : "cpu.fn.add";
    if (i > 0) {
      ins.input_regs.push_back(i - 1);
      ins.frozen_args.push_back(RegRef{i - 1});
    }
    if (ins.device == Device::Npu) ++p.placement.npu_instructions;
    else ++p.placement.cpu_instructions;
    p.instructions.push_back(std::move(ins));
  }
  p.output_reg = n - 1;
  return p;
}

// Exhaustive minimum transition count over all topological orders:
// DP over (emitted set, device of the last emitted instruction).
inline int64_t optimal_transitions(const IRProgram& p) {
  const int n = static_cast<int>(p.instructions.size());
  if (n == 0) return 0;
  std::vector<uint32_t> deps(n, 0);
  std::map<int32_t, int> producer;
  for (int i = 0; i < n; ++i) producer[p.instructions[i].output_reg] = i;
  for (int i = 0; i < n; ++i)
    for (int32_t r : p.instructions[i].input_regs) {
      auto it = producer.find(r);
      if (it != producer.end() && it->second != i)
        deps[i] |= 1u << it->second;
    }

  const int64_t inf = 1'000'000;
  std::vector<std::array<int64_t, 2>> dp(1u << n, {inf, inf});
  auto dev = [&](int i) {
    return p.instructions[i].device == Device::Npu ? 0 : 1;
  };
  for (int i = 0; i < n; ++i)
    if (deps[i] == 0) dp[1u << i][dev(i)] = std::min(dp[1u << i][dev(i)], int64_t{0});
  for (uint32_t mask = 1; mask < (1u << n); ++mask)
    for (int last = 0; last < 2; ++last) {
      if (dp[mask][last] >= inf) continue;
      for (int i = 0; i < n; ++i) {
        if (mask & (1u << i)) continue;
        if ((deps[i] & mask) != deps[i]) continue;
        uint32_t next = mask | (1u << i);
        int64_t cost = dp[mask][last] + (dev(i) == last ? 0 : 1);
        dp[next][dev(i)] = std::min(dp[next][dev(i)], cost);
      }
    }
  uint32_t full = (1u << n) - 1;
  return std::min(dp[full][0], dp[full][1]);
}

}  // namespace forge::test
