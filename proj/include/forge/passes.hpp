#pragma once

#include <optional>
#include <string>
#include <vector>

#include "forge/graph.hpp"

namespace forge {

enum class PassKind { Dce, Cse, ConstFold, AttnFusion, OpFusion, Layout };

std::string to_string(PassKind p);
PassKind pass_kind_from_string(const std::string& s);

// Fixed default order: dce, cse, const_fold, attn_fusion, op_fusion, layout.
const std::vector<PassKind>& default_pass_order();

enum class LayoutStrategy { Auto, ChannelsLast, Contiguous };

std::string to_string(LayoutStrategy s);
LayoutStrategy layout_strategy_from_string(const std::string& s);

struct PassReport {
  std::string pass_name;
  double duration_ms = 0.0;
  int64_t nodes_before = 0;
  int64_t nodes_after = 0;
  bool changed = false;
  std::vector<std::string> details;

  bool operator==(const PassReport&) const = default;
};

struct PipelineConfig {
  std::vector<PassKind> enabled_passes = default_pass_order();
  double alpha = 1.0;  // fraction of fusion matches taken, in [0, 1]
  LayoutStrategy layout = LayoutStrategy::Auto;
  int max_fixpoint_rounds = 2;
};

void validate_config(const PipelineConfig& config);  // throws std::invalid_argument

struct PipelineResult {
  Graph graph;
  std::vector<PassReport> reports;
};

// Erases call_op/constant nodes that cannot reach the output. Placeholders
// and the output node always survive.
Graph run_dce(const Graph& g, PassReport& report);

// Merges call_op nodes with identical (op, canonical args, attrs) keys into
// the first occurrence. No commutative canonicalization: add(x,y) and
// add(y,x) stay distinct.
Graph run_cse(const Graph& g, PassReport& report);

// Folds add(x,0), mul(x,1), div_scalar(x,1) to x, and evaluates scalar ops
// whose operands are all literals.
Graph run_constant_folding(const Graph& g, PassReport& report);

// Decomposed attention chain rooted at a matmul:
//   matmul -> [div_scalar lit] -> [add mask] -> softmax -> [dropout] -> matmul
// Every node before the terminal matmul must have exactly one consumer.
struct AttentionChain {
  std::string qk_matmul;
  std::optional<std::string> scale;    // div_scalar (or mul) by a literal
  std::optional<std::string> mask_add;
  std::string softmax;
  std::optional<std::string> dropout;
  std::string pv_matmul;
  Argument query;
  Argument key_raw;           // argument as written, usually a transpose
  Argument value;
  std::optional<Argument> mask;
  double scale_multiplier = 1.0;  // effective multiplier applied to Q.K^T
  int64_t length() const;         // node count covered by the chain
};

std::optional<AttentionChain> match_attention_pattern(const Graph& g,
                                                      const std::string& start_node);

// Unwraps a transpose over the last two dims (dims {-2,-1} or {2,3}),
// returning the pre-transpose node id.
std::optional<std::string> unwrap_transpose(const Graph& g, const std::string& id);

// Replaces the first ceil(alpha * matches) fusible chains, in graph order,
// with fused_sdpa(Q, K, V, scale, mask?). K is the unwrapped pre-transpose
// tensor; chains whose key path cannot be unwrapped are not counted.
Graph run_attention_fusion(const Graph& g, double alpha, PassReport& report);

// Fuses linear -> activation into fused_linear_<act> and matmul -> add into
// fused_mm_add when the producer's only consumer is the pattern tail. The
// first ceil(alpha * matches) pairs in graph order are taken.
Graph run_operator_fusion(const Graph& g, double alpha, PassReport& report);

// Inserts a contiguous node before each NPU-eligible op whose operand is
// produced by a transpose (strategy auto/contiguous) or by a node tagged
// channels_last (strategy channels_last adds the tag to the conversion),
// then collapses consecutive identical conversions. Fixpoint-stable.
Graph run_layout_optimization(const Graph& g, LayoutStrategy strategy,
                              PassReport& report);

// Runs the enabled passes in configured order, repeating up to
// max_fixpoint_rounds while any pass reports a change. Reports are
// concatenated in execution order; input graph is not modified.
PipelineResult run_pipeline(const Graph& g, const PipelineConfig& config);

}  // namespace forge
