#pragma once

#include <map>

#include "forge/graph.hpp"
#include "forge/passes.hpp"
#include "forge/tensor.hpp"

namespace forge {

struct CostWeights {
  double w_ops = 1.0;      // per call_op node
  double w_weights = 0.2;  // per constant tensor
  double w_linear = 50.0;  // linear-class fraction
  double w_depth = 0.5;    // longest call_op path
  double w_params = 0.1;   // parameter count, millions
  double fusion_bonus_op = 0.9;
  double fusion_bonus_attn = 0.25;

  bool operator==(const CostWeights&) const = default;
};

void validate_weights(const CostWeights& w);  // throws std::invalid_argument

// Score multiplier per declared precision. Metadata only: numerics are
// unaffected.
double precision_multiplier(Precision p);

struct GraphFeatures {
  int64_t n_ops = 0;       // call_op count
  int64_t n_weights = 0;   // constant tensor count
  double n_linear = 0.0;   // linear-class fraction of call_ops
  int64_t d_graph = 0;     // longest path through call_op nodes
  double s_params = 0.0;   // total constant elements, millions

  bool operator==(const GraphFeatures&) const = default;
};

GraphFeatures extract_features(const Graph& g);

struct FusedCounts {
  int64_t fused_ops = 0;        // all fused_* nodes
  int64_t attention_fused = 0;  // fused_sdpa subset
};

FusedCounts count_fused(const Graph& g);

// Weighted feature sum, discounted once per fusion category present and
// scaled by the precision multiplier. Lower is better.
double score(const Graph& g, const CostWeights& weights, const FusedCounts& fused,
             Precision precision = Precision::Fp16);

// score(pipeline(g, alpha=0)) / score(pipeline(g, alpha=1)) under `config`
// with only alpha overridden. Returns +inf when the denominator is zero.
double fgr(const Graph& g, const CostWeights& weights,
           const PipelineConfig& config = {});

// The bare ratio, exposed for reporting arithmetic.
double fgr_ratio(double score_unfused, double score_fused);

}  // namespace forge
