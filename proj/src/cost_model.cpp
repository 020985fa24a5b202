#include "forge/cost_model.hpp"

#include <algorithm>
#include <limits>
#include <unordered_map>

#include "forge/ops.hpp"

namespace forge {

void validate_weights(const CostWeights& w) {
  for (double v : {w.w_ops, w.w_weights, w.w_linear, w.w_depth, w.w_params})
    if (!(v >= 0.0)) throw std::invalid_argument("cost weights must be >= 0");
  for (double b : {w.fusion_bonus_op, w.fusion_bonus_attn})
    if (!(b > 0.0 && b <= 1.0))
      throw std::invalid_argument("fusion bonuses must be in (0, 1]");
}

double precision_multiplier(Precision p) {
  switch (p) {
    case Precision::Fp16: return 1.0;
    case Precision::Int8: return 0.85;
    case Precision::Mixed: return 0.92;
  }
  return 1.0;
}

GraphFeatures extract_features(const Graph& g) {
  GraphFeatures f;
  int64_t linear_ops = 0;
  int64_t total_params = 0;

  // Longest call_op path ending at each node.
  std::unordered_map<std::string, int64_t> depth;
  for (const auto& n : g.nodes) {
    int64_t best = 0;
    for (const auto& a : n.args)
      if (const auto* ref = std::get_if<NodeRef>(&a)) {
        auto it = depth.find(ref->id);
        if (it != depth.end()) best = std::max(best, it->second);
      }
    depth[n.id] = best + (n.kind == NodeKind::CallOp ? 1 : 0);
    f.d_graph = std::max(f.d_graph, depth[n.id]);

    if (n.kind == NodeKind::CallOp) {
      ++f.n_ops;
      if (is_linear_class_op(n.op_name)) ++linear_ops;
    }
  }

  f.n_weights = static_cast<int64_t>(g.constants.size());
  for (const auto& [_, entry] : g.constants) total_params += entry.value.numel();
  f.s_params = static_cast<double>(total_params) / 1e6;
  f.n_linear = f.n_ops > 0
                   ? static_cast<double>(linear_ops) / static_cast<double>(f.n_ops)
                   : 0.0;
  return f;
}

FusedCounts count_fused(const Graph& g) {
  FusedCounts counts;
  for (const auto& n : g.nodes) {
    if (n.kind != NodeKind::CallOp || !is_fused_op(n.op_name)) continue;
    ++counts.fused_ops;
    if (is_attention_fused_op(n.op_name)) ++counts.attention_fused;
  }
  return counts;
}

double score(const Graph& g, const CostWeights& weights, const FusedCounts& fused,
             Precision precision) {
  validate_weights(weights);
  GraphFeatures f = extract_features(g);
  double s = weights.w_ops * static_cast<double>(f.n_ops) +
             weights.w_weights * static_cast<double>(f.n_weights) +
             weights.w_linear * f.n_linear +
             weights.w_depth * static_cast<double>(f.d_graph) +
             weights.w_params * f.s_params;
  if (fused.fused_ops > fused.attention_fused) s *= weights.fusion_bonus_op;
  if (fused.attention_fused > 0) s *= weights.fusion_bonus_attn;
  return s * precision_multiplier(precision);
}

double fgr(const Graph& g, const CostWeights& weights,
           const PipelineConfig& config) {
  PipelineConfig unfused_cfg = config;
  unfused_cfg.alpha = 0.0;
  PipelineConfig fused_cfg = config;
  fused_cfg.alpha = 1.0;
  Graph unfused = run_pipeline(g, unfused_cfg).graph;
  Graph fused = run_pipeline(g, fused_cfg).graph;
  return fgr_ratio(score(unfused, weights, count_fused(unfused)),
                   score(fused, weights, count_fused(fused)));
}

double fgr_ratio(double score_unfused, double score_fused) {
  if (score_fused == 0.0) return std::numeric_limits<double>::infinity();
  return score_unfused / score_fused;
}

}  // namespace forge
