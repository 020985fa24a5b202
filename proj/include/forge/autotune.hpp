#pragma once

#include <string>
#include <vector>

#include "forge/cost_model.hpp"
#include "forge/graph.hpp"
#include "forge/passes.hpp"
#include "forge/tensor.hpp"

namespace forge {

struct TuneConfig {
  double alpha = 1.0;
  LayoutStrategy layout = LayoutStrategy::Auto;
  Precision precision = Precision::Fp16;
  int max_rounds = 2;

  bool operator==(const TuneConfig&) const = default;

  PipelineConfig pipeline_config() const;
};

enum class TuneMode { Paper45, Full135 };

std::string to_string(TuneMode m);
TuneMode tune_mode_from_string(const std::string& s);

// Deterministic grid: alpha {0.2..1.0} x layout {auto, channels_last,
// contiguous} x precision {fp16, int8, mixed}, with rounds fixed at 2 for
// Paper45 and swept over {1,2,3} for Full135.
std::vector<TuneConfig> enumerate_configs(TuneMode mode);

struct TuneTrial {
  TuneConfig config;
  double score = 0.0;
};

struct TuneResult {
  TuneConfig best;
  double best_score = 0.0;
  std::vector<TuneTrial> trials;  // enumeration order
  double elapsed_ms = 0.0;
};

// Scores every candidate config through the pass pipeline and the cost
// model (no execution). Ties keep the first config in enumeration order.
TuneResult autotune(const Graph& g, const CostWeights& weights, TuneMode mode);

}  // namespace forge
