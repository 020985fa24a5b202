#include "forge/autotune.hpp"

#include <chrono>
#include <stdexcept>

namespace forge {

PipelineConfig TuneConfig::pipeline_config() const {
  PipelineConfig pc;
  pc.alpha = alpha;
  pc.layout = layout;
  pc.max_fixpoint_rounds = max_rounds;
  return pc;
}

std::string to_string(TuneMode m) {
  return m == TuneMode::Paper45 ? "paper45" : "full135";
}

TuneMode tune_mode_from_string(const std::string& s) {
  if (s == "paper45") return TuneMode::Paper45;
  if (s == "full135") return TuneMode::Full135;
  throw std::invalid_argument("unknown tune mode: " + s);
}

std::vector<TuneConfig> enumerate_configs(TuneMode mode) {
  static const double alphas[] = {0.2, 0.4, 0.6, 0.8, 1.0};
  static const LayoutStrategy layouts[] = {
      LayoutStrategy::Auto, LayoutStrategy::ChannelsLast,
      LayoutStrategy::Contiguous};
  static const Precision precisions[] = {Precision::Fp16, Precision::Int8,
                                         Precision::Mixed};
  std::vector<int> rounds;
  if (mode == TuneMode::Paper45)
    rounds = {2};
  else
    rounds = {1, 2, 3};

  std::vector<TuneConfig> out;
  out.reserve(mode == TuneMode::Paper45 ? 45 : 135);
  for (double a : alphas)
    for (LayoutStrategy l : layouts)
      for (Precision p : precisions)
        for (int r : rounds) {
          TuneConfig c;
          c.alpha = a;
          c.layout = l;
          c.precision = p;
          c.max_rounds = r;
          out.push_back(c);
        }
  return out;
}

TuneResult autotune(const Graph& g, const CostWeights& weights,
                    TuneMode mode) {
  validate_weights(weights);
  auto t0 = std::chrono::steady_clock::now();

  TuneResult result;
  bool have_best = false;
  for (const TuneConfig& config : enumerate_configs(mode)) {
    PipelineResult run = run_pipeline(g, config.pipeline_config());
    double s = score(run.graph, weights, count_fused(run.graph),
                     config.precision);
    result.trials.push_back(TuneTrial{config, s});
    if (!have_best || s < result.best_score) {
      have_best = true;
      result.best = config;
      result.best_score = s;
    }
  }

  result.elapsed_ms = std::chrono::duration<double, std::milli>(
                          std::chrono::steady_clock::now() - t0)
                          .count();
  return result;
}

}  // namespace forge
