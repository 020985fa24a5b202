#pragma once

#include <optional>
#include <string>
#include <vector>

#include "forge/autotune.hpp"
#include "forge/backend.hpp"
#include "forge/cost_model.hpp"
#include "forge/graph.hpp"
#include "forge/model_gen.hpp"
#include "forge/passes.hpp"

namespace forge {

inline constexpr const char* kReportSchemaVersion = "forge-ugc/1";

struct PhaseTimes {
  double capture_ms = 0.0;   // load/parse or generation
  double passes_ms = 0.0;
  double lowering_ms = 0.0;
  double backend_ms = 0.0;

  bool operator==(const PhaseTimes&) const = default;
};

struct VerificationResult {
  double max_abs_diff = 0.0;
  double kl = 0.0;

  bool operator==(const VerificationResult&) const = default;
};

struct ConfigEcho {
  double alpha = 1.0;
  LayoutStrategy layout = LayoutStrategy::Auto;
  Precision precision = Precision::Fp16;
  int max_rounds = 2;
  std::vector<PassKind> passes = default_pass_order();
  std::string autotune_mode = "none";

  bool operator==(const ConfigEcho&) const = default;
};

struct CompilationResult {
  std::string model_name;
  ConfigEcho config;
  int64_t fx_nodes_before = 0;
  int64_t fx_nodes_after = 0;
  int64_t fx_fused_ops = 0;        // all fusion products in the final graph
  int64_t fx_attention_fused = 0;  // fused_sdpa nodes
  std::vector<PassReport> pass_reports;
  int64_t reg_count = 0;
  int64_t buffer_count = 0;
  double rho_buf = 0.0;  // 1 - buffer_count/reg_count
  int64_t delta_before = 0;
  int64_t delta_after = 0;
  double fgr = 1.0;
  PhaseTimes phase_times;
  std::optional<VerificationResult> verification;

  bool operator==(const CompilationResult&) const = default;
};

// (latency_baseline / latency_self) / compile_seconds. All inputs must be
// positive; throws std::invalid_argument otherwise.
double cei(double latency_baseline_ms, double latency_self_ms,
           double compile_time_s);

// Stable-key-order JSON with a schema version field; parse rejects unknown
// fields and missing required ones. parse(emit(r)) == r.
std::string report_schema_emit(const CompilationResult& result);
CompilationResult report_schema_parse(const std::string& text);

// Internal-consistency checks (telescoping pass deltas, rho_buf arithmetic,
// counter recomputation). Returns one message per violation.
std::vector<std::string> check_consistency(const CompilationResult& result);

struct CompileOptions {
  PipelineConfig pipeline;
  Precision precision = Precision::Fp16;
  CostWeights weights;
  std::optional<TuneMode> autotune_mode;
  bool verify = false;
  uint64_t verify_seed = 240816;
};

struct CompileRun {
  CompilationResult result;
  Graph optimized;
  CompiledProgram compiled;
};

// Full pipeline on an already-loaded graph: resolve tied weights, run
// passes (optionally adopting the autotuned config first), lower, compile,
// and assemble the report. With verify set, executes the compiled program
// against the reference interpretation of the input graph on a seeded
// random input.
CompileRun run_compile(const Graph& g, const CompileOptions& options);

// Deterministic input tensor for verification runs.
TensorValue seeded_input(const Graph& g, uint64_t seed);

std::string emit_tune_json(const std::string& model_name, TuneMode mode,
                           const TuneResult& result);

}  // namespace forge
