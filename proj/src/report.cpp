#include "forge/report.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "forge/interpreter.hpp"
#include "forge/lowering.hpp"

namespace forge {

namespace {

using Json = nlohmann::ordered_json;

double ms_between(std::chrono::steady_clock::time_point a,
                  std::chrono::steady_clock::time_point b) {
  return std::chrono::duration<double, std::milli>(b - a).count();
}

void expect_keys(const Json& j, const std::set<std::string>& allowed,
                 const std::string& where) {
  if (!j.is_object()) throw FormatError(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key()))
      throw FormatError(where + ": unknown field '" + it.key() + "'");
}

const Json& require(const Json& j, const std::string& key,
                    const std::string& where) {
  auto it = j.find(key);
  if (it == j.end())
    throw FormatError(where + ": missing field '" + key + "'");
  return *it;
}

double as_double(const Json& j, const std::string& where) {
  if (!j.is_number()) throw FormatError(where + ": expected a number");
  return j.get<double>();
}

int64_t as_int(const Json& j, const std::string& where) {
  if (!j.is_number_integer()) throw FormatError(where + ": expected an integer");
  return j.get<int64_t>();
}

std::string as_string(const Json& j, const std::string& where) {
  if (!j.is_string()) throw FormatError(where + ": expected a string");
  return j.get<std::string>();
}

Json fgr_to_json(double fgr) {
  if (!std::isfinite(fgr)) return nullptr;  // divide-by-zero sentinel
  return fgr;
}

double fgr_from_json(const Json& j) {
  if (j.is_null()) return std::numeric_limits<double>::infinity();
  return as_double(j, "fgr");
}

}  // namespace

double cei(double latency_baseline_ms, double latency_self_ms,
           double compile_time_s) {
  if (!(latency_baseline_ms > 0.0) || !(latency_self_ms > 0.0) ||
      !(compile_time_s > 0.0))
    throw std::invalid_argument("cei inputs must be positive");
  return (latency_baseline_ms / latency_self_ms) / compile_time_s;
}

std::string report_schema_emit(const CompilationResult& r) {
  Json j;
  j["schema_version"] = kReportSchemaVersion;
  j["model_name"] = r.model_name;

  Json config;
  config["alpha"] = r.config.alpha;
  config["layout"] = to_string(r.config.layout);
  config["precision"] = to_string(r.config.precision);
  config["max_rounds"] = r.config.max_rounds;
  Json passes = Json::array();
  for (PassKind p : r.config.passes) passes.push_back(to_string(p));
  config["passes"] = std::move(passes);
  config["autotune_mode"] = r.config.autotune_mode;
  j["config"] = std::move(config);

  j["fx_nodes_before"] = r.fx_nodes_before;
  j["fx_nodes_after"] = r.fx_nodes_after;
  j["fx_fused_ops"] = r.fx_fused_ops;
  j["fx_attention_fused"] = r.fx_attention_fused;

  Json reports = Json::array();
  for (const PassReport& p : r.pass_reports) {
    Json jp;
    jp["pass"] = p.pass_name;
    jp["duration_ms"] = p.duration_ms;
    jp["nodes_before"] = p.nodes_before;
    jp["nodes_after"] = p.nodes_after;
    jp["changed"] = p.changed;
    jp["details"] = p.details;
    reports.push_back(std::move(jp));
  }
  j["pass_reports"] = std::move(reports);

  j["reg_count"] = r.reg_count;
  j["buffer_count"] = r.buffer_count;
  j["rho_buf"] = r.rho_buf;
  j["delta_before"] = r.delta_before;
  j["delta_after"] = r.delta_after;
  j["fgr"] = fgr_to_json(r.fgr);

  Json times;
  times["capture_ms"] = r.phase_times.capture_ms;
  times["passes_ms"] = r.phase_times.passes_ms;
  times["lowering_ms"] = r.phase_times.lowering_ms;
  times["backend_ms"] = r.phase_times.backend_ms;
  j["phase_times"] = std::move(times);

  if (r.verification) {
    Json v;
    v["max_abs_diff"] = r.verification->max_abs_diff;
    v["kl"] = r.verification->kl;
    j["verification"] = std::move(v);
  }
  return j.dump(2);
}

CompilationResult report_schema_parse(const std::string& text) {
  Json j = Json::parse(text, nullptr, false);
  if (j.is_discarded()) throw FormatError("report: invalid JSON");
  expect_keys(j,
              {"schema_version", "model_name", "config", "fx_nodes_before",
               "fx_nodes_after", "fx_fused_ops", "fx_attention_fused",
               "pass_reports", "reg_count", "buffer_count", "rho_buf",
               "delta_before", "delta_after", "fgr", "phase_times",
               "verification"},
              "report");
  if (as_string(require(j, "schema_version", "report"), "schema_version") !=
      kReportSchemaVersion)
    throw FormatError("report: unsupported schema_version");

  CompilationResult r;
  r.model_name = as_string(require(j, "model_name", "report"), "model_name");

  const Json& jc = require(j, "config", "report");
  expect_keys(jc, {"alpha", "layout", "precision", "max_rounds", "passes",
                   "autotune_mode"},
              "config");
  r.config.alpha = as_double(require(jc, "alpha", "config"), "alpha");
  r.config.layout = layout_strategy_from_string(
      as_string(require(jc, "layout", "config"), "layout"));
  r.config.precision = precision_from_string(
      as_string(require(jc, "precision", "config"), "precision"));
  r.config.max_rounds = static_cast<int>(
      as_int(require(jc, "max_rounds", "config"), "max_rounds"));
  const Json& jpasses = require(jc, "passes", "config");
  if (!jpasses.is_array()) throw FormatError("config.passes: expected an array");
  r.config.passes.clear();
  for (const Json& p : jpasses)
    r.config.passes.push_back(
        pass_kind_from_string(as_string(p, "config.passes")));
  r.config.autotune_mode =
      as_string(require(jc, "autotune_mode", "config"), "autotune_mode");

  r.fx_nodes_before = as_int(require(j, "fx_nodes_before", "report"),
                             "fx_nodes_before");
  r.fx_nodes_after =
      as_int(require(j, "fx_nodes_after", "report"), "fx_nodes_after");
  r.fx_fused_ops = as_int(require(j, "fx_fused_ops", "report"), "fx_fused_ops");
  r.fx_attention_fused = as_int(require(j, "fx_attention_fused", "report"),
                                "fx_attention_fused");

  const Json& jr = require(j, "pass_reports", "report");
  if (!jr.is_array()) throw FormatError("pass_reports: expected an array");
  for (const Json& jp : jr) {
    expect_keys(jp,
                {"pass", "duration_ms", "nodes_before", "nodes_after",
                 "changed", "details"},
                "pass_reports");
    PassReport p;
    p.pass_name = as_string(require(jp, "pass", "pass_reports"), "pass");
    p.duration_ms =
        as_double(require(jp, "duration_ms", "pass_reports"), "duration_ms");
    p.nodes_before =
        as_int(require(jp, "nodes_before", "pass_reports"), "nodes_before");
    p.nodes_after =
        as_int(require(jp, "nodes_after", "pass_reports"), "nodes_after");
    const Json& jchanged = require(jp, "changed", "pass_reports");
    if (!jchanged.is_boolean())
      throw FormatError("pass_reports.changed: expected a boolean");
    p.changed = jchanged.get<bool>();
    const Json& jd = require(jp, "details", "pass_reports");
    if (!jd.is_array())
      throw FormatError("pass_reports.details: expected an array");
    for (const Json& d : jd)
      p.details.push_back(as_string(d, "pass_reports.details"));
    r.pass_reports.push_back(std::move(p));
  }

  r.reg_count = as_int(require(j, "reg_count", "report"), "reg_count");
  r.buffer_count =
      as_int(require(j, "buffer_count", "report"), "buffer_count");
  r.rho_buf = as_double(require(j, "rho_buf", "report"), "rho_buf");
  r.delta_before =
      as_int(require(j, "delta_before", "report"), "delta_before");
  r.delta_after = as_int(require(j, "delta_after", "report"), "delta_after");
  r.fgr = fgr_from_json(require(j, "fgr", "report"));

  const Json& jt = require(j, "phase_times", "report");
  expect_keys(jt, {"capture_ms", "passes_ms", "lowering_ms", "backend_ms"},
              "phase_times");
  r.phase_times.capture_ms =
      as_double(require(jt, "capture_ms", "phase_times"), "capture_ms");
  r.phase_times.passes_ms =
      as_double(require(jt, "passes_ms", "phase_times"), "passes_ms");
  r.phase_times.lowering_ms =
      as_double(require(jt, "lowering_ms", "phase_times"), "lowering_ms");
  r.phase_times.backend_ms =
      as_double(require(jt, "backend_ms", "phase_times"), "backend_ms");

  if (auto it = j.find("verification"); it != j.end()) {
    expect_keys(*it, {"max_abs_diff", "kl"}, "verification");
    VerificationResult v;
    v.max_abs_diff = as_double(require(*it, "max_abs_diff", "verification"),
                               "max_abs_diff");
    v.kl = as_double(require(*it, "kl", "verification"), "kl");
    r.verification = v;
  }
  return r;
}

std::vector<std::string> check_consistency(const CompilationResult& r) {
  std::vector<std::string> issues;
  auto flag = [&issues](const std::string& msg) { issues.push_back(msg); };

  if (r.fx_nodes_before < 0 || r.fx_nodes_after < 0)
    flag("node counts must be non-negative");
  if (!r.pass_reports.empty()) {
    if (r.pass_reports.front().nodes_before != r.fx_nodes_before)
      flag("first pass nodes_before does not match fx_nodes_before");
    if (r.pass_reports.back().nodes_after != r.fx_nodes_after)
      flag("last pass nodes_after does not match fx_nodes_after");
    for (size_t i = 0; i + 1 < r.pass_reports.size(); ++i)
      if (r.pass_reports[i].nodes_after != r.pass_reports[i + 1].nodes_before)
        flag("pass node counts do not telescope at '" +
             r.pass_reports[i + 1].pass_name + "'");
  } else if (r.fx_nodes_before != r.fx_nodes_after) {
    flag("node count changed with no pass reports");
  }
  for (const PassReport& p : r.pass_reports) {
    if (p.nodes_before != p.nodes_after && !p.changed)
      flag("pass '" + p.pass_name + "' changed node count but reports changed=false");
    if (p.duration_ms < 0.0)
      flag("pass '" + p.pass_name + "' has negative duration");
  }

  if (r.fx_attention_fused < 0 || r.fx_fused_ops < r.fx_attention_fused)
    flag("fused counters are inconsistent");
  if (r.fx_fused_ops > r.fx_nodes_after)
    flag("fused count exceeds final node count");

  if (r.reg_count < 0 || r.buffer_count < 0)
    flag("register/buffer counts must be non-negative");
  if (r.buffer_count > r.reg_count)
    flag("buffer_count exceeds reg_count");
  if (r.reg_count > 0) {
    double expect = 1.0 - static_cast<double>(r.buffer_count) /
                              static_cast<double>(r.reg_count);
    if (std::abs(r.rho_buf - expect) > 1e-12)
      flag("rho_buf does not match 1 - buffer_count/reg_count");
  } else if (r.rho_buf != 0.0) {
    flag("rho_buf must be 0 for an empty program");
  }

  if (r.delta_before < 0 || r.delta_after < 0)
    flag("device transition counts must be non-negative");
  if (r.delta_after > r.delta_before)
    flag("scheduling increased device transitions");

  if (std::isnan(r.fgr) || r.fgr <= 0.0) flag("fgr must be positive");

  if (r.phase_times.capture_ms < 0.0 || r.phase_times.passes_ms < 0.0 ||
      r.phase_times.lowering_ms < 0.0 || r.phase_times.backend_ms < 0.0)
    flag("phase times must be non-negative");

  if (r.verification) {
    if (r.verification->max_abs_diff < 0.0) flag("max_abs_diff is negative");
    if (r.verification->kl < 0.0) flag("kl is negative");
  }
  return issues;
}

TensorValue seeded_input(const Graph& g, uint64_t seed) {
  const GraphNode* placeholder = nullptr;
  if (!g.input_ids.empty()) placeholder = g.find_node(g.input_ids.front());
  if (!placeholder)
    for (const GraphNode& n : g.nodes)
      if (n.kind == NodeKind::Placeholder) {
        placeholder = &n;
        break;
      }
  if (!placeholder)
    throw std::invalid_argument("graph has no input placeholder");
  auto it = placeholder->attrs.find("shape");
  if (it == placeholder->attrs.end() ||
      !std::holds_alternative<std::vector<int64_t>>(it->second))
    throw std::invalid_argument("input placeholder has no shape attribute");
  TensorValue t =
      TensorValue::zeros(std::get<std::vector<int64_t>>(it->second));
  uint64_t state = seed;
  for (auto& v : t.data) {
    state += 0x9E3779B97F4A7C15ull;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    z ^= z >> 31;
    v = 2.0 * (static_cast<double>(z >> 11) * 0x1.0p-53) - 1.0;
  }
  return t;
}

CompileRun run_compile(const Graph& g, const CompileOptions& options) {
  validate_config(options.pipeline);
  validate_weights(options.weights);

  auto t0 = std::chrono::steady_clock::now();
  Graph resolved = resolve_tied_weights(g);
  auto t1 = std::chrono::steady_clock::now();

  CompileRun run;
  CompilationResult& r = run.result;
  r.model_name = resolved.name;
  r.phase_times.capture_ms = ms_between(t0, t1);

  PipelineConfig pc = options.pipeline;
  Precision precision = options.precision;
  if (options.autotune_mode) {
    TuneResult tuned = autotune(resolved, options.weights, *options.autotune_mode);
    pc.alpha = tuned.best.alpha;
    pc.layout = tuned.best.layout;
    pc.max_fixpoint_rounds = tuned.best.max_rounds;
    precision = tuned.best.precision;
    r.config.autotune_mode = to_string(*options.autotune_mode);
  }
  r.config.alpha = pc.alpha;
  r.config.layout = pc.layout;
  r.config.precision = precision;
  r.config.max_rounds = pc.max_fixpoint_rounds;
  r.config.passes = pc.enabled_passes;

  r.fx_nodes_before = static_cast<int64_t>(resolved.nodes.size());
  PipelineResult pipeline = run_pipeline(resolved, pc);
  auto t2 = std::chrono::steady_clock::now();
  r.phase_times.passes_ms = ms_between(t1, t2);

  run.optimized = std::move(pipeline.graph);
  r.pass_reports = std::move(pipeline.reports);
  r.fx_nodes_after = static_cast<int64_t>(run.optimized.nodes.size());
  FusedCounts fused = count_fused(run.optimized);
  r.fx_fused_ops = fused.fused_ops;
  r.fx_attention_fused = fused.attention_fused;

  IRProgram ir = lower(run.optimized);
  auto t3 = std::chrono::steady_clock::now();
  r.phase_times.lowering_ms = ms_between(t2, t3);

  run.compiled = compile(std::move(ir));
  auto t4 = std::chrono::steady_clock::now();
  r.phase_times.backend_ms = ms_between(t3, t4);

  r.reg_count = run.compiled.reg_count();
  r.buffer_count = run.compiled.buffer_count();
  r.rho_buf = buffer_reduction(r.reg_count, r.buffer_count);
  r.delta_before = run.compiled.delta_before;
  r.delta_after = run.compiled.delta_after;
  r.fgr = fgr(resolved, options.weights, pc);

  if (options.verify) {
    std::map<std::string, TensorValue> bindings;
    std::optional<TensorValue> input;
    if (!resolved.input_ids.empty()) {
      input = seeded_input(resolved, options.verify_seed);
      bindings[resolved.input_ids.front()] = *input;
    }
    TensorValue reference = interpret(g, bindings);
    TensorValue actual = execute(run.compiled, input);
    VerificationResult v;
    v.max_abs_diff = max_abs_diff(reference, actual);
    v.kl = kl_divergence(reference, actual);
    r.verification = v;
  }
  return run;
}

std::string emit_tune_json(const std::string& model_name, TuneMode mode,
                           const TuneResult& result) {
  auto config_json = [](const TuneConfig& c) {
    Json j;
    j["alpha"] = c.alpha;
    j["layout"] = to_string(c.layout);
    j["precision"] = to_string(c.precision);
    j["max_rounds"] = c.max_rounds;
    return j;
  };
  Json j;
  j["schema_version"] = kReportSchemaVersion;
  j["model_name"] = model_name;
  j["mode"] = to_string(mode);
  j["best"] = config_json(result.best);
  j["best_score"] = result.best_score;
  j["elapsed_ms"] = result.elapsed_ms;
  Json trials = Json::array();
  for (const TuneTrial& t : result.trials) {
    Json jt = config_json(t.config);
    jt["score"] = t.score;
    trials.push_back(std::move(jt));
  }
  j["trials"] = std::move(trials);
  return j.dump(2);
}

}  // namespace forge
