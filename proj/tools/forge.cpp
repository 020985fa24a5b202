#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "forge/autotune.hpp"
#include "forge/backend.hpp"
#include "forge/cost_model.hpp"
#include "forge/graph.hpp"
#include "forge/lowering.hpp"
#include "forge/model_gen.hpp"
#include "forge/passes.hpp"
#include "forge/report.hpp"
#include "forge/serialize.hpp"

namespace {

constexpr double kMaxAbsTolerance = 1e-9;
constexpr double kKlTolerance = 1e-15;

struct CompileArgs {
  std::string model_path;
  std::string preset_name;
  double alpha = 1.0;
  std::string layout = "auto";
  std::string precision = "fp16";
  int rounds = 2;
  std::string passes;  // comma-separated override
  std::string autotune_mode;
  bool verify = false;
  uint64_t seed = 240816;
  std::string weights_path;
  std::string report_path;
  std::string ir_path;
  std::string schedule_path;
};

struct GenArgs {
  std::string preset_name;
  std::string out_path;
  std::optional<uint64_t> seed;
  int dead = 0;
  int dup = 0;
};

struct TuneArgs {
  std::string model_path;
  std::string preset_name;
  std::string mode = "paper45";
  std::string weights_path;
  std::string report_path;
};

void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  f << text;
  if (!f) throw std::runtime_error("cannot write " + path);
}

forge::Graph load_input(const std::string& model_path,
                        const std::string& preset_name) {
  if (model_path.empty() == preset_name.empty())
    throw std::invalid_argument("pass exactly one of --model and --preset");
  if (!model_path.empty()) return forge::load_graph_file(model_path);
  return forge::generate(forge::preset(preset_name));
}

forge::CostWeights load_weights(const std::string& path) {
  forge::CostWeights w;
  if (path.empty()) return w;
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path);
  std::string text((std::istreambuf_iterator<char>(f)),
                   std::istreambuf_iterator<char>());
  nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object())
    throw std::invalid_argument("weights file must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& key = it.key();
    if (!it->is_number())
      throw std::invalid_argument("weights." + key + " must be a number");
    double v = it->get<double>();
    if (key == "w_ops") w.w_ops = v;
    else if (key == "w_weights") w.w_weights = v;
    else if (key == "w_linear") w.w_linear = v;
    else if (key == "w_depth") w.w_depth = v;
    else if (key == "w_params") w.w_params = v;
    else if (key == "fusion_bonus_op") w.fusion_bonus_op = v;
    else if (key == "fusion_bonus_attn") w.fusion_bonus_attn = v;
    else throw std::invalid_argument("unknown weights field '" + key + "'");
  }
  forge::validate_weights(w);
  return w;
}

std::vector<forge::PassKind> parse_pass_list(const std::string& text) {
  std::vector<forge::PassKind> out;
  size_t pos = 0;
  while (pos <= text.size()) {
    size_t comma = text.find(',', pos);
    if (comma == std::string::npos) comma = text.size();
    std::string name = text.substr(pos, comma - pos);
    if (!name.empty()) out.push_back(forge::pass_kind_from_string(name));
    pos = comma + 1;
  }
  if (out.empty()) throw std::invalid_argument("--passes list is empty");
  return out;
}

int cmd_compile(const CompileArgs& args) {
  forge::Graph g = load_input(args.model_path, args.preset_name);

  forge::CompileOptions options;
  options.pipeline.alpha = args.alpha;
  options.pipeline.layout = forge::layout_strategy_from_string(args.layout);
  options.pipeline.max_fixpoint_rounds = args.rounds;
  if (!args.passes.empty())
    options.pipeline.enabled_passes = parse_pass_list(args.passes);
  options.precision = forge::precision_from_string(args.precision);
  options.weights = load_weights(args.weights_path);
  if (!args.autotune_mode.empty())
    options.autotune_mode = forge::tune_mode_from_string(args.autotune_mode);
  options.verify = args.verify;
  options.verify_seed = args.seed;

  forge::CompileRun run = forge::run_compile(g, options);
  const forge::CompilationResult& r = run.result;

  double reduction =
      r.fx_nodes_before > 0
          ? 100.0 * (1.0 - double(r.fx_nodes_after) / double(r.fx_nodes_before))
          : 0.0;
  std::printf("model: %s\n", r.model_name.c_str());
  std::printf("config: alpha=%g layout=%s precision=%s rounds=%d autotune=%s\n",
              r.config.alpha, forge::to_string(r.config.layout).c_str(),
              forge::to_string(r.config.precision).c_str(), r.config.max_rounds,
              r.config.autotune_mode.c_str());
  std::printf("nodes: %lld -> %lld (%.1f%% reduction)\n",
              static_cast<long long>(r.fx_nodes_before),
              static_cast<long long>(r.fx_nodes_after), reduction);
  std::printf("fused: %lld ops (%lld attention)\n",
              static_cast<long long>(r.fx_fused_ops),
              static_cast<long long>(r.fx_attention_fused));
  std::printf("registers: %lld buffers: %lld rho_buf: %.4f\n",
              static_cast<long long>(r.reg_count),
              static_cast<long long>(r.buffer_count), r.rho_buf);
  std::printf("transitions: %lld -> %lld\n",
              static_cast<long long>(r.delta_before),
              static_cast<long long>(r.delta_after));
  std::printf("fgr: %.4f\n", r.fgr);

  if (!args.report_path.empty())
    write_file(args.report_path, forge::report_schema_emit(r));
  if (!args.ir_path.empty())
    write_file(args.ir_path, forge::emit_ir_json(run.compiled.program));
  if (!args.schedule_path.empty())
    write_file(args.schedule_path, forge::emit_schedule_json(run.compiled));

  if (r.verification) {
    bool ok = r.verification->max_abs_diff <= kMaxAbsTolerance &&
              r.verification->kl <= kKlTolerance;
    std::printf("verify: max_abs=%.3e kl=%.3e [%s]\n",
                r.verification->max_abs_diff, r.verification->kl,
                ok ? "ok" : "FAILED");
    if (!ok) return 2;
  }
  return 0;
}

int cmd_gen(const GenArgs& args) {
  forge::ModelSpec spec = forge::preset(args.preset_name);
  if (args.seed) spec.seed = *args.seed;
  spec.dead_nodes = args.dead;
  spec.duplicate_subexprs = args.dup;
  forge::Graph g = forge::generate(spec);
  forge::save_graph_file(g, args.out_path);
  std::printf("wrote %s (%zu nodes, %zu constants)\n", args.out_path.c_str(),
              g.nodes.size(), g.constants.size());
  return 0;
}

int cmd_tune(const TuneArgs& args) {
  forge::Graph g = load_input(args.model_path, args.preset_name);
  forge::Graph resolved = forge::resolve_tied_weights(g);
  forge::CostWeights weights = load_weights(args.weights_path);
  forge::TuneMode mode = forge::tune_mode_from_string(args.mode);

  forge::TuneResult result = forge::autotune(resolved, weights, mode);
  std::printf("trials: %zu (%s)\n", result.trials.size(),
              forge::to_string(mode).c_str());
  std::printf("best: alpha=%g layout=%s precision=%s rounds=%d score=%.4f\n",
              result.best.alpha, forge::to_string(result.best.layout).c_str(),
              forge::to_string(result.best.precision).c_str(),
              result.best.max_rounds, result.best_score);
  std::printf("elapsed: %.1f ms\n", result.elapsed_ms);

  if (!args.report_path.empty())
    write_file(args.report_path,
               forge::emit_tune_json(resolved.name, mode, result));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"four-phase compiler for desk-scale transformer graphs"};
  app.require_subcommand(1);

  CompileArgs cargs;
  CLI::App* compile = app.add_subcommand(
      "compile", "optimize, lower, allocate, and schedule a graph");
  compile->add_option("--model", cargs.model_path, "interchange JSON file");
  compile->add_option("--preset", cargs.preset_name, "built-in model preset");
  compile->add_option("--alpha", cargs.alpha, "fusion aggressiveness in [0,1]");
  compile->add_option("--layout", cargs.layout,
                      "layout strategy: auto|channels_last|contiguous");
  compile->add_option("--precision", cargs.precision,
                      "declared precision: fp16|int8|mixed");
  compile->add_option("--rounds", cargs.rounds, "max fixpoint rounds");
  compile->add_option("--passes", cargs.passes,
                      "comma-separated pass override");
  compile->add_option("--autotune", cargs.autotune_mode,
                      "adopt the best tuned config: paper45|full135");
  compile->add_flag("--verify", cargs.verify,
                    "execute and compare against the reference interpreter");
  compile->add_option("--seed", cargs.seed, "verification input seed");
  compile->add_option("--weights", cargs.weights_path,
                      "cost-model weights JSON file");
  compile->add_option("--report", cargs.report_path, "write the report JSON");
  compile->add_option("--emit-ir", cargs.ir_path, "write the lowered IR JSON");
  compile->add_option("--emit-schedule", cargs.schedule_path,
                      "write the schedule JSON");

  GenArgs gargs;
  CLI::App* gen =
      app.add_subcommand("gen", "emit a preset model as interchange JSON");
  gen->add_option("--preset", gargs.preset_name, "built-in model preset")
      ->required();
  gen->add_option("--out", gargs.out_path, "output path")->required();
  uint64_t seed_value = 0;
  CLI::Option* seed_opt =
      gen->add_option("--seed", seed_value, "override the preset seed");
  gen->add_option("--dead", gargs.dead, "inject N dead nodes");
  gen->add_option("--dup", gargs.dup, "inject N duplicated subexpressions");

  TuneArgs targs;
  CLI::App* tune =
      app.add_subcommand("tune", "grid-search pipeline configurations");
  tune->add_option("--model", targs.model_path, "interchange JSON file");
  tune->add_option("--preset", targs.preset_name, "built-in model preset");
  tune->add_option("--mode", targs.mode, "paper45|full135");
  tune->add_option("--weights", targs.weights_path,
                   "cost-model weights JSON file");
  tune->add_option("--report", targs.report_path, "write the trials JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }

  try {
    if (compile->parsed()) return cmd_compile(cargs);
    if (gen->parsed()) {
      if (*seed_opt) gargs.seed = seed_value;
      return cmd_gen(gargs);
    }
    if (tune->parsed()) return cmd_tune(targs);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
