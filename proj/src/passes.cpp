#include "forge/passes.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "forge/interpreter.hpp"
#include "forge/ops.hpp"

namespace forge {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

void begin_report(PassReport& report, const std::string& name, const Graph& g) {
  report = PassReport{};
  report.pass_name = name;
  report.nodes_before = static_cast<int64_t>(g.nodes.size());
}

void finish_report(PassReport& report, const Graph& g, Clock::time_point start) {
  report.nodes_after = static_cast<int64_t>(g.nodes.size());
  report.duration_ms = ms_since(start);
}

// Drops the given nodes, their constant payloads, and tied entries that no
// longer resolve. Callers must have rewritten all references beforehand.
void erase_nodes(Graph& g, const std::unordered_set<std::string>& ids) {
  if (ids.empty()) return;
  std::erase_if(g.nodes, [&](const GraphNode& n) { return ids.count(n.id) > 0; });
  for (const auto& id : ids) g.constants.erase(id);
  std::erase_if(g.tied_map, [&](const auto& entry) {
    return ids.count(entry.first) > 0 || !g.constants.count(entry.second);
  });
}

void rewrite_refs(Graph& g, const std::unordered_map<std::string, Argument>& repl) {
  if (repl.empty()) return;
  for (auto& n : g.nodes)
    for (auto& a : n.args)
      if (const auto* ref = std::get_if<NodeRef>(&a)) {
        auto it = repl.find(ref->id);
        if (it != repl.end()) a = it->second;
      }
}

std::string literal_key(double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(bits));
  return buf;
}

std::string argument_key(const Argument& a) {
  if (const auto* ref = std::get_if<NodeRef>(&a)) return "r:" + ref->id;
  if (const auto* lit = std::get_if<Literal>(&a)) return "l:" + literal_key(lit->value);
  std::string key = "s:";
  for (int64_t d : std::get<ShapeLiteral>(a).dims) key += std::to_string(d) + ",";
  return key;
}

std::string attrs_key(const AttrMap& attrs) {
  std::string key;
  for (const auto& [k, v] : attrs) {
    key += k + "=";
    if (const auto* i = std::get_if<int64_t>(&v)) {
      key += "i" + std::to_string(*i);
    } else if (const auto* d = std::get_if<double>(&v)) {
      key += "d" + literal_key(*d);
    } else {
      key += "v";
      for (int64_t e : std::get<std::vector<int64_t>>(v))
        key += std::to_string(e) + ",";
    }
    key += ";";
  }
  return key;
}

int64_t ceil_fraction(double alpha, int64_t m) {
  int64_t take = static_cast<int64_t>(std::ceil(alpha * static_cast<double>(m)));
  return std::clamp<int64_t>(take, 0, m);
}

bool is_literal_value(const Argument& a, double v) {
  const auto* lit = std::get_if<Literal>(&a);
  return lit && lit->value == v;
}

std::string fresh_id(const Graph& g, const std::string& stem) {
  if (!g.find_node(stem)) return stem;
  for (int i = 2;; ++i) {
    std::string candidate = stem + "_" + std::to_string(i);
    if (!g.find_node(candidate)) return candidate;
  }
}

}  // namespace

std::string to_string(PassKind p) {
  switch (p) {
    case PassKind::Dce: return "dce";
    case PassKind::Cse: return "cse";
    case PassKind::ConstFold: return "const_fold";
    case PassKind::AttnFusion: return "attn_fusion";
    case PassKind::OpFusion: return "op_fusion";
    case PassKind::Layout: return "layout";
  }
  return "dce";
}

PassKind pass_kind_from_string(const std::string& s) {
  if (s == "dce") return PassKind::Dce;
  if (s == "cse") return PassKind::Cse;
  if (s == "const_fold") return PassKind::ConstFold;
  if (s == "attn_fusion") return PassKind::AttnFusion;
  if (s == "op_fusion") return PassKind::OpFusion;
  if (s == "layout") return PassKind::Layout;
  throw std::invalid_argument("unknown pass: " + s);
}

const std::vector<PassKind>& default_pass_order() {
  static const std::vector<PassKind> order = {
      PassKind::Dce,       PassKind::Cse,      PassKind::ConstFold,
      PassKind::AttnFusion, PassKind::OpFusion, PassKind::Layout,
  };
  return order;
}

std::string to_string(LayoutStrategy s) {
  switch (s) {
    case LayoutStrategy::Auto: return "auto";
    case LayoutStrategy::ChannelsLast: return "channels_last";
    case LayoutStrategy::Contiguous: return "contiguous";
  }
  return "auto";
}

LayoutStrategy layout_strategy_from_string(const std::string& s) {
  if (s == "auto") return LayoutStrategy::Auto;
  if (s == "channels_last") return LayoutStrategy::ChannelsLast;
  if (s == "contiguous") return LayoutStrategy::Contiguous;
  throw std::invalid_argument("unknown layout strategy: " + s);
}

void validate_config(const PipelineConfig& config) {
  if (!(config.alpha >= 0.0 && config.alpha <= 1.0))
    throw std::invalid_argument("alpha must be in [0, 1]");
  if (config.max_fixpoint_rounds < 1)
    throw std::invalid_argument("max_fixpoint_rounds must be >= 1");
  if (config.enabled_passes.empty())
    throw std::invalid_argument("enabled_passes must not be empty");
}

Graph run_dce(const Graph& g, PassReport& report) {
  auto start = Clock::now();
  begin_report(report, "dce", g);
  Graph out = g;

  std::unordered_set<std::string> live;
  std::vector<std::string> stack;
  for (const auto& n : out.nodes)
    if (n.kind == NodeKind::Output)
      for (const auto& a : n.args)
        if (const auto* ref = std::get_if<NodeRef>(&a)) stack.push_back(ref->id);
  while (!stack.empty()) {
    std::string id = stack.back();
    stack.pop_back();
    if (!live.insert(id).second) continue;
    if (const GraphNode* n = out.find_node(id))
      for (const auto& a : n->args)
        if (const auto* ref = std::get_if<NodeRef>(&a)) stack.push_back(ref->id);
  }

  std::unordered_set<std::string> doomed;
  for (const auto& n : out.nodes) {
    if (n.kind == NodeKind::Placeholder || n.kind == NodeKind::Output) continue;
    if (!live.count(n.id)) {
      doomed.insert(n.id);
      report.details.push_back("erased " + n.id);
    }
  }
  erase_nodes(out, doomed);
  report.changed = !doomed.empty();
  finish_report(report, out, start);
  return out;
}

Graph run_cse(const Graph& g, PassReport& report) {
  auto start = Clock::now();
  begin_report(report, "cse", g);
  Graph out = g;

  std::unordered_map<std::string, std::string> canonical_by_key;
  std::unordered_map<std::string, std::string> remap;
  std::unordered_set<std::string> doomed;

  for (const auto& n : out.nodes) {
    if (n.kind != NodeKind::CallOp) continue;
    std::string key = n.op_name + "(";
    for (const auto& a : n.args) {
      Argument canon = a;
      if (auto* ref = std::get_if<NodeRef>(&canon)) {
        auto it = remap.find(ref->id);
        if (it != remap.end()) ref->id = it->second;
      }
      key += argument_key(canon) + "|";
    }
    key += ")" + attrs_key(n.attrs);
    auto [it, inserted] = canonical_by_key.emplace(key, n.id);
    if (!inserted) {
      remap[n.id] = it->second;
      doomed.insert(n.id);
      report.details.push_back("merged " + n.id + " into " + it->second);
    }
  }

  std::unordered_map<std::string, Argument> repl;
  for (const auto& [from, to] : remap) repl.emplace(from, NodeRef{to});
  rewrite_refs(out, repl);
  erase_nodes(out, doomed);
  report.changed = !doomed.empty();
  finish_report(report, out, start);
  return out;
}

Graph run_constant_folding(const Graph& g, PassReport& report) {
  auto start = Clock::now();
  begin_report(report, "const_fold", g);
  Graph out = g;

  static const std::unordered_set<std::string> kScalarEval = {
      "add", "mul", "div_scalar", "relu", "gelu", "silu"};

  std::unordered_set<std::string> output_consumed;
  for (const auto& n : out.nodes)
    if (n.kind == NodeKind::Output)
      for (const auto& a : n.args)
        if (const auto* ref = std::get_if<NodeRef>(&a))
          output_consumed.insert(ref->id);

  std::unordered_map<std::string, Argument> repl;
  std::unordered_set<std::string> doomed;

  for (auto& n : out.nodes) {
    if (n.kind != NodeKind::CallOp) continue;
    // Apply earlier folds before inspecting this node.
    for (auto& a : n.args)
      if (const auto* ref = std::get_if<NodeRef>(&a)) {
        auto it = repl.find(ref->id);
        if (it != repl.end()) a = it->second;
      }

    bool all_literal = !n.args.empty();
    for (const auto& a : n.args)
      if (!std::holds_alternative<Literal>(a)) { all_literal = false; break; }

    if (all_literal && kScalarEval.count(n.op_name)) {
      // Whole-literal nodes evaluate now, unless the output must keep a
      // node to reference.
      if (output_consumed.count(n.id)) continue;
      std::vector<ArgValue> args;
      for (const auto& a : n.args) args.emplace_back(std::get<Literal>(a).value);
      double value = eval_op(n.op_name, args, n.attrs).data[0];
      repl.emplace(n.id, Literal{value});
      doomed.insert(n.id);
      std::ostringstream detail;
      detail << "evaluated " << n.id << " to " << value;
      report.details.push_back(detail.str());
      continue;
    }

    bool identity = n.args.size() == 2 &&
                    std::holds_alternative<NodeRef>(n.args[0]) &&
                    ((n.op_name == "add" && is_literal_value(n.args[1], 0.0)) ||
                     (n.op_name == "mul" && is_literal_value(n.args[1], 1.0)) ||
                     (n.op_name == "div_scalar" && is_literal_value(n.args[1], 1.0)));
    if (identity) {
      repl.emplace(n.id, n.args[0]);
      doomed.insert(n.id);
      report.details.push_back("folded " + n.id + " to " +
                               std::get<NodeRef>(n.args[0]).id);
    }
  }

  rewrite_refs(out, repl);
  erase_nodes(out, doomed);
  report.changed = !doomed.empty();
  finish_report(report, out, start);
  return out;
}

int64_t AttentionChain::length() const {
  return 3 + (scale ? 1 : 0) + (mask_add ? 1 : 0) + (dropout ? 1 : 0);
}

std::optional<AttentionChain> match_attention_pattern(const Graph& g,
                                                      const std::string& start_node) {
  const GraphNode* qk = g.find_node(start_node);
  if (!qk || qk->kind != NodeKind::CallOp || qk->op_name != "matmul" ||
      qk->args.size() != 2)
    return std::nullopt;

  auto users = g.consumers();
  auto sole_consumer = [&](const std::string& id) -> const GraphNode* {
    auto it = users.find(id);
    if (it == users.end() || it->second.size() != 1) return nullptr;
    return g.find_node(it->second[0]);
  };
  auto first_arg_is = [](const GraphNode* n, const std::string& id) {
    if (n->args.empty()) return false;
    const auto* ref = std::get_if<NodeRef>(&n->args[0]);
    return ref && ref->id == id;
  };

  AttentionChain chain;
  chain.qk_matmul = qk->id;
  chain.query = qk->args[0];
  chain.key_raw = qk->args[1];

  const GraphNode* cur = sole_consumer(qk->id);
  if (!cur) return std::nullopt;

  if ((cur->op_name == "div_scalar" || cur->op_name == "mul") &&
      cur->args.size() == 2 && first_arg_is(cur, chain.qk_matmul) &&
      std::holds_alternative<Literal>(cur->args[1])) {
    double lit = std::get<Literal>(cur->args[1]).value;
    if (cur->op_name == "div_scalar") {
      if (lit == 0.0) return std::nullopt;
      chain.scale_multiplier = 1.0 / lit;
    } else {
      chain.scale_multiplier = lit;
    }
    chain.scale = cur->id;
    cur = sole_consumer(cur->id);
    if (!cur) return std::nullopt;
  }

  std::string prev = chain.scale ? *chain.scale : chain.qk_matmul;
  if (cur->op_name == "add" && cur->args.size() == 2) {
    const auto* a0 = std::get_if<NodeRef>(&cur->args[0]);
    const auto* a1 = std::get_if<NodeRef>(&cur->args[1]);
    int chain_pos = a0 && a0->id == prev ? 0 : a1 && a1->id == prev ? 1 : -1;
    if (chain_pos < 0) return std::nullopt;
    chain.mask_add = cur->id;
    chain.mask = cur->args[chain_pos == 0 ? 1 : 0];
    cur = sole_consumer(cur->id);
    if (!cur) return std::nullopt;
    prev = *chain.mask_add;
  }

  if (cur->op_name != "softmax" || !first_arg_is(cur, prev)) return std::nullopt;
  chain.softmax = cur->id;
  cur = sole_consumer(cur->id);
  if (!cur) return std::nullopt;
  prev = chain.softmax;

  if (cur->op_name == "dropout" && first_arg_is(cur, prev)) {
    chain.dropout = cur->id;
    cur = sole_consumer(cur->id);
    if (!cur) return std::nullopt;
    prev = *chain.dropout;
  }

  if (cur->op_name != "matmul" || cur->args.size() != 2 ||
      !first_arg_is(cur, prev))
    return std::nullopt;
  chain.pv_matmul = cur->id;
  chain.value = cur->args[1];
  return chain;
}

std::optional<std::string> unwrap_transpose(const Graph& g, const std::string& id) {
  const GraphNode* n = g.find_node(id);
  if (!n || n->kind != NodeKind::CallOp || n->op_name != "transpose" ||
      n->args.size() != 1)
    return std::nullopt;
  auto it = n->attrs.find("dims");
  if (it == n->attrs.end()) return std::nullopt;
  const auto* dims = std::get_if<std::vector<int64_t>>(&it->second);
  if (!dims || dims->size() != 2) return std::nullopt;
  int64_t lo = std::min((*dims)[0], (*dims)[1]);
  int64_t hi = std::max((*dims)[0], (*dims)[1]);
  bool last_two = (lo == -2 && hi == -1) || (lo == 2 && hi == 3);
  if (!last_two) return std::nullopt;
  const auto* ref = std::get_if<NodeRef>(&n->args[0]);
  if (!ref) return std::nullopt;
  return ref->id;
}

Graph run_attention_fusion(const Graph& g, double alpha, PassReport& report) {
  auto start = Clock::now();
  begin_report(report, "attn_fusion", g);
  Graph out = g;

  struct Match {
    AttentionChain chain;
    std::string key_unwrapped;
  };
  std::vector<Match> matches;
  std::unordered_set<std::string> used;
  for (const auto& n : out.nodes) {
    if (n.kind != NodeKind::CallOp || n.op_name != "matmul" || used.count(n.id))
      continue;
    auto chain = match_attention_pattern(out, n.id);
    if (!chain) continue;
    const auto* key_ref = std::get_if<NodeRef>(&chain->key_raw);
    if (!key_ref) continue;
    auto unwrapped = unwrap_transpose(out, key_ref->id);
    if (!unwrapped) continue;
    for (const std::string* id :
         {&chain->qk_matmul, &chain->pv_matmul, &chain->softmax}) {
      used.insert(*id);
    }
    if (chain->scale) used.insert(*chain->scale);
    if (chain->mask_add) used.insert(*chain->mask_add);
    if (chain->dropout) used.insert(*chain->dropout);
    matches.push_back({std::move(*chain), std::move(*unwrapped)});
  }

  int64_t take = ceil_fraction(alpha, static_cast<int64_t>(matches.size()));
  std::unordered_set<std::string> doomed;
  for (int64_t i = 0; i < take; ++i) {
    const Match& m = matches[i];
    GraphNode* pv = out.find_node(m.chain.pv_matmul);
    pv->op_name = "fused_sdpa";
    pv->args = {m.chain.query, NodeRef{m.key_unwrapped}, m.chain.value,
                Literal{m.chain.scale_multiplier}};
    if (m.chain.mask) pv->args.push_back(*m.chain.mask);
    pv->attrs = {{"fused_chain_len", m.chain.length()}};
    doomed.insert(m.chain.qk_matmul);
    doomed.insert(m.chain.softmax);
    if (m.chain.scale) doomed.insert(*m.chain.scale);
    if (m.chain.mask_add) doomed.insert(*m.chain.mask_add);
    if (m.chain.dropout) doomed.insert(*m.chain.dropout);
    report.details.push_back("fused chain at " + m.chain.pv_matmul + " (len " +
                             std::to_string(m.chain.length()) + ")");
  }

  erase_nodes(out, doomed);
  report.changed = take > 0;
  report.details.push_back("matches " + std::to_string(matches.size()) +
                           ", fused " + std::to_string(take));
  finish_report(report, out, start);
  return out;
}

Graph run_operator_fusion(const Graph& g, double alpha, PassReport& report) {
  auto start = Clock::now();
  begin_report(report, "op_fusion", g);
  Graph out = g;

  auto users = out.consumers();
  auto sole_consumer = [&](const std::string& id) -> const GraphNode* {
    auto it = users.find(id);
    if (it == users.end() || it->second.size() != 1) return nullptr;
    return out.find_node(it->second[0]);
  };

  struct Match {
    std::string head;  // linear or matmul, erased
    std::string tail;  // activation or add, rewritten in place
    std::string fused_op;
    std::optional<Argument> addend;
  };
  std::vector<Match> matches;
  std::unordered_set<std::string> used;

  for (const auto& n : out.nodes) {
    if (n.kind != NodeKind::CallOp || used.count(n.id)) continue;
    if (n.op_name == "linear") {
      const GraphNode* act = sole_consumer(n.id);
      if (!act || used.count(act->id) || !is_fusable_activation(act->op_name))
        continue;
      const auto* ref =
          act->args.size() == 1 ? std::get_if<NodeRef>(&act->args[0]) : nullptr;
      if (!ref || ref->id != n.id) continue;
      used.insert(n.id);
      used.insert(act->id);
      matches.push_back({n.id, act->id, fused_linear_op_for(act->op_name), {}});
    } else if (n.op_name == "matmul") {
      const GraphNode* addn = sole_consumer(n.id);
      if (!addn || used.count(addn->id) || addn->op_name != "add" ||
          addn->args.size() != 2)
        continue;
      const auto* a0 = std::get_if<NodeRef>(&addn->args[0]);
      const auto* a1 = std::get_if<NodeRef>(&addn->args[1]);
      int pos = a0 && a0->id == n.id ? 0 : a1 && a1->id == n.id ? 1 : -1;
      if (pos < 0) continue;
      used.insert(n.id);
      used.insert(addn->id);
      matches.push_back(
          {n.id, addn->id, "fused_mm_add", addn->args[pos == 0 ? 1 : 0]});
    }
  }

  int64_t take = ceil_fraction(alpha, static_cast<int64_t>(matches.size()));
  std::unordered_set<std::string> doomed;
  for (int64_t i = 0; i < take; ++i) {
    const Match& m = matches[i];
    const GraphNode* head = out.find_node(m.head);
    GraphNode* tail = out.find_node(m.tail);
    std::vector<Argument> args = head->args;
    if (m.addend) args.push_back(*m.addend);
    tail->op_name = m.fused_op;
    tail->args = std::move(args);
    tail->attrs = {{"fused_chain_len", int64_t{2}}};
    doomed.insert(m.head);
    report.details.push_back("fused " + m.head + " + " + m.tail + " into " +
                             m.fused_op);
  }

  erase_nodes(out, doomed);
  report.changed = take > 0;
  report.details.push_back("matches " + std::to_string(matches.size()) +
                           ", fused " + std::to_string(take));
  finish_report(report, out, start);
  return out;
}

Graph run_layout_optimization(const Graph& g, LayoutStrategy strategy,
                              PassReport& report) {
  auto start = Clock::now();
  begin_report(report, "layout", g);
  Graph out = g;
  bool changed = false;

  auto attr_nonzero = [](const GraphNode& n, const std::string& key) {
    auto it = n.attrs.find(key);
    if (it == n.attrs.end()) return false;
    if (const auto* i = std::get_if<int64_t>(&it->second)) return *i != 0;
    if (const auto* d = std::get_if<double>(&it->second)) return *d != 0.0;
    return false;
  };

  auto needs_conversion = [&](const GraphNode& producer) {
    if (producer.kind == NodeKind::CallOp && producer.op_name == "transpose")
      return true;
    return strategy == LayoutStrategy::ChannelsLast &&
           attr_nonzero(producer, "channels_last");
  };

  // One conversion node per triggering producer, shared by all NPU-eligible
  // consumers of that producer.
  std::unordered_map<std::string, std::string> conversion_for;
  const auto& npu_ops = default_npu_eligible();

  for (size_t i = 0; i < out.nodes.size(); ++i) {
    if (out.nodes[i].kind != NodeKind::CallOp ||
        !npu_ops.count(out.nodes[i].op_name))
      continue;
    for (size_t j = 0; j < out.nodes[i].args.size(); ++j) {
      auto* ref = std::get_if<NodeRef>(&out.nodes[i].args[j]);
      if (!ref) continue;
      auto pre = conversion_for.find(ref->id);
      if (pre != conversion_for.end()) {
        ref->id = pre->second;
        continue;
      }
      const GraphNode* producer = out.find_node(ref->id);
      if (!producer || producer->op_name == "contiguous" ||
          !needs_conversion(*producer))
        continue;
      GraphNode conv;
      conv.id = fresh_id(out, ref->id + "__contig");
      conv.kind = NodeKind::CallOp;
      conv.op_name = "contiguous";
      conv.args = {NodeRef{ref->id}};
      if (strategy == LayoutStrategy::ChannelsLast)
        conv.attrs["channels_last"] = int64_t{1};
      int64_t producer_idx = out.node_index(ref->id);
      conversion_for.emplace(ref->id, conv.id);
      report.details.push_back("inserted " + conv.id + " before " +
                               out.nodes[i].id);
      ref->id = conv.id;
      // Inserting after the producer shifts this node one slot right.
      out.nodes.insert(out.nodes.begin() + producer_idx + 1, std::move(conv));
      ++i;
      changed = true;
    }
  }

  // Collapse runs of identical conversions: contiguous(contiguous(x)) with
  // equal attrs keeps the inner node.
  std::unordered_map<std::string, std::string> remap;
  std::unordered_set<std::string> doomed;
  for (auto& n : out.nodes) {
    for (auto& a : n.args)
      if (auto* ref = std::get_if<NodeRef>(&a)) {
        auto it = remap.find(ref->id);
        if (it != remap.end()) ref->id = it->second;
      }
    if (n.kind != NodeKind::CallOp || n.op_name != "contiguous") continue;
    const auto* ref = std::get_if<NodeRef>(&n.args[0]);
    if (!ref) continue;
    const GraphNode* inner = out.find_node(ref->id);
    if (!inner || inner->op_name != "contiguous" || inner->attrs != n.attrs)
      continue;
    remap[n.id] = inner->id;
    doomed.insert(n.id);
    report.details.push_back("collapsed " + n.id + " into " + inner->id);
    changed = true;
  }
  erase_nodes(out, doomed);

  report.changed = changed;
  finish_report(report, out, start);
  return out;
}

PipelineResult run_pipeline(const Graph& g, const PipelineConfig& config) {
  validate_config(config);
  PipelineResult result;
  result.graph = g;

  for (int round = 0; round < config.max_fixpoint_rounds; ++round) {
    bool round_changed = false;
    for (PassKind pass : config.enabled_passes) {
      PassReport report;
      switch (pass) {
        case PassKind::Dce:
          result.graph = run_dce(result.graph, report);
          break;
        case PassKind::Cse:
          result.graph = run_cse(result.graph, report);
          break;
        case PassKind::ConstFold:
          result.graph = run_constant_folding(result.graph, report);
          break;
        case PassKind::AttnFusion:
          result.graph = run_attention_fusion(result.graph, config.alpha, report);
          break;
        case PassKind::OpFusion:
          result.graph = run_operator_fusion(result.graph, config.alpha, report);
          break;
        case PassKind::Layout:
          result.graph =
              run_layout_optimization(result.graph, config.layout, report);
          break;
      }
      round_changed = round_changed || report.changed;
      result.reports.push_back(std::move(report));
    }
    if (!round_changed) break;
  }
  return result;
}

}  // namespace forge
