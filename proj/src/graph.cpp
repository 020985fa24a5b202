#include "forge/graph.hpp"

#include <algorithm>
#include <set>
#include <sstream>
#include <unordered_set>

#include "forge/ops.hpp"

namespace forge {

namespace {

const std::set<std::string> kVocabulary = {
    "matmul",       "transpose",        "add",
    "mul",          "div_scalar",       "softmax",
    "relu",         "gelu",             "silu",
    "dropout",      "contiguous",       "linear",
    "fused_sdpa",   "fused_linear_relu", "fused_linear_gelu",
    "fused_linear_silu", "fused_mm_add",
};

const std::set<std::string> kNpuEligible = {
    "matmul",           "linear",           "fused_sdpa",
    "fused_linear_relu", "fused_linear_gelu", "fused_linear_silu",
    "fused_mm_add",
};

}  // namespace

bool is_known_op(const std::string& op) { return kVocabulary.count(op) > 0; }

bool is_fused_op(const std::string& op) {
  return op.rfind("fused_", 0) == 0 && is_known_op(op);
}

bool is_attention_fused_op(const std::string& op) { return op == "fused_sdpa"; }

bool is_linear_class_op(const std::string& op) {
  return op == "linear" || op == "matmul" || op == "fused_mm_add" ||
         op.rfind("fused_linear_", 0) == 0;
}

bool is_fusable_activation(const std::string& op) {
  return op == "relu" || op == "gelu" || op == "silu";
}

std::string fused_linear_op_for(const std::string& activation) {
  return "fused_linear_" + activation;
}

const std::set<std::string>& default_npu_eligible() { return kNpuEligible; }

std::string to_string(Dtype d) { return d == Dtype::F64 ? "f64" : "f32"; }

std::string to_string(Precision p) {
  switch (p) {
    case Precision::Fp16: return "fp16";
    case Precision::Int8: return "int8";
    case Precision::Mixed: return "mixed";
  }
  return "fp16";
}

std::string to_string(Layout l) {
  switch (l) {
    case Layout::Contiguous: return "contiguous";
    case Layout::ChannelsLast: return "channels_last";
    case Layout::Strided: return "strided";
  }
  return "contiguous";
}

Dtype dtype_from_string(const std::string& s) {
  if (s == "f64") return Dtype::F64;
  if (s == "f32") return Dtype::F32;
  throw FormatError("unknown dtype: " + s);
}

Precision precision_from_string(const std::string& s) {
  if (s == "fp16") return Precision::Fp16;
  if (s == "int8") return Precision::Int8;
  if (s == "mixed") return Precision::Mixed;
  throw FormatError("unknown precision: " + s);
}

Layout layout_from_string(const std::string& s) {
  if (s == "contiguous") return Layout::Contiguous;
  if (s == "channels_last") return Layout::ChannelsLast;
  if (s == "strided") return Layout::Strided;
  throw FormatError("unknown layout: " + s);
}

std::string shape_to_string(const std::vector<int64_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

std::string to_string(NodeKind k) {
  switch (k) {
    case NodeKind::Placeholder: return "placeholder";
    case NodeKind::Constant: return "constant";
    case NodeKind::CallOp: return "call_op";
    case NodeKind::Output: return "output";
  }
  return "call_op";
}

NodeKind node_kind_from_string(const std::string& s) {
  if (s == "placeholder") return NodeKind::Placeholder;
  if (s == "constant") return NodeKind::Constant;
  if (s == "call_op") return NodeKind::CallOp;
  if (s == "output") return NodeKind::Output;
  throw FormatError("unknown node kind: " + s);
}

const GraphNode* Graph::find_node(const std::string& id) const {
  for (const auto& n : nodes)
    if (n.id == id) return &n;
  return nullptr;
}

GraphNode* Graph::find_node(const std::string& id) {
  for (auto& n : nodes)
    if (n.id == id) return &n;
  return nullptr;
}

int64_t Graph::node_index(const std::string& id) const {
  for (size_t i = 0; i < nodes.size(); ++i)
    if (nodes[i].id == id) return static_cast<int64_t>(i);
  return -1;
}

std::unordered_map<std::string, std::vector<std::string>> Graph::consumers()
    const {
  std::unordered_map<std::string, std::vector<std::string>> users;
  for (const auto& n : nodes)
    for (const auto& a : n.args)
      if (const auto* ref = std::get_if<NodeRef>(&a))
        users[ref->id].push_back(n.id);
  return users;
}

const GraphNode& Graph::output_node() const {
  for (const auto& n : nodes)
    if (n.kind == NodeKind::Output) return n;
  throw FormatError("graph has no output node");
}

std::vector<std::string> validate(const Graph& g) {
  std::vector<std::string> violations;
  auto fail = [&](const std::string& msg) { violations.push_back(msg); };

  std::unordered_set<std::string> seen;
  int64_t output_count = 0;

  for (size_t i = 0; i < g.nodes.size(); ++i) {
    const GraphNode& n = g.nodes[i];
    if (n.id.empty()) fail("node at index " + std::to_string(i) + ": empty id");
    if (!seen.insert(n.id).second) fail("node '" + n.id + "': duplicate id");

    switch (n.kind) {
      case NodeKind::CallOp:
        if (!is_known_op(n.op_name))
          fail("node '" + n.id + "': unknown op_name '" + n.op_name + "'");
        break;
      case NodeKind::Output:
        ++output_count;
        if (!n.op_name.empty())
          fail("node '" + n.id + "': output carries op_name");
        if (n.args.size() != 1 || !std::holds_alternative<NodeRef>(n.args[0]))
          fail("node '" + n.id + "': output needs exactly one node reference");
        break;
      case NodeKind::Placeholder:
      case NodeKind::Constant:
        if (!n.op_name.empty())
          fail("node '" + n.id + "': non-call node carries op_name");
        if (!n.args.empty())
          fail("node '" + n.id + "': non-call node carries arguments");
        break;
    }

    // Insertion order doubles as the topological order, so references may
    // only point backward.
    for (const auto& a : n.args) {
      if (const auto* ref = std::get_if<NodeRef>(&a)) {
        if (!seen.count(ref->id) || ref->id == n.id)
          fail("node '" + n.id + "': reference to '" + ref->id +
               "' is not a previously defined node");
      }
    }
  }

  if (output_count != 1)
    fail("graph '" + g.name + "': expected exactly one output node, found " +
         std::to_string(output_count));

  for (const auto& [id, entry] : g.constants) {
    const GraphNode* node = g.find_node(id);
    if (!node || node->kind != NodeKind::Constant) {
      fail("constant payload '" + id + "': no constant node with that id");
      continue;
    }
    if (entry.value.shape.empty())
      fail("constant '" + id + "': empty shape");
    for (int64_t d : entry.value.shape)
      if (d < 1) fail("constant '" + id + "': extent < 1");
    if (shape_numel(entry.value.shape) !=
        static_cast<int64_t>(entry.value.data.size()))
      fail("constant '" + id + "': data length does not match shape");
    if (entry.identity_token.empty())
      fail("constant '" + id + "': empty identity token");
  }

  for (const auto& n : g.nodes) {
    if (n.kind != NodeKind::Constant) continue;
    if (!g.constants.count(n.id) && !g.tied_map.count(n.id))
      fail("constant node '" + n.id + "': no payload and no tied alias entry");
  }

  for (const auto& [alias, canonical] : g.tied_map) {
    if (g.constants.count(alias))
      fail("tied alias '" + alias + "': also has its own payload");
    if (const GraphNode* node = g.find_node(alias);
        node && node->kind != NodeKind::Constant &&
        node->kind != NodeKind::Placeholder)
      fail("tied alias '" + alias + "': not a placeholder/constant node");
    if (!g.constants.count(canonical) && !g.tied_map.count(canonical))
      fail("tied alias '" + alias + "': canonical '" + canonical +
           "' has no payload");
  }

  for (const auto& id : g.input_ids) {
    const GraphNode* node = g.find_node(id);
    if (!node)
      fail("input '" + id + "': no such node");
    else if (node->kind != NodeKind::Placeholder)
      fail("input '" + id + "': not a placeholder");
  }

  return violations;
}

void validate_or_throw(const Graph& g) {
  auto violations = validate(g);
  if (violations.empty()) return;
  std::ostringstream os;
  os << "graph '" << g.name << "' failed validation:";
  for (const auto& v : violations) os << "\n  " << v;
  throw FormatError(os.str());
}

std::vector<std::string> topological_order(const Graph& g) {
  std::unordered_set<std::string> seen;
  std::vector<std::string> order;
  order.reserve(g.nodes.size());
  for (const auto& n : g.nodes) {
    for (const auto& a : n.args)
      if (const auto* ref = std::get_if<NodeRef>(&a))
        if (!seen.count(ref->id))
          throw FormatError("node '" + n.id + "': forward reference to '" +
                            ref->id + "' breaks topological order");
    seen.insert(n.id);
    order.push_back(n.id);
  }
  return order;
}

Graph resolve_tied_weights(const Graph& g) {
  Graph out = g;

  // Identity tokens mark physical payloads: later constants sharing a token
  // alias the first occurrence.
  std::map<std::string, std::string> token_owner;  // token -> canonical id
  for (const auto& n : out.nodes) {
    if (n.kind != NodeKind::Constant) continue;
    auto it = out.constants.find(n.id);
    if (it == out.constants.end()) continue;
    const std::string& token = it->second.identity_token;
    auto [owner, inserted] = token_owner.emplace(token, n.id);
    if (!inserted && owner->second != n.id)
      out.tied_map[n.id] = owner->second;
  }

  // Chase alias chains down to a stored payload. The chase always takes at
  // least one hop: an alias may carry a redundant payload of its own (two
  // materialized constants tied by one identity token) and must still
  // collapse onto the canonical owner.
  auto canonical_of = [&](const std::string& id) {
    std::unordered_set<std::string> visited{id};
    std::string cur = id;
    do {
      auto it = out.tied_map.find(cur);
      if (it == out.tied_map.end())
        throw FormatError("tied alias '" + id +
                          "': chain reaches no stored payload");
      cur = it->second;
      if (!visited.insert(cur).second)
        throw FormatError("tied alias '" + id + "': cyclic alias chain");
    } while (!out.constants.count(cur));
    return cur;
  };

  std::map<std::string, std::string> resolved;  // alias -> canonical payload id
  for (const auto& [alias, _] : out.tied_map) resolved[alias] = canonical_of(alias);

  if (resolved.empty()) return out;

  for (auto& n : out.nodes)
    for (auto& a : n.args)
      if (auto* ref = std::get_if<NodeRef>(&a)) {
        auto it = resolved.find(ref->id);
        if (it != resolved.end()) ref->id = it->second;
      }

  // One physical payload per group: drop alias payload entries and nodes.
  std::erase_if(out.nodes, [&](const GraphNode& n) {
    return resolved.count(n.id) > 0;
  });
  for (const auto& [alias, _] : resolved) out.constants.erase(alias);
  std::erase_if(out.input_ids,
                [&](const std::string& id) { return resolved.count(id) > 0; });
  out.tied_map = resolved;

  return out;
}

}  // namespace forge
