#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "forge/tensor.hpp"

namespace forge {

// Raised by the deserializer and by graph-shape preconditions. Messages
// name the offending node or key.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NodeRef {
  std::string id;
  bool operator==(const NodeRef&) const = default;
};

struct Literal {
  double value = 0.0;
  bool operator==(const Literal&) const = default;
};

struct ShapeLiteral {
  std::vector<int64_t> dims;
  bool operator==(const ShapeLiteral&) const = default;
};

using Argument = std::variant<NodeRef, Literal, ShapeLiteral>;

// Attr scalars keep the wire distinction between integers and floats so
// re-serialization is byte-stable and CSE keys stay exact.
using AttrValue = std::variant<int64_t, double, std::vector<int64_t>>;
using AttrMap = std::map<std::string, AttrValue>;

enum class NodeKind { Placeholder, Constant, CallOp, Output };

std::string to_string(NodeKind k);
NodeKind node_kind_from_string(const std::string& s);

struct GraphNode {
  std::string id;
  NodeKind kind = NodeKind::CallOp;
  std::string op_name;  // empty unless kind == CallOp
  std::vector<Argument> args;
  AttrMap attrs;

  bool operator==(const GraphNode&) const = default;
};

struct ConstantEntry {
  std::string identity_token;  // physical-payload identity; equal tokens mean one tensor
  TensorValue value;
  Dtype dtype = Dtype::F64;

  bool operator==(const ConstantEntry&) const = default;
};

// Computation graph. Insertion order of `nodes` is the topological order;
// validate() enforces that arguments only reference earlier nodes.
struct Graph {
  std::string name;
  std::vector<GraphNode> nodes;
  std::map<std::string, ConstantEntry> constants;  // node id -> payload
  std::map<std::string, std::string> tied_map;     // alias id -> canonical constant id
  std::vector<std::string> input_ids;              // placeholder ids bound at run time

  bool operator==(const Graph&) const = default;

  const GraphNode* find_node(const std::string& id) const;
  GraphNode* find_node(const std::string& id);
  int64_t node_index(const std::string& id) const;  // -1 if absent

  // node id -> ids of nodes whose args reference it (insertion order).
  std::unordered_map<std::string, std::vector<std::string>> consumers() const;

  const GraphNode& output_node() const;  // throws FormatError if absent
};

// Structural checks; returns one message per violation, empty when valid.
std::vector<std::string> validate(const Graph& g);

// Throws FormatError listing the violations when validate() is non-empty.
void validate_or_throw(const Graph& g);

// Node ids in dependency order. Insertion order is returned verbatim after
// confirming every edge points backward; a forward edge raises FormatError.
std::vector<std::string> topological_order(const Graph& g);

// Collapses constants that share an identity token (first occurrence wins)
// and applies pre-recorded tied_map entries: consumer refs are rewritten to
// the canonical id, alias nodes and payloads are dropped, and the alias ->
// canonical mapping is recorded. Idempotent. An alias chain that never
// reaches a stored payload raises FormatError.
Graph resolve_tied_weights(const Graph& g);

}  // namespace forge
