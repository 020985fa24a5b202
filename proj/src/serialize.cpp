#include "forge/serialize.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "forge/ops.hpp"

namespace forge {

namespace {

using json = nlohmann::ordered_json;

json arg_to_json(const Argument& a) {
  json j = json::object();
  if (const auto* ref = std::get_if<NodeRef>(&a)) {
    j["ref"] = ref->id;
  } else if (const auto* lit = std::get_if<Literal>(&a)) {
    j["lit"] = lit->value;
  } else {
    j["shape"] = std::get<ShapeLiteral>(a).dims;
  }
  return j;
}

json attr_to_json(const AttrValue& v) {
  if (const auto* i = std::get_if<int64_t>(&v)) return *i;
  if (const auto* d = std::get_if<double>(&v)) return *d;
  return std::get<std::vector<int64_t>>(v);
}

void expect_keys(const json& obj, const std::vector<std::string>& allowed,
                 const std::string& where) {
  for (const auto& item : obj.items()) {
    bool known = false;
    for (const auto& k : allowed)
      if (item.key() == k) { known = true; break; }
    if (!known)
      throw FormatError(where + ": unknown key '" + item.key() + "'");
  }
}

const json& require(const json& obj, const std::string& key,
                    const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end())
    throw FormatError(where + ": missing key '" + key + "'");
  return *it;
}

std::string as_string(const json& j, const std::string& where) {
  if (!j.is_string()) throw FormatError(where + ": expected a string");
  return j.get<std::string>();
}

std::vector<int64_t> as_int_array(const json& j, const std::string& where) {
  if (!j.is_array()) throw FormatError(where + ": expected an array of integers");
  std::vector<int64_t> out;
  out.reserve(j.size());
  for (const auto& e : j) {
    if (!e.is_number_integer())
      throw FormatError(where + ": expected an integer element");
    out.push_back(e.get<int64_t>());
  }
  return out;
}

Argument arg_from_json(const json& j, const std::string& where) {
  if (!j.is_object() || j.size() != 1)
    throw FormatError(where + ": argument must be a single-key object");
  if (j.contains("ref")) return NodeRef{as_string(j["ref"], where)};
  if (j.contains("lit")) {
    if (!j["lit"].is_number())
      throw FormatError(where + ": 'lit' must be a number");
    return Literal{j["lit"].get<double>()};
  }
  if (j.contains("shape")) return ShapeLiteral{as_int_array(j["shape"], where)};
  throw FormatError(where + ": unknown argument encoding");
}

AttrValue attr_from_json(const json& j, const std::string& where) {
  if (j.is_number_integer()) return j.get<int64_t>();
  if (j.is_number_float()) return j.get<double>();
  if (j.is_array()) return as_int_array(j, where);
  throw FormatError(where + ": attr must be a number or integer array");
}

}  // namespace

std::string serialize(const Graph& g) {
  validate_or_throw(g);

  json doc = json::object();
  doc["name"] = g.name;

  json nodes = json::array();
  for (const auto& n : g.nodes) {
    json jn = json::object();
    jn["id"] = n.id;
    jn["kind"] = to_string(n.kind);
    jn["op"] = n.op_name;
    json args = json::array();
    for (const auto& a : n.args) args.push_back(arg_to_json(a));
    jn["args"] = std::move(args);
    json attrs = json::object();
    for (const auto& [k, v] : n.attrs) attrs[k] = attr_to_json(v);
    jn["attrs"] = std::move(attrs);
    nodes.push_back(std::move(jn));
  }
  doc["nodes"] = std::move(nodes);

  json constants = json::array();
  for (const auto& [id, entry] : g.constants) {
    json jc = json::object();
    jc["id"] = id;
    jc["identity_token"] = entry.identity_token;
    jc["shape"] = entry.value.shape;
    jc["dtype"] = to_string(entry.dtype);
    jc["data"] = entry.value.data;
    constants.push_back(std::move(jc));
  }
  doc["constants"] = std::move(constants);

  doc["inputs"] = g.input_ids;

  json tied = json::array();
  for (const auto& [alias, canonical] : g.tied_map)
    tied.push_back(json::array({alias, canonical}));
  doc["tied"] = std::move(tied);

  return doc.dump();
}

Graph deserialize(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("malformed document: ") + e.what());
  }
  if (!doc.is_object()) throw FormatError("document root must be an object");
  expect_keys(doc, {"name", "nodes", "constants", "inputs", "tied"}, "document");

  Graph g;
  g.name = as_string(require(doc, "name", "document"), "name");

  const json& nodes = require(doc, "nodes", "document");
  if (!nodes.is_array()) throw FormatError("'nodes' must be an array");
  for (const auto& jn : nodes) {
    if (!jn.is_object()) throw FormatError("node entry must be an object");
    const std::string where =
        "node '" + (jn.contains("id") && jn["id"].is_string()
                        ? jn["id"].get<std::string>()
                        : std::string("?")) + "'";
    expect_keys(jn, {"id", "kind", "op", "args", "attrs"}, where);
    GraphNode n;
    n.id = as_string(require(jn, "id", where), where + ".id");
    n.kind = node_kind_from_string(
        as_string(require(jn, "kind", where), where + ".kind"));
    n.op_name = as_string(require(jn, "op", where), where + ".op");
    const json& args = require(jn, "args", where);
    if (!args.is_array()) throw FormatError(where + ": 'args' must be an array");
    for (const auto& ja : args) n.args.push_back(arg_from_json(ja, where));
    const json& attrs = require(jn, "attrs", where);
    if (!attrs.is_object())
      throw FormatError(where + ": 'attrs' must be an object");
    for (const auto& item : attrs.items())
      n.attrs[item.key()] =
          attr_from_json(item.value(), where + ".attrs." + item.key());
    g.nodes.push_back(std::move(n));
  }

  const json& constants = require(doc, "constants", "document");
  if (!constants.is_array()) throw FormatError("'constants' must be an array");
  for (const auto& jc : constants) {
    if (!jc.is_object()) throw FormatError("constant entry must be an object");
    const std::string where =
        "constant '" + (jc.contains("id") && jc["id"].is_string()
                            ? jc["id"].get<std::string>()
                            : std::string("?")) + "'";
    expect_keys(jc, {"id", "identity_token", "shape", "dtype", "data"}, where);
    std::string id = as_string(require(jc, "id", where), where + ".id");
    ConstantEntry entry;
    entry.identity_token = as_string(require(jc, "identity_token", where),
                                     where + ".identity_token");
    entry.dtype = dtype_from_string(
        as_string(require(jc, "dtype", where), where + ".dtype"));
    auto shape = as_int_array(require(jc, "shape", where), where + ".shape");
    const json& data = require(jc, "data", where);
    if (!data.is_array()) throw FormatError(where + ": 'data' must be an array");
    std::vector<double> values;
    values.reserve(data.size());
    for (const auto& e : data) {
      if (!e.is_number())
        throw FormatError(where + ": 'data' element must be a number");
      values.push_back(e.get<double>());
    }
    if (shape_numel(shape) != static_cast<int64_t>(values.size()))
      throw FormatError(where + ": data length does not match shape");
    entry.value = TensorValue(std::move(shape), std::move(values));
    if (g.constants.count(id))
      throw FormatError(where + ": duplicate constant id");
    g.constants.emplace(std::move(id), std::move(entry));
  }

  const json& inputs = require(doc, "inputs", "document");
  if (!inputs.is_array()) throw FormatError("'inputs' must be an array");
  for (const auto& ji : inputs)
    g.input_ids.push_back(as_string(ji, "inputs"));

  const json& tied = require(doc, "tied", "document");
  if (!tied.is_array()) throw FormatError("'tied' must be an array");
  for (const auto& jt : tied) {
    if (!jt.is_array() || jt.size() != 2)
      throw FormatError("'tied' entry must be an [alias, canonical] pair");
    std::string alias = as_string(jt[0], "tied");
    std::string canonical = as_string(jt[1], "tied");
    if (g.tied_map.count(alias))
      throw FormatError("tied alias '" + alias + "': duplicate entry");
    g.tied_map.emplace(std::move(alias), std::move(canonical));
  }

  validate_or_throw(g);
  return g;
}

Graph load_graph_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open graph file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize(buf.str());
}

void save_graph_file(const Graph& g, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write graph file: " + path);
  out << serialize(g);
}

}  // namespace forge
