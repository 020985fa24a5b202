#pragma once

#include <string>

#include "forge/graph.hpp"

namespace forge {

// Graph -> interchange JSON. Key order and number formatting are stable:
// serialize(deserialize(serialize(g))) is byte-identical to serialize(g).
// The graph must validate.
std::string serialize(const Graph& g);

// Interchange JSON -> Graph. Rejects malformed documents, unknown keys,
// unknown op names, and dangling references with a FormatError naming the
// offending location. The result validates.
Graph deserialize(const std::string& text);

Graph load_graph_file(const std::string& path);
void save_graph_file(const Graph& g, const std::string& path);

}  // namespace forge
