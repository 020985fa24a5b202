#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "forge/graph.hpp"
#include "forge/tensor.hpp"

namespace forge {

struct EvalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Runtime argument to a kernel: a materialized tensor, a scalar literal,
// or a shape literal.
using ArgValue = std::variant<TensorValue, double, std::vector<int64_t>>;

// Single kernel dispatch shared by the graph interpreter and the compiled
// executor. Fused kernels call the same primitive routines as their
// unfused counterparts. Throws EvalError on arity/shape violations.
TensorValue eval_op(const std::string& op, const std::vector<ArgValue>& args,
                    const AttrMap& attrs);

// Reference evaluation: walks the graph in topological order and returns
// the output node's value. Placeholders are taken from `bindings`; a
// missing binding raises EvalError naming the placeholder. Constant refs
// follow tied_map aliases when the payload was deduplicated.
TensorValue interpret(const Graph& g,
                      const std::map<std::string, TensorValue>& bindings);

// Largest elementwise |a - b|. Shapes must match exactly.
double max_abs_diff(const TensorValue& a, const TensorValue& b);

// Treats the last axis as logits: KL(softmax(a) || softmax(b)) averaged
// over the leading rows, with q floored at 1e-300.
double kl_divergence(const TensorValue& a, const TensorValue& b);

}  // namespace forge
