#pragma once

#include <set>
#include <string>

namespace forge {

// Closed operator vocabulary. validate() rejects anything outside it and
// lowering refuses to route unknown kernels.
bool is_known_op(const std::string& op);

// Fusion products. fused_sdpa is the attention kernel; the rest come out
// of operator fusion.
bool is_fused_op(const std::string& op);
bool is_attention_fused_op(const std::string& op);

// Ops counted into the cost model's linear fraction: linear, matmul,
// fused_linear_*, fused_mm_add.
bool is_linear_class_op(const std::string& op);

// Activations that pair with linear for operator fusion.
bool is_fusable_activation(const std::string& op);
std::string fused_linear_op_for(const std::string& activation);

// Default NPU-eligible kernel set; everything else runs on host.
const std::set<std::string>& default_npu_eligible();

}  // namespace forge
