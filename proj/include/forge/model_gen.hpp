#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "forge/graph.hpp"

namespace forge {

enum class AttnType { Mha, Gqa };
enum class Activation { Relu, Gelu, Silu };

std::string to_string(AttnType a);
std::string to_string(Activation a);

struct ModelSpec {
  std::string name = "model";
  int layers = 1;
  int hidden = 16;
  int seq = 8;
  AttnType attn_type = AttnType::Mha;
  Activation activation = Activation::Gelu;
  bool with_mask = true;
  bool with_dropout = false;
  bool tie_projection = false;
  uint64_t seed = 42;
  // Injection knobs so DCE/CSE have measurable work on demand.
  int dead_nodes = 0;
  int duplicate_subexprs = 0;
};

// Node-count arithmetic for the generated graph, kept in one place so tests
// can assert exact structure.
//
// Per layer: 3 weight-staging contiguous + 3 QKV linear + transpose(K)
//   + attention chain (matmul, div_scalar, [mask add], softmax, [dropout],
//   matmul) + residual add + linear + activation + linear + residual add.
// Around the stack: input placeholder, input/output projections, output
// node. Injection adds 1 node per dead_nodes and 3 per duplicate pair.
int64_t call_ops_per_layer(const ModelSpec& spec);
int64_t attention_chain_length(const ModelSpec& spec);
int64_t expected_call_ops(const ModelSpec& spec);
int64_t expected_constant_count(const ModelSpec& spec);
int64_t expected_node_count(const ModelSpec& spec);  // all kinds

// Deterministic synthetic transformer stack (decoder-style blocks of QKV
// projection, decomposed scaled-dot-product attention, and a two-linear
// FFN). Weights come from a seeded generator scaled by 1/sqrt(hidden).
// tie_projection gives the input and output projections one identity token.
// The result validates; serialization is byte-identical per seed.
Graph generate(const ModelSpec& spec);

// Desk-scale presets mirroring well-known decoder families: gpt2-toy,
// granite-toy, qwen2-toy, llama32-toy, lfm2-toy, llama31-toy.
const std::vector<ModelSpec>& paper_presets();
ModelSpec preset(const std::string& name);  // throws std::invalid_argument

}  // namespace forge
