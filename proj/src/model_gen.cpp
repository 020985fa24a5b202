#include "forge/model_gen.hpp"

#include <cmath>
#include <stdexcept>

namespace forge {

namespace {

// Deterministic cross-platform generator (splitmix64); stdlib distributions
// vary between implementations.
struct SplitMix64 {
  uint64_t state;
  explicit SplitMix64(uint64_t seed) : state(seed) {}
  uint64_t next() {
    state += 0x9E3779B97F4A7C15ull;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }
  double uniform() {  // [0, 1)
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
  }
  double symmetric(double scale) { return (2.0 * uniform() - 1.0) * scale; }
};

class Builder {
 public:
  explicit Builder(const ModelSpec& spec)
      : spec_(spec), rng_(spec.seed), scale_(1.0 / std::sqrt(spec.hidden)) {
    g_.name = spec.name;
  }

  Graph build() {
    const int64_t d = spec_.hidden;
    const int64_t s = spec_.seq;

    GraphNode input;
    input.id = "x";
    input.kind = NodeKind::Placeholder;
    input.attrs["shape"] = std::vector<int64_t>{s, d};
    g_.nodes.push_back(std::move(input));
    g_.input_ids.push_back("x");

    TensorValue proj = random_tensor({d, d});
    add_constant("in_proj_w", proj, "phys:in_proj_w");
    std::string cur = call("in_proj", "linear", {ref("x"), ref("in_proj_w")});

    if (spec_.with_mask) add_constant("causal_mask", causal_mask(s), "phys:causal_mask");

    for (int layer = 0; layer < spec_.layers; ++layer) cur = block(layer, cur);

    // The output projection reuses the input projection's payload when the
    // spec ties them, mirroring shared embedding/readout weights.
    add_constant("out_proj_w", spec_.tie_projection ? proj : random_tensor({d, d}),
                 spec_.tie_projection ? "phys:in_proj_w" : "phys:out_proj_w");
    cur = call("out_proj", "linear", {ref(cur), ref("out_proj_w")});

    for (int i = 0; i < spec_.duplicate_subexprs; ++i) {
      std::string stem = "dup" + std::to_string(i);
      std::string a = call(stem + "_a", "mul", {ref(cur), Literal{0.5}});
      std::string b = call(stem + "_b", "mul", {ref(cur), Literal{0.5}});
      cur = call(stem + "_sum", "add", {ref(a), ref(b)});
    }
    for (int i = 0; i < spec_.dead_nodes; ++i)
      call("dead" + std::to_string(i), "relu", {ref(cur)});

    GraphNode output;
    output.id = "out";
    output.kind = NodeKind::Output;
    output.args = {ref(cur)};
    g_.nodes.push_back(std::move(output));
    return std::move(g_);
  }

 private:
  static Argument ref(const std::string& id) { return NodeRef{id}; }

  TensorValue random_tensor(std::vector<int64_t> shape) {
    TensorValue t = TensorValue::zeros(std::move(shape));
    for (auto& v : t.data) v = rng_.symmetric(scale_);
    return t;
  }

  static TensorValue causal_mask(int64_t s) {
    TensorValue m = TensorValue::zeros({s, s});
    for (int64_t i = 0; i < s; ++i)
      for (int64_t j = i + 1; j < s; ++j) m.data[i * s + j] = -1e9;
    return m;
  }

  void add_constant(const std::string& id, TensorValue value,
                    const std::string& token) {
    GraphNode n;
    n.id = id;
    n.kind = NodeKind::Constant;
    g_.nodes.push_back(std::move(n));
    g_.constants[id] = ConstantEntry{token, std::move(value), Dtype::F64};
  }

  std::string call(const std::string& id, const std::string& op,
                   std::vector<Argument> args, AttrMap attrs = {}) {
    GraphNode n;
    n.id = id;
    n.kind = NodeKind::CallOp;
    n.op_name = op;
    n.args = std::move(args);
    n.attrs = std::move(attrs);
    g_.nodes.push_back(std::move(n));
    return id;
  }

  // Projection weights are staged through explicit host-side layout
  // normalization before NPU dispatch, like traced weight-prep ops.
  std::string staged_weight(const std::string& id, const TensorValue& w) {
    add_constant(id, w, "phys:" + id);
    return call(id + "_stage", "contiguous", {ref(id)});
  }

  std::string block(int layer, const std::string& x) {
    const int64_t d = spec_.hidden;
    const int64_t ffn = 4 * d;
    const std::string p = "l" + std::to_string(layer) + "_";
    AttrMap qk_attrs;
    if (spec_.attn_type == AttnType::Gqa) qk_attrs["gqa_groups"] = int64_t{2};

    std::string wq = staged_weight(p + "wq", random_tensor({d, d}));
    add_constant(p + "bq", random_tensor({d}), "phys:" + p + "bq");
    std::string q = call(p + "q", "linear", {ref(x), ref(wq), ref(p + "bq")});

    std::string wk = staged_weight(p + "wk", random_tensor({d, d}));
    add_constant(p + "bk", random_tensor({d}), "phys:" + p + "bk");
    std::string k = call(p + "k", "linear", {ref(x), ref(wk), ref(p + "bk")});

    std::string wv = staged_weight(p + "wv", random_tensor({d, d}));
    add_constant(p + "bv", random_tensor({d}), "phys:" + p + "bv");
    std::string v = call(p + "v", "linear", {ref(x), ref(wv), ref(p + "bv")});

    std::string kt = call(p + "kt", "transpose", {ref(k)},
                          {{"dims", std::vector<int64_t>{-2, -1}}});
    std::string scores = call(p + "scores", "matmul", {ref(q), ref(kt)}, qk_attrs);
    std::string cur = call(p + "scaled", "div_scalar",
                           {ref(scores), Literal{std::sqrt(double(d))}});
    if (spec_.with_mask)
      cur = call(p + "masked", "add", {ref(cur), ref("causal_mask")});
    cur = call(p + "probs", "softmax", {ref(cur)}, {{"axis", int64_t{-1}}});
    if (spec_.with_dropout)
      cur = call(p + "drop", "dropout", {ref(cur)}, {{"p", 0.1}});
    std::string attn = call(p + "attn", "matmul", {ref(cur), ref(v)});
    std::string res1 = call(p + "res1", "add", {ref(attn), ref(x)});

    add_constant(p + "w1", random_tensor({ffn, d}), "phys:" + p + "w1");
    add_constant(p + "b1", random_tensor({ffn}), "phys:" + p + "b1");
    std::string h1 =
        call(p + "ffn1", "linear", {ref(res1), ref(p + "w1"), ref(p + "b1")});
    std::string act = call(p + "act", activation_name(), {ref(h1)});
    add_constant(p + "w2", random_tensor({d, ffn}), "phys:" + p + "w2");
    add_constant(p + "b2", random_tensor({d}), "phys:" + p + "b2");
    std::string h2 =
        call(p + "ffn2", "linear", {ref(act), ref(p + "w2"), ref(p + "b2")});
    return call(p + "res2", "add", {ref(h2), ref(res1)});
  }

  std::string activation_name() const {
    switch (spec_.activation) {
      case Activation::Relu: return "relu";
      case Activation::Gelu: return "gelu";
      case Activation::Silu: return "silu";
    }
    return "gelu";
  }

  ModelSpec spec_;
  Graph g_;
  SplitMix64 rng_;
  double scale_;
};

}  // namespace

std::string to_string(AttnType a) { return a == AttnType::Mha ? "mha" : "gqa"; }

std::string to_string(Activation a) {
  switch (a) {
    case Activation::Relu: return "relu";
    case Activation::Gelu: return "gelu";
    case Activation::Silu: return "silu";
  }
  return "gelu";
}

int64_t attention_chain_length(const ModelSpec& spec) {
  return 4 + (spec.with_mask ? 1 : 0) + (spec.with_dropout ? 1 : 0);
}

int64_t call_ops_per_layer(const ModelSpec& spec) {
  // 3 weight staging + 3 projections + transpose + chain + 2 residual adds
  // + linear/activation/linear.
  return 3 + 3 + 1 + attention_chain_length(spec) + 2 + 3;
}

int64_t expected_call_ops(const ModelSpec& spec) {
  return spec.layers * call_ops_per_layer(spec) + 2 /* in/out projection */ +
         3 * spec.duplicate_subexprs + spec.dead_nodes;
}

int64_t expected_constant_count(const ModelSpec& spec) {
  return 10 * spec.layers + 2 + (spec.with_mask ? 1 : 0);
}

int64_t expected_node_count(const ModelSpec& spec) {
  return expected_call_ops(spec) + expected_constant_count(spec) +
         1 /* input placeholder */ + 1 /* output */;
}

Graph generate(const ModelSpec& spec) {
  if (spec.layers < 1 || spec.hidden < 2 || spec.seq < 1)
    throw std::invalid_argument("model spec out of range");
  if (spec.hidden > 64 || int64_t(spec.seq) * spec.hidden > 4096)
    throw std::invalid_argument("model spec exceeds desk scale");
  Graph g = Builder(spec).build();
  validate_or_throw(g);
  return g;
}

const std::vector<ModelSpec>& paper_presets() {
  static const std::vector<ModelSpec> presets = [] {
    std::vector<ModelSpec> p;
    ModelSpec gpt2;
    gpt2.name = "gpt2-toy";
    gpt2.layers = 12;
    gpt2.hidden = 12;
    gpt2.seq = 8;
    gpt2.attn_type = AttnType::Mha;
    gpt2.activation = Activation::Gelu;
    gpt2.tie_projection = true;
    gpt2.seed = 0x67507432;
    p.push_back(gpt2);

    ModelSpec granite;
    granite.name = "granite-toy";
    granite.layers = 24;
    granite.hidden = 16;
    granite.seq = 8;
    granite.attn_type = AttnType::Mha;
    granite.activation = Activation::Gelu;
    granite.seed = 0x6772616E;
    p.push_back(granite);

    ModelSpec qwen2;
    qwen2.name = "qwen2-toy";
    qwen2.layers = 24;
    qwen2.hidden = 16;
    qwen2.seq = 8;
    qwen2.attn_type = AttnType::Gqa;
    qwen2.activation = Activation::Silu;
    qwen2.seed = 0x7177656E;
    p.push_back(qwen2);

    ModelSpec llama32;
    llama32.name = "llama32-toy";
    llama32.layers = 16;
    llama32.hidden = 32;
    llama32.seq = 8;
    llama32.attn_type = AttnType::Gqa;
    llama32.activation = Activation::Silu;
    llama32.seed = 0x6C6C3332;
    p.push_back(llama32);

    ModelSpec lfm2;
    lfm2.name = "lfm2-toy";
    lfm2.layers = 32;
    lfm2.hidden = 40;
    lfm2.seq = 8;
    lfm2.attn_type = AttnType::Mha;
    lfm2.activation = Activation::Silu;
    lfm2.seed = 0x6C666D32;
    p.push_back(lfm2);

    ModelSpec llama31;
    llama31.name = "llama31-toy";
    llama31.layers = 32;
    llama31.hidden = 64;
    llama31.seq = 8;
    llama31.attn_type = AttnType::Gqa;
    llama31.activation = Activation::Silu;
    llama31.seed = 0x6C6C3331;
    p.push_back(llama31);
    return p;
  }();
  return presets;
}

ModelSpec preset(const std::string& name) {
  for (const auto& p : paper_presets())
    if (p.name == name) return p;
  throw std::invalid_argument("unknown preset: " + name);
}

}  // namespace forge
