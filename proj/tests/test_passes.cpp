#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <queue>
#include <set>
#include <unordered_set>

#include "forge/interpreter.hpp"
#include "forge/model_gen.hpp"
#include "forge/passes.hpp"
#include "helpers.hpp"

using namespace forge;
using namespace forge::test;

namespace {

PassReport run(Graph (*pass)(const Graph&, PassReport&), const Graph& g,
               Graph* out) {
  PassReport r;
  *out = pass(g, r);
  return r;
}

std::set<std::string> ids(const Graph& g) {
  std::set<std::string> s;
  for (const auto& n : g.nodes) s.insert(n.id);
  return s;
}

int64_t count_op(const Graph& g, const std::string& op) {
  int64_t c = 0;
  for (const auto& n : g.nodes)
    if (n.kind == NodeKind::CallOp && n.op_name == op) ++c;
  return c;
}

// Reachability oracle for DCE: BFS from the output through node references.
std::set<std::string> reachable_or_pinned(const Graph& g) {
  std::set<std::string> keep;
  std::queue<std::string> work;
  for (const auto& n : g.nodes) {
    if (n.kind == NodeKind::Output || n.kind == NodeKind::Placeholder) {
      keep.insert(n.id);
      if (n.kind == NodeKind::Output)
        for (const auto& a : n.args)
          if (const auto* r = std::get_if<NodeRef>(&a)) work.push(r->id);
    }
  }
  while (!work.empty()) {
    std::string id = work.front();
    work.pop();
    if (!keep.insert(id).second) continue;
    const GraphNode* n = g.find_node(id);
    if (!n) continue;
    for (const auto& a : n->args)
      if (const auto* r = std::get_if<NodeRef>(&a)) work.push(r->id);
  }
  return keep;
}

Graph with_dead_nodes(Graph g, Rng& rng, int count) {
  std::vector<std::string> targets;
  for (const auto& n : g.nodes)
    if (n.kind != NodeKind::Output) targets.push_back(n.id);
  auto out_it = g.nodes.end() - 1;
  for (int i = 0; i < count; ++i) {
    GraphNode n;
    n.id = "dead" + std::to_string(i);
    n.kind = NodeKind::CallOp;
    n.op_name = i % 2 == 0 ? "relu" : "contiguous";
    n.args = {NodeRef{targets[rng.next() % targets.size()]}};
    out_it = g.nodes.insert(out_it, std::move(n)) + 1;
  }
  return g;
}

// One decomposed attention chain over derived Q/K/V. Returns the graph and
// binds the expected pv node id to "attn<i>".
struct ChainOptions {
  bool scale = true;
  bool mul_scale = false;  // mul-by-literal instead of div_scalar
  bool mask = true;
  bool dropout = false;
};

Graph attention_graph(const ChainOptions& opt, int chains = 1) {
  const int64_t s = 4, d = 4;
  GraphBuilder b("attn");
  b.placeholder("x", {s, d});
  TensorValue mask = TensorValue::zeros({s, s});
  for (int64_t i = 0; i < s; ++i)
    for (int64_t j = i + 1; j < s; ++j) mask.data[i * s + j] = -1e9;
  if (opt.mask) b.constant("mask", mask);

  std::string cur = "x";
  for (int i = 0; i < chains; ++i) {
    std::string p = "c" + std::to_string(i) + "_";
    b.call(p + "q", "relu", {ref(cur)});
    b.call(p + "k", "gelu", {ref(cur)});
    b.call(p + "v", "silu", {ref(cur)});
    b.call(p + "kt", "transpose", {ref(p + "k")},
           {{"dims", std::vector<int64_t>{-2, -1}}});
    b.call(p + "qk", "matmul", {ref(p + "q"), ref(p + "kt")});
    std::string link = p + "qk";
    if (opt.scale) {
      if (opt.mul_scale)
        b.call(p + "scaled", "mul", {ref(link), lit(0.5)});
      else
        b.call(p + "scaled", "div_scalar", {ref(link), lit(2.0)});
      link = p + "scaled";
    }
    if (opt.mask) {
      b.call(p + "masked", "add", {ref(link), ref("mask")});
      link = p + "masked";
    }
    b.call(p + "probs", "softmax", {ref(link)}, {{"axis", int64_t{-1}}});
    link = p + "probs";
    if (opt.dropout) {
      b.call(p + "drop", "dropout", {ref(link)}, {{"p", 0.1}});
      link = p + "drop";
    }
    b.call(p + "attn", "matmul", {ref(link), ref(p + "v")});
    cur = p + "attn";
  }
  b.output(cur);
  return b.build();
}

TensorValue sample_input() {
  Rng rng(31);
  return random_tensor(rng, {4, 4});
}

}  // namespace

TEST_CASE("dce erases exactly the unreachable non-placeholder nodes") {
  Rng rng(501);
  for (int trial = 0; trial < 40; ++trial) {
    Graph g = with_dead_nodes(random_graph(rng), rng,
                              static_cast<int>(rng.range(0, 5)));
    std::set<std::string> expected = reachable_or_pinned(g);

    Graph out;
    PassReport r = run(run_dce, g, &out);
    CHECK(ids(out) == expected);
    CHECK(r.changed == (expected.size() != g.nodes.size()));
    CHECK(r.nodes_before == static_cast<int64_t>(g.nodes.size()));
    CHECK(r.nodes_after == static_cast<int64_t>(out.nodes.size()));
    CHECK(validate(out).empty());

    // Semantics: the output value is untouched.
    std::map<std::string, TensorValue> bind;
    const GraphNode& ph = g.nodes.front();
    bind[ph.id] = random_tensor(
        rng, std::get<std::vector<int64_t>>(ph.attrs.at("shape")));
    CHECK(interpret(g, bind) == interpret(out, bind));

    Graph again;
    run(run_dce, out, &again);
    CHECK(again == out);
  }
}

TEST_CASE("dce keeps unused placeholders and drops orphaned constants") {
  Graph g = GraphBuilder()
                .placeholder("x", {2})
                .placeholder("unused", {2})
                .constant("w", TensorValue({2}, {1, 2}))
                .constant("orphan", TensorValue({2}, {3, 4}))
                .call("y", "add", {ref("x"), ref("w")})
                .output("y")
                .build();
  Graph out;
  run(run_dce, g, &out);
  CHECK(out.find_node("unused") != nullptr);
  CHECK(out.find_node("orphan") == nullptr);
  CHECK(out.constants.count("orphan") == 0);
  CHECK(out.constants.count("w") == 1);
}

TEST_CASE("cse merges repeated expressions into the first occurrence") {
  Graph g = GraphBuilder()
                .placeholder("x", {2})
                .call("a", "relu", {ref("x")})
                .call("b", "relu", {ref("x")})
                .call("c", "add", {ref("a"), ref("b")})
                .output("c")
                .build();
  Graph out;
  PassReport r = run(run_cse, g, &out);
  CHECK(out.find_node("b") == nullptr);
  const GraphNode* c = out.find_node("c");
  REQUIRE(c);
  CHECK(std::get<NodeRef>(c->args[0]).id == "a");
  CHECK(std::get<NodeRef>(c->args[1]).id == "a");
  CHECK(r.changed);

  std::map<std::string, TensorValue> bind{{"x", TensorValue({2}, {-1, 2})}};
  CHECK(interpret(g, bind) == interpret(out, bind));
}

TEST_CASE("cse cascades through dependent duplicates in one run") {
  Graph g = GraphBuilder()
                .placeholder("x", {2})
                .call("a1", "relu", {ref("x")})
                .call("a2", "relu", {ref("x")})
                .call("b1", "gelu", {ref("a1")})
                .call("b2", "gelu", {ref("a2")})
                .call("sum", "add", {ref("b1"), ref("b2")})
                .output("sum")
                .build();
  Graph out;
  run(run_cse, g, &out);
  CHECK(out.find_node("a2") == nullptr);
  CHECK(out.find_node("b2") == nullptr);
  CHECK(count_op(out, "gelu") == 1);
}

TEST_CASE("cse distinguishes attrs, literal bits, and operand order") {
  SUBCASE("different attrs") {
    Graph g = GraphBuilder()
                  .placeholder("x", {2, 2})
                  .call("a", "softmax", {ref("x")}, {{"axis", int64_t{-1}}})
                  .call("b", "softmax", {ref("x")}, {{"axis", int64_t{0}}})
                  .call("c", "add", {ref("a"), ref("b")})
                  .output("c")
                  .build();
    Graph out;
    PassReport r = run(run_cse, g, &out);
    CHECK_FALSE(r.changed);
    CHECK(out == g);
  }
  SUBCASE("different literal bits") {
    Graph g = GraphBuilder()
                  .placeholder("x", {2})
                  .call("a", "div_scalar", {ref("x"), lit(2.0)})
                  .call("b", "div_scalar", {ref("x"), lit(2.0000000001)})
                  .call("c", "add", {ref("a"), ref("b")})
                  .output("c")
                  .build();
    Graph out;
    PassReport r = run(run_cse, g, &out);
    CHECK_FALSE(r.changed);
  }
  SUBCASE("no commutative canonicalization") {
    Graph g = GraphBuilder()
                  .placeholder("x", {2})
                  .call("a", "relu", {ref("x")})
                  .call("s1", "add", {ref("x"), ref("a")})
                  .call("s2", "add", {ref("a"), ref("x")})
                  .call("c", "mul", {ref("s1"), ref("s2")})
                  .output("c")
                  .build();
    Graph out;
    PassReport r = run(run_cse, g, &out);
    CHECK_FALSE(r.changed);
  }
}

TEST_CASE("cse leaves no duplicate call keys behind") {
  Rng rng(777);
  for (int trial = 0; trial < 40; ++trial) {
    Graph g = random_graph(rng);
    // Duplicate a random call node and consume both copies.
    std::vector<size_t> call_idx;
    for (size_t i = 0; i < g.nodes.size(); ++i)
      if (g.nodes[i].kind == NodeKind::CallOp) call_idx.push_back(i);
    size_t pick = call_idx[rng.next() % call_idx.size()];
    GraphNode dup = g.nodes[pick];
    dup.id = "dup0";
    GraphNode join;
    join.id = "join0";
    join.kind = NodeKind::CallOp;
    join.op_name = "add";
    join.args = {NodeRef{g.nodes[pick].id}, NodeRef{dup.id}};
    GraphNode out_node = g.nodes.back();
    g.nodes.pop_back();
    out_node.args = {NodeRef{join.id}};
    g.nodes.push_back(std::move(dup));
    g.nodes.push_back(std::move(join));
    g.nodes.push_back(std::move(out_node));
    REQUIRE(validate(g).empty());

    Graph out;
    run(run_cse, g, &out);
    CHECK(out.find_node("dup0") == nullptr);
    for (size_t i = 0; i < out.nodes.size(); ++i)
      for (size_t j = i + 1; j < out.nodes.size(); ++j) {
        const GraphNode& a = out.nodes[i];
        const GraphNode& b = out.nodes[j];
        if (a.kind != NodeKind::CallOp || b.kind != NodeKind::CallOp) continue;
        bool same = a.op_name == b.op_name && a.args == b.args && a.attrs == b.attrs;
        CHECK_FALSE(same);
      }

    std::map<std::string, TensorValue> bind;
    const GraphNode& ph = g.nodes.front();
    bind[ph.id] = random_tensor(
        rng, std::get<std::vector<int64_t>>(ph.attrs.at("shape")));
    CHECK(interpret(g, bind) == interpret(out, bind));
  }
}

TEST_CASE("constant folding removes identities and evaluates literal ops") {
  SUBCASE("identity folds, literal second only") {
    Graph g = GraphBuilder()
                  .placeholder("x", {2})
                  .call("a", "add", {ref("x"), lit(0.0)})
                  .call("b", "mul", {ref("a"), lit(1.0)})
                  .call("c", "div_scalar", {ref("b"), lit(1.0)})
                  .call("d", "relu", {ref("c")})
                  .output("d")
                  .build();
    Graph out;
    PassReport r = run(run_constant_folding, g, &out);
    CHECK(r.changed);
    CHECK(out.find_node("a") == nullptr);
    CHECK(out.find_node("b") == nullptr);
    CHECK(out.find_node("c") == nullptr);
    const GraphNode* d = out.find_node("d");
    REQUIRE(d);
    CHECK(std::get<NodeRef>(d->args[0]).id == "x");

    std::map<std::string, TensorValue> bind{{"x", TensorValue({2}, {-3, 4})}};
    CHECK(interpret(g, bind) == interpret(out, bind));
  }
  SUBCASE("nonzero literals are not identities") {
    Graph g = GraphBuilder()
                  .placeholder("x", {2})
                  .call("a", "add", {ref("x"), lit(0.5)})
                  .call("b", "mul", {ref("a"), lit(-1.0)})
                  .output("b")
                  .build();
    Graph out;
    PassReport r = run(run_constant_folding, g, &out);
    CHECK_FALSE(r.changed);
    CHECK(out == g);
  }
  SUBCASE("all-literal subtrees cascade in one run") {
    Graph g = GraphBuilder()
                  .placeholder("x", {2})
                  .call("five", "add", {lit(2.0), lit(3.0)})
                  .call("twenty", "mul", {ref("five"), lit(4.0)})
                  .call("y", "add", {ref("x"), ref("twenty")})
                  .output("y")
                  .build();
    Graph out;
    PassReport r = run(run_constant_folding, g, &out);
    CHECK(r.changed);
    CHECK(out.find_node("five") == nullptr);
    CHECK(out.find_node("twenty") == nullptr);
    const GraphNode* y = out.find_node("y");
    REQUIRE(y);
    CHECK(std::get<Literal>(y->args[1]).value == 20.0);

    std::map<std::string, TensorValue> bind{{"x", TensorValue({2}, {1, 2})}};
    CHECK(interpret(g, bind) == interpret(out, bind));
  }
  SUBCASE("a literal node consumed by the output is kept") {
    Graph g = GraphBuilder()
                  .placeholder("x", {2})
                  .call("k", "add", {lit(1.0), lit(2.0)})
                  .output("k")
                  .build();
    Graph out;
    run(run_constant_folding, g, &out);
    CHECK(out.find_node("k") != nullptr);
    CHECK(validate(out).empty());
  }
  SUBCASE("idempotent") {
    Graph g = GraphBuilder()
                  .placeholder("x", {2})
                  .call("a", "add", {ref("x"), lit(0.0)})
                  .call("five", "add", {lit(2.0), lit(3.0)})
                  .call("y", "mul", {ref("a"), ref("five")})
                  .output("y")
                  .build();
    Graph once, twice;
    run(run_constant_folding, g, &once);
    PassReport r2 = run(run_constant_folding, once, &twice);
    CHECK_FALSE(r2.changed);
    CHECK(twice == once);
  }
}

TEST_CASE("attention pattern matcher recognizes every optional layout") {
  for (bool scale : {true, false})
    for (bool mask : {true, false})
      for (bool dropout : {true, false}) {
        CAPTURE(scale);
        CAPTURE(mask);
        CAPTURE(dropout);
        ChainOptions opt;
        opt.scale = scale;
        opt.mask = mask;
        opt.dropout = dropout;
        Graph g = attention_graph(opt);
        auto chain = match_attention_pattern(g, "c0_qk");
        REQUIRE(chain.has_value());
        CHECK(chain->qk_matmul == "c0_qk");
        CHECK(chain->pv_matmul == "c0_attn");
        CHECK(chain->softmax == "c0_probs");
        CHECK(chain->scale.has_value() == scale);
        CHECK(chain->mask_add.has_value() == mask);
        CHECK(chain->dropout.has_value() == dropout);
        CHECK(chain->mask.has_value() == mask);
        CHECK(chain->length() == 3 + (scale ? 1 : 0) + (mask ? 1 : 0) +
                                     (dropout ? 1 : 0));
        CHECK(std::get<NodeRef>(chain->query).id == "c0_q");
        CHECK(std::get<NodeRef>(chain->key_raw).id == "c0_kt");
        CHECK(std::get<NodeRef>(chain->value).id == "c0_v");
        if (scale) CHECK(chain->scale_multiplier == 0.5);  // div by 2.0
        if (!scale) CHECK(chain->scale_multiplier == 1.0);
      }
}

TEST_CASE("attention matcher captures mul-by-literal scaling") {
  ChainOptions opt;
  opt.mul_scale = true;
  Graph g = attention_graph(opt);
  auto chain = match_attention_pattern(g, "c0_qk");
  REQUIRE(chain.has_value());
  CHECK(chain->scale_multiplier == 0.5);
}

TEST_CASE("attention matcher rejects broken chains") {
  SUBCASE("interior node with a second consumer") {
    ChainOptions opt;
    Graph g = attention_graph(opt);
    GraphNode tap;
    tap.id = "tap";
    tap.kind = NodeKind::CallOp;
    tap.op_name = "relu";
    tap.args = {NodeRef{"c0_probs"}};
    g.nodes.insert(g.nodes.end() - 1, tap);
    CHECK_FALSE(match_attention_pattern(g, "c0_qk").has_value());
  }
  SUBCASE("missing softmax") {
    Graph g = GraphBuilder()
                  .placeholder("x", {4, 4})
                  .call("q", "relu", {ref("x")})
                  .call("k", "gelu", {ref("x")})
                  .call("v", "silu", {ref("x")})
                  .call("kt", "transpose", {ref("k")})
                  .call("qk", "matmul", {ref("q"), ref("kt")})
                  .call("attn", "matmul", {ref("qk"), ref("v")})
                  .output("attn")
                  .build();
    CHECK_FALSE(match_attention_pattern(g, "qk").has_value());
  }
  SUBCASE("division by literal zero") {
    Graph g = GraphBuilder()
                  .placeholder("x", {4, 4})
                  .call("q", "relu", {ref("x")})
                  .call("k", "gelu", {ref("x")})
                  .call("v", "silu", {ref("x")})
                  .call("kt", "transpose", {ref("k")})
                  .call("qk", "matmul", {ref("q"), ref("kt")})
                  .call("scaled", "div_scalar", {ref("qk"), lit(0.0)})
                  .call("probs", "softmax", {ref("scaled")})
                  .call("attn", "matmul", {ref("probs"), ref("v")})
                  .output("attn")
                  .build();
    CHECK_FALSE(match_attention_pattern(g, "qk").has_value());
  }
  SUBCASE("starting at a non-matmul") {
    Graph g = attention_graph(ChainOptions{});
    CHECK_FALSE(match_attention_pattern(g, "c0_probs").has_value());
  }
}

TEST_CASE("unwrap_transpose accepts last-two-axis swaps only") {
  Graph g = GraphBuilder()
                .placeholder("x", {2, 3})
                .call("t1", "transpose", {ref("x")},
                      {{"dims", std::vector<int64_t>{-2, -1}}})
                .call("t2", "transpose", {ref("x")},
                      {{"dims", std::vector<int64_t>{2, 3}}})
                .call("t3", "transpose", {ref("x")},
                      {{"dims", std::vector<int64_t>{0, 2}}})
                .call("t4", "transpose", {ref("x")})
                .call("c", "contiguous", {ref("x")})
                .call("join", "add", {ref("t1"), ref("t2")})
                .call("join2", "add", {ref("t3"), ref("t4")})
                .call("join3", "add", {ref("join"), ref("join2")})
                .call("join4", "add", {ref("join3"), ref("c")})
                .output("join4")
                .build();
  CHECK(unwrap_transpose(g, "t1") == std::optional<std::string>("x"));
  CHECK(unwrap_transpose(g, "t2") == std::optional<std::string>("x"));
  CHECK_FALSE(unwrap_transpose(g, "t3").has_value());
  // Without an explicit dims attr the swap is not provable; stay unfused.
  CHECK_FALSE(unwrap_transpose(g, "t4").has_value());
  CHECK_FALSE(unwrap_transpose(g, "c").has_value());
  CHECK_FALSE(unwrap_transpose(g, "ghost").has_value());
}

TEST_CASE("attention fusion rewrites the terminal matmul in place") {
  ChainOptions opt;
  Graph g = attention_graph(opt);
  Graph out;
  PassReport r = run(
      [](const Graph& gr, PassReport& rep) {
        return run_attention_fusion(gr, 1.0, rep);
      },
      g, &out);

  CHECK(r.changed);
  const GraphNode* fused = out.find_node("c0_attn");
  REQUIRE(fused);
  CHECK(fused->op_name == "fused_sdpa");
  REQUIRE(fused->args.size() == 5);
  CHECK(std::get<NodeRef>(fused->args[0]).id == "c0_q");
  CHECK(std::get<NodeRef>(fused->args[1]).id == "c0_k");  // unwrapped
  CHECK(std::get<NodeRef>(fused->args[2]).id == "c0_v");
  CHECK(std::get<Literal>(fused->args[3]).value == 0.5);
  CHECK(std::get<NodeRef>(fused->args[4]).id == "mask");
  CHECK(std::get<int64_t>(fused->attrs.at("fused_chain_len")) == 5);

  for (const char* gone : {"c0_qk", "c0_scaled", "c0_masked", "c0_probs"})
    CHECK(out.find_node(gone) == nullptr);
  // The transpose is orphaned, not erased; a later DCE round collects it.
  CHECK(out.find_node("c0_kt") != nullptr);
  CHECK(static_cast<int64_t>(g.nodes.size()) - static_cast<int64_t>(out.nodes.size()) == 4);
  CHECK(validate(out).empty());

  std::map<std::string, TensorValue> bind{{"x", sample_input()}};
  CHECK(max_abs_diff(interpret(g, bind), interpret(out, bind)) <= 1e-9);
}

TEST_CASE("attention fusion takes the ceil(alpha * m) first chains") {
  const int m = 5;
  struct Case { double alpha; int64_t expect; };
  for (auto [alpha, expect] : {Case{0.0, 0}, Case{0.1, 1}, Case{0.2, 1},
                               Case{0.4, 2}, Case{0.5, 3}, Case{0.8, 4},
                               Case{1.0, 5}}) {
    CAPTURE(alpha);
    Graph g = attention_graph(ChainOptions{}, m);
    Graph out;
    PassReport r;
    out = run_attention_fusion(g, alpha, r);
    CHECK(count_op(out, "fused_sdpa") == expect);
    // Chains are taken in graph order from the front.
    for (int64_t i = 0; i < m; ++i) {
      const GraphNode* pv = out.find_node("c" + std::to_string(i) + "_attn");
      REQUIRE(pv);
      CHECK((pv->op_name == "fused_sdpa") == (i < expect));
    }
    std::map<std::string, TensorValue> bind{{"x", sample_input()}};
    CHECK(max_abs_diff(interpret(g, bind), interpret(out, bind)) <= 1e-9);
  }
}

TEST_CASE("attention fusion skips chains whose key is not a transpose") {
  Graph g = GraphBuilder()
                .placeholder("x", {4, 4})
                .call("q", "relu", {ref("x")})
                .call("k", "gelu", {ref("x")})  // no transpose on the key path
                .call("v", "silu", {ref("x")})
                .call("qk", "matmul", {ref("q"), ref("k")})
                .call("probs", "softmax", {ref("qk")}, {{"axis", int64_t{-1}}})
                .call("attn", "matmul", {ref("probs"), ref("v")})
                .output("attn")
                .build();
  Graph out;
  PassReport r;
  out = run_attention_fusion(g, 1.0, r);
  CHECK_FALSE(r.changed);
  CHECK(count_op(out, "fused_sdpa") == 0);
  // An unfusable chain is excluded from the match count entirely.
  CHECK(r.details.back() == "matches 0, fused 0");
}

TEST_CASE("operator fusion combines linear+activation and matmul+add") {
  Rng rng(41);
  Graph g = GraphBuilder()
                .placeholder("x", {2, 3})
                .constant("w", random_tensor(rng, {3, 3}))
                .constant("b", random_tensor(rng, {3}))
                .constant("m", random_tensor(rng, {3, 3}))
                .constant("c", random_tensor(rng, {2, 3}))
                .call("lin", "linear", {ref("x"), ref("w"), ref("b")})
                .call("act", "gelu", {ref("lin")})
                .call("mm", "matmul", {ref("act"), ref("m")})
                .call("sum", "add", {ref("c"), ref("mm")})  // matmul in slot 1
                .output("sum")
                .build();
  Graph out;
  PassReport r;
  out = run_operator_fusion(g, 1.0, r);

  const GraphNode* fl = out.find_node("act");
  REQUIRE(fl);
  CHECK(fl->op_name == "fused_linear_gelu");
  REQUIRE(fl->args.size() == 3);
  CHECK(std::get<NodeRef>(fl->args[0]).id == "x");
  CHECK(out.find_node("lin") == nullptr);

  const GraphNode* fm = out.find_node("sum");
  REQUIRE(fm);
  CHECK(fm->op_name == "fused_mm_add");
  REQUIRE(fm->args.size() == 3);
  CHECK(std::get<NodeRef>(fm->args[0]).id == "act");
  CHECK(std::get<NodeRef>(fm->args[1]).id == "m");
  CHECK(std::get<NodeRef>(fm->args[2]).id == "c");  // addend from slot 0
  CHECK(out.find_node("mm") == nullptr);
  CHECK(std::get<int64_t>(fm->attrs.at("fused_chain_len")) == 2);

  std::map<std::string, TensorValue> bind{{"x", random_tensor(rng, {2, 3})}};
  CHECK(interpret(g, bind) == interpret(out, bind));
}

TEST_CASE("operator fusion requires a sole consumer") {
  Rng rng(43);
  SUBCASE("linear feeding two nodes stays") {
    Graph g = GraphBuilder()
                  .placeholder("x", {2, 3})
                  .constant("w", random_tensor(rng, {3, 3}))
                  .call("lin", "linear", {ref("x"), ref("w")})
                  .call("act", "relu", {ref("lin")})
                  .call("other", "gelu", {ref("lin")})
                  .call("join", "add", {ref("act"), ref("other")})
                  .output("join")
                  .build();
    Graph out;
    PassReport r;
    out = run_operator_fusion(g, 1.0, r);
    CHECK_FALSE(r.changed);
    CHECK(out.find_node("lin") != nullptr);
  }
  SUBCASE("add consuming the matmul twice stays") {
    Graph g = GraphBuilder()
                  .placeholder("x", {3, 3})
                  .constant("m", random_tensor(rng, {3, 3}))
                  .call("mm", "matmul", {ref("x"), ref("m")})
                  .call("sum", "add", {ref("mm"), ref("mm")})
                  .output("sum")
                  .build();
    Graph out;
    PassReport r;
    out = run_operator_fusion(g, 1.0, r);
    CHECK_FALSE(r.changed);
    CHECK(out.find_node("mm") != nullptr);
  }
}

TEST_CASE("operator fusion respects alpha over the match list") {
  Rng rng(47);
  GraphBuilder b;
  b.placeholder("x", {2, 3});
  std::string cur = "x";
  for (int i = 0; i < 4; ++i) {
    std::string p = "f" + std::to_string(i) + "_";
    b.constant(p + "w", random_tensor(rng, {3, 3}));
    b.call(p + "lin", "linear", {ref(cur), ref(p + "w")});
    b.call(p + "act", "silu", {ref(p + "lin")});
    cur = p + "act";
  }
  b.output(cur);
  Graph g = b.build();

  for (auto [alpha, expect] : {std::pair<double, int64_t>{0.0, 0},
                               {0.25, 1}, {0.5, 2}, {0.6, 3}, {1.0, 4}}) {
    CAPTURE(alpha);
    Graph out;
    PassReport r;
    out = run_operator_fusion(g, alpha, r);
    CHECK(count_op(out, "fused_linear_silu") == expect);
    CHECK(count_op(out, "linear") == 4 - expect);
  }
}

TEST_CASE("layout inserts shared conversions after layout-breaking producers") {
  Rng rng(53);
  TensorValue w = random_tensor(rng, {3, 3});
  Graph g = GraphBuilder()
                .placeholder("x", {3, 3})
                .constant("w", w)
                .call("t", "transpose", {ref("x")},
                      {{"dims", std::vector<int64_t>{-2, -1}}})
                .call("mm1", "matmul", {ref("t"), ref("w")})
                .call("mm2", "matmul", {ref("w"), ref("t")})
                .call("soft", "softmax", {ref("t")}, {{"axis", int64_t{-1}}})
                .call("join", "add", {ref("mm1"), ref("mm2")})
                .call("join2", "add", {ref("join"), ref("soft")})
                .output("join2")
                .build();
  Graph out;
  PassReport r;
  out = run_layout_optimization(g, LayoutStrategy::Auto, r);

  CHECK(r.changed);
  CHECK(count_op(out, "contiguous") == 1);  // one conversion, shared
  const GraphNode* conv = out.find_node("t__contig");
  REQUIRE(conv);
  CHECK(std::get<NodeRef>(conv->args[0]).id == "t");
  CHECK(std::get<NodeRef>(out.find_node("mm1")->args[0]).id == "t__contig");
  CHECK(std::get<NodeRef>(out.find_node("mm2")->args[1]).id == "t__contig");
  // Non-NPU consumers keep the raw operand.
  CHECK(std::get<NodeRef>(out.find_node("soft")->args[0]).id == "t");
  CHECK(validate(out).empty());

  std::map<std::string, TensorValue> bind{{"x", random_tensor(rng, {3, 3})}};
  CHECK(interpret(g, bind) == interpret(out, bind));

  SUBCASE("fixpoint") {
    Graph again;
    PassReport r2;
    again = run_layout_optimization(out, LayoutStrategy::Auto, r2);
    CHECK_FALSE(r2.changed);
    CHECK(again == out);
  }
}

TEST_CASE("channels_last strategy tags conversions and follows attrs") {
  Rng rng(59);
  TensorValue w = random_tensor(rng, {3, 3});
  Graph g = GraphBuilder()
                .placeholder("x", {3, 3})
                .constant("w", w)
                .call("pre", "relu", {ref("x")}, {{"channels_last", int64_t{1}}})
                .call("mm", "matmul", {ref("pre"), ref("w")})
                .output("mm")
                .build();

  Graph with_auto;
  PassReport r_auto;
  with_auto = run_layout_optimization(g, LayoutStrategy::Auto, r_auto);
  CHECK_FALSE(r_auto.changed);  // attr tags only matter to channels_last

  Graph out;
  PassReport r;
  out = run_layout_optimization(g, LayoutStrategy::ChannelsLast, r);
  CHECK(r.changed);
  const GraphNode* conv = out.find_node("pre__contig");
  REQUIRE(conv);
  CHECK(std::get<int64_t>(conv->attrs.at("channels_last")) == 1);

  Graph again;
  PassReport r2;
  again = run_layout_optimization(out, LayoutStrategy::ChannelsLast, r2);
  CHECK_FALSE(r2.changed);
}

TEST_CASE("layout collapses consecutive identical conversions") {
  Graph g = GraphBuilder()
                .placeholder("x", {2, 2})
                .call("c1", "contiguous", {ref("x")})
                .call("c2", "contiguous", {ref("c1")})
                .call("c3", "contiguous", {ref("c2")})
                .call("y", "relu", {ref("c3")})
                .output("y")
                .build();
  Graph out;
  PassReport r;
  out = run_layout_optimization(g, LayoutStrategy::Auto, r);
  CHECK(r.changed);
  CHECK(count_op(out, "contiguous") == 1);
  CHECK(std::get<NodeRef>(out.find_node("y")->args[0]).id == "c1");
}

TEST_CASE("the pipeline respects config and reaches a fixpoint") {
  ModelSpec spec;
  spec.name = "pipeline";
  spec.layers = 2;
  spec.hidden = 6;
  spec.seq = 4;
  spec.seed = 777;
  Graph g = resolve_tied_weights(generate(spec));

  SUBCASE("invalid configs are rejected") {
    PipelineConfig bad;
    bad.alpha = 1.5;
    CHECK_THROWS_AS(validate_config(bad), std::invalid_argument);
    bad.alpha = -0.1;
    CHECK_THROWS_AS(validate_config(bad), std::invalid_argument);
    PipelineConfig rounds;
    rounds.max_fixpoint_rounds = 0;
    CHECK_THROWS_AS(validate_config(rounds), std::invalid_argument);
    PipelineConfig none;
    none.enabled_passes.clear();
    CHECK_THROWS_AS(validate_config(none), std::invalid_argument);
  }

  SUBCASE("alpha zero leaves every chain decomposed") {
    PipelineConfig c;
    c.alpha = 0.0;
    PipelineResult pr = run_pipeline(g, c);
    CHECK(count_op(pr.graph, "fused_sdpa") == 0);
    CHECK(count_op(pr.graph, "softmax") == 2);
  }

  SUBCASE("pass subset runs only the requested passes") {
    PipelineConfig c;
    c.enabled_passes = {PassKind::Dce};
    PipelineResult pr = run_pipeline(g, c);
    for (const PassReport& r : pr.reports) CHECK(r.pass_name == "dce");
    CHECK(pr.graph == g);  // nothing dead in a fresh model
  }

  SUBCASE("reports telescope across rounds") {
    PipelineConfig c;
    PipelineResult pr = run_pipeline(g, c);
    REQUIRE(!pr.reports.empty());
    CHECK(pr.reports.front().nodes_before == static_cast<int64_t>(g.nodes.size()));
    for (size_t i = 0; i + 1 < pr.reports.size(); ++i)
      CHECK(pr.reports[i].nodes_after == pr.reports[i + 1].nodes_before);
    CHECK(pr.reports.back().nodes_after ==
          static_cast<int64_t>(pr.graph.nodes.size()));
  }

  SUBCASE("full pipeline reaches a fixpoint at alpha 1") {
    PipelineConfig c;
    PipelineResult once = run_pipeline(g, c);
    PipelineResult twice = run_pipeline(once.graph, c);
    CHECK(twice.graph == once.graph);
    for (const PassReport& r : twice.reports) CHECK_FALSE(r.changed);

    // Semantics across the whole pipeline.
    Rng rng(61);
    std::map<std::string, TensorValue> bind{
        {"x", random_tensor(rng, {spec.seq, spec.hidden})}};
    CHECK(max_abs_diff(interpret(g, bind), interpret(once.graph, bind)) <= 1e-9);
  }

  SUBCASE("early stop after a quiet round") {
    PipelineConfig c;
    c.max_fixpoint_rounds = 4;
    PipelineResult pr = run_pipeline(g, c);
    // Round three must be quiet, so at most three rounds of reports exist.
    CHECK(pr.reports.size() <= 3 * c.enabled_passes.size());
  }
}
