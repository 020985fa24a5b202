#include "forge/interpreter.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "forge/ops.hpp"

namespace forge {

namespace {

[[noreturn]] void eval_fail(const std::string& op, const std::string& msg) {
  throw EvalError(op + ": " + msg);
}

const TensorValue& as_tensor(const std::string& op, const std::vector<ArgValue>& args,
                             size_t i) {
  if (i >= args.size()) eval_fail(op, "missing argument " + std::to_string(i));
  if (const auto* t = std::get_if<TensorValue>(&args[i])) return *t;
  eval_fail(op, "argument " + std::to_string(i) + " must be a tensor");
}

double as_scalar(const std::string& op, const std::vector<ArgValue>& args, size_t i) {
  if (i >= args.size()) eval_fail(op, "missing argument " + std::to_string(i));
  if (const auto* d = std::get_if<double>(&args[i])) return *d;
  if (const auto* t = std::get_if<TensorValue>(&args[i]))
    if (t->numel() == 1) return t->data[0];
  eval_fail(op, "argument " + std::to_string(i) + " must be a scalar");
}

// Either a tensor or a literal usable as a broadcast operand.
TensorValue operand(const std::string& op, const std::vector<ArgValue>& args,
                    size_t i) {
  if (i >= args.size()) eval_fail(op, "missing argument " + std::to_string(i));
  if (const auto* t = std::get_if<TensorValue>(&args[i])) return *t;
  if (const auto* d = std::get_if<double>(&args[i])) return TensorValue::scalar(*d);
  eval_fail(op, "argument " + std::to_string(i) + " must be a tensor or scalar");
}

int64_t normalize_axis(const std::string& op, int64_t axis, int64_t rank) {
  int64_t a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank)
    eval_fail(op, "axis " + std::to_string(axis) + " out of range for rank " +
                      std::to_string(rank));
  return a;
}

std::vector<int64_t> broadcast_shape(const std::string& op,
                                     const std::vector<int64_t>& a,
                                     const std::vector<int64_t>& b) {
  size_t rank = std::max(a.size(), b.size());
  std::vector<int64_t> out(rank);
  for (size_t i = 0; i < rank; ++i) {
    int64_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
    int64_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (da != db && da != 1 && db != 1)
      eval_fail(op, "shapes " + shape_to_string(a) + " and " +
                        shape_to_string(b) + " do not broadcast");
    out[rank - 1 - i] = std::max(da, db);
  }
  return out;
}

std::vector<int64_t> row_strides(const std::vector<int64_t>& shape) {
  std::vector<int64_t> strides(shape.size(), 1);
  for (int64_t i = static_cast<int64_t>(shape.size()) - 2; i >= 0; --i)
    strides[i] = strides[i + 1] * shape[i + 1];
  return strides;
}

template <typename F>
TensorValue elementwise_binary(const std::string& op, const TensorValue& a,
                               const TensorValue& b, F f) {
  auto shape = broadcast_shape(op, a.shape, b.shape);
  TensorValue out = TensorValue::zeros(shape);
  auto out_strides = row_strides(shape);
  auto a_strides = row_strides(a.shape);
  auto b_strides = row_strides(b.shape);
  int64_t rank = out.rank();
  for (int64_t idx = 0; idx < out.numel(); ++idx) {
    int64_t ia = 0, ib = 0, rem = idx;
    for (int64_t d = 0; d < rank; ++d) {
      int64_t coord = rem / out_strides[d];
      rem %= out_strides[d];
      int64_t off_a = d - (rank - a.rank());
      if (off_a >= 0 && a.shape[off_a] != 1) ia += coord * a_strides[off_a];
      int64_t off_b = d - (rank - b.rank());
      if (off_b >= 0 && b.shape[off_b] != 1) ib += coord * b_strides[off_b];
    }
    out.data[idx] = f(a.data[ia], b.data[ib]);
  }
  return out;
}

template <typename F>
TensorValue elementwise_unary(const TensorValue& a, F f) {
  TensorValue out = a;
  for (auto& v : out.data) v = f(v);
  return out;
}

// [m,k] x [k,n] blocks; batched variants loop over the leading dim.
void matmul_2d(const double* a, const double* b, double* out, int64_t m,
               int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int64_t t = 0; t < k; ++t) acc += a[i * k + t] * b[t * n + j];
      out[i * n + j] = acc;
    }
}

TensorValue matmul(const TensorValue& a, const TensorValue& b) {
  const std::string op = "matmul";
  if (a.rank() == 2 && b.rank() == 2) {
    if (a.shape[1] != b.shape[0])
      eval_fail(op, "inner dims differ: " + shape_to_string(a.shape) + " x " +
                        shape_to_string(b.shape));
    TensorValue out = TensorValue::zeros({a.shape[0], b.shape[1]});
    matmul_2d(a.data.data(), b.data.data(), out.data.data(), a.shape[0],
              a.shape[1], b.shape[1]);
    return out;
  }
  if (a.rank() == 3 && (b.rank() == 3 || b.rank() == 2)) {
    int64_t batch = a.shape[0], m = a.shape[1], k = a.shape[2];
    int64_t bk = b.rank() == 3 ? b.shape[1] : b.shape[0];
    int64_t n = b.rank() == 3 ? b.shape[2] : b.shape[1];
    if (b.rank() == 3 && b.shape[0] != batch)
      eval_fail(op, "batch dims differ: " + shape_to_string(a.shape) + " x " +
                        shape_to_string(b.shape));
    if (k != bk)
      eval_fail(op, "inner dims differ: " + shape_to_string(a.shape) + " x " +
                        shape_to_string(b.shape));
    TensorValue out = TensorValue::zeros({batch, m, n});
    for (int64_t i = 0; i < batch; ++i)
      matmul_2d(a.data.data() + i * m * k,
                b.data.data() + (b.rank() == 3 ? i * k * n : 0),
                out.data.data() + i * m * n, m, k, n);
    return out;
  }
  eval_fail(op, "unsupported ranks " + std::to_string(a.rank()) + " x " +
                    std::to_string(b.rank()));
}

TensorValue transpose_dims(const TensorValue& a, int64_t d0, int64_t d1) {
  const std::string op = "transpose";
  int64_t rank = a.rank();
  d0 = normalize_axis(op, d0, rank);
  d1 = normalize_axis(op, d1, rank);
  std::vector<int64_t> shape = a.shape;
  std::swap(shape[d0], shape[d1]);
  TensorValue out = TensorValue::zeros(shape);
  auto in_strides = row_strides(a.shape);
  auto out_strides = row_strides(shape);
  for (int64_t idx = 0; idx < a.numel(); ++idx) {
    int64_t rem = idx, off = 0;
    for (int64_t d = 0; d < rank; ++d) {
      int64_t coord = rem / in_strides[d];
      rem %= in_strides[d];
      int64_t od = d == d0 ? d1 : d == d1 ? d0 : d;
      off += coord * out_strides[od];
    }
    out.data[off] = a.data[idx];
  }
  return out;
}

TensorValue softmax_axis(const TensorValue& a, int64_t axis) {
  int64_t ax = normalize_axis("softmax", axis, a.rank());
  auto strides = row_strides(a.shape);
  int64_t extent = a.shape[ax];
  int64_t stride = strides[ax];
  TensorValue out = a;
  int64_t outer = a.numel() / (extent * stride);
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t inner = 0; inner < stride; ++inner) {
      int64_t base = o * extent * stride + inner;
      double mx = out.data[base];
      for (int64_t i = 1; i < extent; ++i)
        mx = std::max(mx, out.data[base + i * stride]);
      double denom = 0.0;
      for (int64_t i = 0; i < extent; ++i) {
        double e = std::exp(out.data[base + i * stride] - mx);
        out.data[base + i * stride] = e;
        denom += e;
      }
      for (int64_t i = 0; i < extent; ++i) out.data[base + i * stride] /= denom;
    }
  return out;
}

TensorValue linear_xwt(const std::string& op, const TensorValue& x,
                       const TensorValue& w, const TensorValue* bias) {
  if (w.rank() != 2) eval_fail(op, "weight must be 2-D");
  if (x.rank() != 2 && x.rank() != 3) eval_fail(op, "input must be 2-D or 3-D");
  int64_t in = x.shape.back();
  if (w.shape[1] != in)
    eval_fail(op, "weight " + shape_to_string(w.shape) + " does not match input " +
                      shape_to_string(x.shape));
  int64_t out_dim = w.shape[0];
  int64_t rows = x.numel() / in;
  std::vector<int64_t> out_shape = x.shape;
  out_shape.back() = out_dim;
  TensorValue out = TensorValue::zeros(out_shape);
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t o = 0; o < out_dim; ++o) {
      double acc = 0.0;
      for (int64_t i = 0; i < in; ++i)
        acc += x.data[r * in + i] * w.data[o * in + i];
      out.data[r * out_dim + o] = acc;
    }
  if (bias) {
    if (bias->numel() != out_dim)
      eval_fail(op, "bias " + shape_to_string(bias->shape) +
                        " does not match output dim " + std::to_string(out_dim));
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t o = 0; o < out_dim; ++o)
        out.data[r * out_dim + o] += bias->data[o];
  }
  return out;
}

double gelu_scalar(double x) {
  return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
}

double silu_scalar(double x) { return x / (1.0 + std::exp(-x)); }

TensorValue apply_activation(const std::string& act, const TensorValue& x) {
  if (act == "relu")
    return elementwise_unary(x, [](double v) { return v > 0.0 ? v : 0.0; });
  if (act == "gelu") return elementwise_unary(x, gelu_scalar);
  return elementwise_unary(x, silu_scalar);
}

TensorValue sdpa(const std::string& op, const TensorValue& q, const TensorValue& k,
                 const TensorValue& v, double scale, const TensorValue* mask) {
  TensorValue kt = transpose_dims(k, -2, -1);
  TensorValue scores = matmul(q, kt);
  scores = elementwise_unary(scores, [scale](double s) { return s * scale; });
  if (mask)
    scores = elementwise_binary(op, scores, *mask,
                                [](double a, double b) { return a + b; });
  TensorValue probs = softmax_axis(scores, -1);
  return matmul(probs, v);
}

int64_t attr_int(const AttrMap& attrs, const std::string& key, int64_t fallback) {
  auto it = attrs.find(key);
  if (it == attrs.end()) return fallback;
  if (const auto* i = std::get_if<int64_t>(&it->second)) return *i;
  if (const auto* d = std::get_if<double>(&it->second))
    return static_cast<int64_t>(*d);
  throw EvalError("attr '" + key + "' must be a scalar");
}

}  // namespace

TensorValue eval_op(const std::string& op, const std::vector<ArgValue>& args,
                    const AttrMap& attrs) {
  if (op == "matmul") {
    if (args.size() != 2) eval_fail(op, "expects 2 arguments");
    return matmul(as_tensor(op, args, 0), as_tensor(op, args, 1));
  }
  if (op == "transpose") {
    if (args.size() != 1) eval_fail(op, "expects 1 argument");
    int64_t d0 = -2, d1 = -1;
    auto it = attrs.find("dims");
    if (it != attrs.end()) {
      const auto* dims = std::get_if<std::vector<int64_t>>(&it->second);
      if (!dims || dims->size() != 2)
        eval_fail(op, "attr 'dims' must be a pair of axes");
      d0 = (*dims)[0];
      d1 = (*dims)[1];
    }
    return transpose_dims(as_tensor(op, args, 0), d0, d1);
  }
  if (op == "add" || op == "mul") {
    if (args.size() != 2) eval_fail(op, "expects 2 arguments");
    TensorValue a = operand(op, args, 0);
    TensorValue b = operand(op, args, 1);
    if (op == "add")
      return elementwise_binary(op, a, b, [](double x, double y) { return x + y; });
    return elementwise_binary(op, a, b, [](double x, double y) { return x * y; });
  }
  if (op == "div_scalar") {
    if (args.size() != 2) eval_fail(op, "expects 2 arguments");
    TensorValue a = operand(op, args, 0);
    double s = as_scalar(op, args, 1);
    if (s == 0.0) eval_fail(op, "division by zero");
    return elementwise_unary(a, [s](double v) { return v / s; });
  }
  if (op == "softmax") {
    if (args.size() != 1) eval_fail(op, "expects 1 argument");
    return softmax_axis(as_tensor(op, args, 0), attr_int(attrs, "axis", -1));
  }
  if (op == "relu" || op == "gelu" || op == "silu") {
    if (args.size() != 1) eval_fail(op, "expects 1 argument");
    return apply_activation(op, operand(op, args, 0));
  }
  if (op == "dropout" || op == "contiguous") {
    // Inference identity; dropout's p and layout tags are metadata.
    if (args.size() != 1) eval_fail(op, "expects 1 argument");
    return operand(op, args, 0);
  }
  if (op == "linear" || op.rfind("fused_linear_", 0) == 0) {
    if (args.size() != 2 && args.size() != 3)
      eval_fail(op, "expects (x, W) or (x, W, b)");
    const TensorValue& x = as_tensor(op, args, 0);
    const TensorValue& w = as_tensor(op, args, 1);
    const TensorValue* bias = args.size() == 3 ? &as_tensor(op, args, 2) : nullptr;
    TensorValue y = linear_xwt(op, x, w, bias);
    if (op == "linear") return y;
    return apply_activation(op.substr(std::string("fused_linear_").size()), y);
  }
  if (op == "fused_mm_add") {
    if (args.size() != 3) eval_fail(op, "expects (a, b, c)");
    TensorValue y = matmul(as_tensor(op, args, 0), as_tensor(op, args, 1));
    TensorValue c = operand(op, args, 2);
    return elementwise_binary(op, y, c, [](double x, double z) { return x + z; });
  }
  if (op == "fused_sdpa") {
    if (args.size() < 3 || args.size() > 5)
      eval_fail(op, "expects (Q, K, V[, scale[, mask]])");
    const TensorValue& q = as_tensor(op, args, 0);
    const TensorValue& k = as_tensor(op, args, 1);
    const TensorValue& v = as_tensor(op, args, 2);
    double scale = args.size() >= 4 ? as_scalar(op, args, 3)
                                    : 1.0 / std::sqrt(static_cast<double>(
                                                q.shape.back()));
    const TensorValue* mask = args.size() == 5 ? &as_tensor(op, args, 4) : nullptr;
    return sdpa(op, q, k, v, scale, mask);
  }
  eval_fail(op, "unknown kernel");
}

TensorValue interpret(const Graph& g,
                      const std::map<std::string, TensorValue>& bindings) {
  std::map<std::string, TensorValue> values;

  auto constant_value = [&](const std::string& id) -> const TensorValue& {
    std::string cur = id;
    for (int hops = 0; hops < 64; ++hops) {
      auto it = g.constants.find(cur);
      if (it != g.constants.end()) return it->second.value;
      auto tied = g.tied_map.find(cur);
      if (tied == g.tied_map.end()) break;
      cur = tied->second;
    }
    throw EvalError("node '" + id + "': no constant payload");
  };

  const TensorValue* result = nullptr;
  for (const auto& n : g.nodes) {
    switch (n.kind) {
      case NodeKind::Placeholder: {
        if (g.tied_map.count(n.id)) {
          values[n.id] = constant_value(n.id);
          break;
        }
        auto it = bindings.find(n.id);
        if (it == bindings.end())
          throw EvalError("node '" + n.id + "': placeholder has no binding");
        values[n.id] = it->second;
        break;
      }
      case NodeKind::Constant:
        values[n.id] = constant_value(n.id);
        break;
      case NodeKind::CallOp: {
        std::vector<ArgValue> args;
        args.reserve(n.args.size());
        for (const auto& a : n.args) {
          if (const auto* ref = std::get_if<NodeRef>(&a)) {
            auto it = values.find(ref->id);
            if (it == values.end())
              throw EvalError("node '" + n.id + "': argument '" + ref->id +
                              "' was never evaluated");
            args.emplace_back(it->second);
          } else if (const auto* lit = std::get_if<Literal>(&a)) {
            args.emplace_back(lit->value);
          } else {
            args.emplace_back(std::get<ShapeLiteral>(a).dims);
          }
        }
        try {
          values[n.id] = eval_op(n.op_name, args, n.attrs);
        } catch (const EvalError& e) {
          throw EvalError("node '" + n.id + "': " + e.what());
        }
        break;
      }
      case NodeKind::Output: {
        const auto& ref = std::get<NodeRef>(n.args[0]);
        auto it = values.find(ref.id);
        if (it == values.end())
          throw EvalError("node '" + n.id + "': output argument '" + ref.id +
                          "' was never evaluated");
        result = &it->second;
        break;
      }
    }
  }
  if (!result) throw EvalError("graph '" + g.name + "' has no output node");
  return *result;
}

double max_abs_diff(const TensorValue& a, const TensorValue& b) {
  if (a.shape != b.shape)
    throw EvalError("max_abs_diff: shapes differ: " + shape_to_string(a.shape) +
                    " vs " + shape_to_string(b.shape));
  double mx = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i)
    mx = std::max(mx, std::abs(a.data[i] - b.data[i]));
  return mx;
}

double kl_divergence(const TensorValue& a, const TensorValue& b) {
  if (a.shape != b.shape)
    throw EvalError("kl_divergence: shapes differ: " + shape_to_string(a.shape) +
                    " vs " + shape_to_string(b.shape));
  TensorValue p = softmax_axis(a, -1);
  TensorValue q = softmax_axis(b, -1);
  int64_t cols = a.shape.back();
  int64_t rows = a.numel() / cols;
  double total = 0.0;
  for (int64_t r = 0; r < rows; ++r) {
    double kl = 0.0;
    for (int64_t c = 0; c < cols; ++c) {
      double pv = p.data[r * cols + c];
      double qv = std::max(q.data[r * cols + c], 1e-300);
      // Clamp both sides identically so p == q contributes exactly zero
      // even in the denormal range.
      if (pv > 0.0) kl += pv * std::log(std::max(pv, 1e-300) / qv);
    }
    total += kl;
  }
  // Non-negative by Gibbs' inequality; the float sum may round below zero.
  return std::max(total / static_cast<double>(rows), 0.0);
}

}  // namespace forge
