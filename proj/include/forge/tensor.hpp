#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace forge {

// Execution dtype. All arithmetic in this artifact runs at f64; f32 is
// accepted on the wire but widened on load.
enum class Dtype { F64, F32 };

// Declared-precision tag. Metadata only: it feeds the cost model's
// precision multiplier and never changes kernel numerics.
enum class Precision { Fp16, Int8, Mixed };

enum class Layout { Contiguous, ChannelsLast, Strided };

std::string to_string(Dtype d);
std::string to_string(Precision p);
std::string to_string(Layout l);
Dtype dtype_from_string(const std::string& s);
Precision precision_from_string(const std::string& s);
Layout layout_from_string(const std::string& s);

struct TensorSpec {
  std::vector<int64_t> shape;
  Dtype dtype = Dtype::F64;
  Layout layout = Layout::Contiguous;
  Precision precision = Precision::Fp16;

  bool operator==(const TensorSpec&) const = default;
};

inline int64_t shape_numel(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

std::string shape_to_string(const std::vector<int64_t>& shape);

// Dense row-major f64 tensor. The only runtime value type; scalars are
// shape [1].
struct TensorValue {
  std::vector<int64_t> shape;
  std::vector<double> data;

  TensorValue() = default;
  TensorValue(std::vector<int64_t> shape_, std::vector<double> data_)
      : shape(std::move(shape_)), data(std::move(data_)) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
      throw std::invalid_argument("tensor data size does not match shape");
  }

  static TensorValue scalar(double v) { return TensorValue({1}, {v}); }
  static TensorValue zeros(std::vector<int64_t> shape_) {
    auto n = shape_numel(shape_);
    return TensorValue(std::move(shape_), std::vector<double>(n, 0.0));
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int64_t rank() const { return static_cast<int64_t>(shape.size()); }

  bool operator==(const TensorValue&) const = default;
};

}  // namespace forge
