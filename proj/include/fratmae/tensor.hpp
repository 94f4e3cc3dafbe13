#ifndef FRATMAE_TENSOR_HPP
#define FRATMAE_TENSOR_HPP

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "fratmae/errors.hpp"

namespace fratmae {

using Shape = std::vector<int>;

inline int64_t numel_of(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

// Dense row-major tensor. Rank 1-5 is what the model code uses; 2-D tensors
// are the workhorse (rows = tokens, cols = channels).
template <typename S>
struct Tensor {
  Shape shape;
  std::vector<S> v;

  Tensor() = default;
  explicit Tensor(Shape sh) : shape(std::move(sh)), v(static_cast<size_t>(numel_of(shape)), S(0)) {}
  Tensor(Shape sh, std::vector<S> data) : shape(std::move(sh)), v(std::move(data)) {
    if (static_cast<int64_t>(v.size()) != numel_of(shape))
      throw ShapeError("tensor data size does not match shape " + shape_str(shape));
  }

  static Tensor zeros(Shape sh) { return Tensor(std::move(sh)); }
  static Tensor full(Shape sh, S value) {
    Tensor t(std::move(sh));
    std::fill(t.v.begin(), t.v.end(), value);
    return t;
  }
  static Tensor scalar(S value) { return full({1}, value); }

  int64_t numel() const { return static_cast<int64_t>(v.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }

  int rows() const {
    require_2d();
    return shape[0];
  }
  int cols() const {
    require_2d();
    return shape[1];
  }
  S& at(int r, int c) { return v[static_cast<size_t>(r) * shape[1] + c]; }
  const S& at(int r, int c) const { return v[static_cast<size_t>(r) * shape[1] + c]; }

  void require_2d() const {
    if (shape.size() != 2) throw ShapeError("expected 2-D tensor, got " + shape_str(shape));
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (const S& x : v)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }

  template <typename T>
  Tensor<T> cast() const {
    Tensor<T> out;
    out.shape = shape;
    out.v.resize(v.size());
    for (size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<T>(v[i]);
    return out;
  }
};

}  // namespace fratmae

#endif
