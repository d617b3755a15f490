#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace guild::nn {

/// Dense float32 buffer. Rank 1 (vectors) and rank 2 (row-major matrices)
/// cover everything this project needs; no broadcasting, no strides.
struct Tensor {
  std::vector<int> shape;
  std::vector<float> values;

  Tensor() = default;
  Tensor(std::vector<int> s, std::vector<float> v);

  static Tensor zeros(std::vector<int> shape);
  static Tensor vec(std::vector<float> v);
  static Tensor scalar(float v);

  int64_t size() const { return int64_t(values.size()); }
  int rows() const { return shape.empty() ? 0 : shape[0]; }
  int cols() const { return shape.size() < 2 ? 1 : shape[1]; }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  bool all_finite() const;

  float& at(int i) { return values[size_t(i)]; }
  float at(int i) const { return values[size_t(i)]; }
  float& at(int r, int c) { return values[size_t(r) * size_t(cols()) + size_t(c)]; }
  float at(int r, int c) const { return values[size_t(r) * size_t(cols()) + size_t(c)]; }
};

/// Named trainable (or frozen) tensor with its gradient accumulator.
struct ParamTensor {
  std::string name;
  Tensor value;
  Tensor grad;
  bool frozen = false;

  ParamTensor() = default;
  ParamTensor(std::string n, Tensor v);

  void zero_grad();
};

}  // namespace guild::nn
