#include "guild/nn/tensor.hpp"

#include <cmath>

#include "guild/errors.hpp"

namespace guild::nn {

static int64_t shape_product(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ContractError("Tensor: non-positive dimension");
    n *= d;
  }
  return n;
}

Tensor::Tensor(std::vector<int> s, std::vector<float> v)
    : shape(std::move(s)), values(std::move(v)) {
  if (shape_product(shape) != int64_t(values.size()))
    throw ContractError("Tensor: shape does not match value count");
}

Tensor Tensor::zeros(std::vector<int> shape) {
  int64_t n = shape_product(shape);
  Tensor t;
  t.shape = std::move(shape);
  t.values.assign(size_t(n), 0.0f);
  return t;
}

Tensor Tensor::vec(std::vector<float> v) {
  Tensor t;
  t.shape = {int(v.size())};
  t.values = std::move(v);
  return t;
}

Tensor Tensor::scalar(float v) { return vec({v}); }

bool Tensor::all_finite() const {
  for (float x : values)
    if (!std::isfinite(x)) return false;
  return true;
}

ParamTensor::ParamTensor(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {
  grad = Tensor::zeros(value.shape);
}

void ParamTensor::zero_grad() {
  std::fill(grad.values.begin(), grad.values.end(), 0.0f);
}

}  // namespace guild::nn
