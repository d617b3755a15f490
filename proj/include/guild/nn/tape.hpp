#pragma once

#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "guild/nn/kernels.hpp"
#include "guild/nn/tensor.hpp"

namespace guild::nn {

struct ValueRef {
  int32_t id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode autodiff over a linear record of ops. One tape spans one
/// episode (or one throwaway forward); backward() may be called once, after
/// which the tape is cleared for reuse.
class Tape {
 public:
  ValueRef constant(Tensor t);
  ValueRef constant_vec(std::vector<float> v) { return constant(Tensor::vec(std::move(v))); }
  ValueRef scalar(float v) { return constant(Tensor::scalar(v)); }

  /// Leaf bound to an external parameter. Memoized: registering the same
  /// ParamTensor twice yields the same node, so gradients pool across uses.
  ValueRef param(ParamTensor& p);

  ValueRef matvec(ValueRef W, ValueRef x);
  ValueRef linear(ValueRef W, ValueRef x, ValueRef b);
  ValueRef add(ValueRef a, ValueRef b);
  ValueRef sub(ValueRef a, ValueRef b);
  ValueRef mul(ValueRef a, ValueRef b);
  ValueRef scale(ValueRef a, float c);
  ValueRef offset(ValueRef a, float c);
  ValueRef concat(std::span<const ValueRef> parts);
  ValueRef row(ValueRef matrix, int index);
  ValueRef silu(ValueRef x);
  ValueRef layer_norm(ValueRef x, ValueRef gain, ValueRef bias);
  ValueRef masked_softmax(ValueRef x, const std::vector<uint8_t>& mask);
  ValueRef masked_log_softmax(ValueRef x, const std::vector<uint8_t>& mask);
  ValueRef gru_step(const kern::GruDims& dims, ValueRef Wih, ValueRef bih,
                    ValueRef Whh, ValueRef bhh, ValueRef x, ValueRef h);
  ValueRef pick(ValueRef v, int index);
  ValueRef sum(ValueRef v);
  ValueRef mean(ValueRef v);
  ValueRef dot(ValueRef a, ValueRef b);
  ValueRef clamp_min(ValueRef v, float floor);
  ValueRef mul_scalar(ValueRef v, ValueRef s);
  ValueRef pack(std::span<const ValueRef> scalars);

  const Tensor& val(ValueRef r) const;
  float scalar_val(ValueRef r) const;

  /// Accumulates d(loss)/d(param) into every bound non-frozen ParamTensor.
  /// loss must be a scalar node.
  void backward(ValueRef loss);

  void clear();
  size_t node_count() const { return nodes_.size(); }

  /// When set, every forward op and the backward pass verify all produced
  /// values are finite. Costly; meant for tests.
  void set_check_finite(bool on) { check_finite_ = on; }

 private:
  enum class Op : uint8_t {
    kConstant, kParam, kMatVec, kLinear, kAdd, kSub, kMul, kScale, kOffset,
    kConcat, kRow, kSilu, kLayerNorm, kMaskedSoftmax, kMaskedLogSoftmax,
    kGruStep, kPick, kSum, kMean, kDot, kClampMin, kMulScalar, kPack,
  };

  struct Node {
    Tensor value;
    Tensor grad;  // empty until touched by backward
    std::vector<float> saved;
    std::vector<uint8_t> mask;
    std::vector<int32_t> parents;
    Op op = Op::kConstant;
    int32_t aux = 0;
    float auxf = 0.0f;
    ParamTensor* bound = nullptr;
    kern::GruDims gru{0, 0};
  };

  Node& node(ValueRef r);
  const Node& node(ValueRef r) const;
  ValueRef push(Node n);
  Tensor& grad_of(int32_t id);
  void backward_node(int32_t id);
  void check_node_finite(const Node& n) const;

  std::vector<Node> nodes_;
  std::unordered_map<const ParamTensor*, int32_t> param_nodes_;
  bool backward_done_ = false;
  bool check_finite_ = false;
};

}  // namespace guild::nn
