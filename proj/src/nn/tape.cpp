#include "guild/nn/tape.hpp"

#include <cmath>

#include "guild/errors.hpp"

namespace guild::nn {

Tape::Node& Tape::node(ValueRef r) {
  if (!r.valid() || size_t(r.id) >= nodes_.size())
    throw ContractError("Tape: invalid value reference");
  return nodes_[size_t(r.id)];
}

const Tape::Node& Tape::node(ValueRef r) const {
  if (!r.valid() || size_t(r.id) >= nodes_.size())
    throw ContractError("Tape: invalid value reference");
  return nodes_[size_t(r.id)];
}

ValueRef Tape::push(Node n) {
  if (backward_done_)
    throw ContractError("Tape: cannot record after backward; clear() first");
  if (check_finite_) check_node_finite(n);
  nodes_.push_back(std::move(n));
  return ValueRef{int32_t(nodes_.size() - 1)};
}

void Tape::check_node_finite(const Node& n) const {
  if (!n.value.all_finite())
    throw ContractError("Tape: non-finite value produced by forward op");
}

const Tensor& Tape::val(ValueRef r) const { return node(r).value; }

float Tape::scalar_val(ValueRef r) const {
  const Tensor& t = node(r).value;
  if (t.size() != 1) throw ContractError("Tape: scalar_val on non-scalar");
  return t.values[0];
}

ValueRef Tape::constant(Tensor t) {
  Node n;
  n.op = Op::kConstant;
  n.value = std::move(t);
  return push(std::move(n));
}

ValueRef Tape::param(ParamTensor& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return ValueRef{it->second};
  Node n;
  n.op = Op::kParam;
  n.value = p.value;
  n.bound = &p;
  ValueRef r = push(std::move(n));
  param_nodes_.emplace(&p, r.id);
  return r;
}

ValueRef Tape::matvec(ValueRef W, ValueRef x) {
  const Tensor& w = val(W);
  const Tensor& xv = val(x);
  if (w.shape.size() != 2 || w.cols() != xv.rows() || xv.shape.size() != 1)
    throw ConfigError("matvec: shape mismatch");
  Node n;
  n.op = Op::kMatVec;
  n.parents = {W.id, x.id};
  n.value = Tensor::zeros({w.rows()});
  kern::matvec(w.values.data(), w.rows(), w.cols(), xv.values.data(),
               n.value.values.data());
  return push(std::move(n));
}

ValueRef Tape::linear(ValueRef W, ValueRef x, ValueRef b) {
  const Tensor& w = val(W);
  const Tensor& xv = val(x);
  const Tensor& bv = val(b);
  if (w.shape.size() != 2 || w.cols() != xv.rows() || bv.rows() != w.rows())
    throw ConfigError("linear: shape mismatch");
  Node n;
  n.op = Op::kLinear;
  n.parents = {W.id, x.id, b.id};
  n.value = Tensor::zeros({w.rows()});
  kern::matvec(w.values.data(), w.rows(), w.cols(), xv.values.data(),
               n.value.values.data());
  for (int i = 0; i < w.rows(); ++i) n.value.values[size_t(i)] += bv.values[size_t(i)];
  return push(std::move(n));
}

ValueRef Tape::add(ValueRef a, ValueRef b) {
  const Tensor& av = val(a);
  const Tensor& bv = val(b);
  if (!av.same_shape(bv)) throw ConfigError("add: shape mismatch");
  Node n;
  n.op = Op::kAdd;
  n.parents = {a.id, b.id};
  n.value = av;
  for (int64_t i = 0; i < av.size(); ++i) n.value.values[size_t(i)] += bv.values[size_t(i)];
  return push(std::move(n));
}

ValueRef Tape::sub(ValueRef a, ValueRef b) {
  const Tensor& av = val(a);
  const Tensor& bv = val(b);
  if (!av.same_shape(bv)) throw ConfigError("sub: shape mismatch");
  Node n;
  n.op = Op::kSub;
  n.parents = {a.id, b.id};
  n.value = av;
  for (int64_t i = 0; i < av.size(); ++i) n.value.values[size_t(i)] -= bv.values[size_t(i)];
  return push(std::move(n));
}

ValueRef Tape::mul(ValueRef a, ValueRef b) {
  const Tensor& av = val(a);
  const Tensor& bv = val(b);
  if (!av.same_shape(bv)) throw ConfigError("mul: shape mismatch");
  Node n;
  n.op = Op::kMul;
  n.parents = {a.id, b.id};
  n.value = av;
  for (int64_t i = 0; i < av.size(); ++i) n.value.values[size_t(i)] *= bv.values[size_t(i)];
  return push(std::move(n));
}

ValueRef Tape::scale(ValueRef a, float c) {
  Node n;
  n.op = Op::kScale;
  n.parents = {a.id};
  n.auxf = c;
  n.value = val(a);
  for (float& v : n.value.values) v *= c;
  return push(std::move(n));
}

ValueRef Tape::offset(ValueRef a, float c) {
  Node n;
  n.op = Op::kOffset;
  n.parents = {a.id};
  n.auxf = c;
  n.value = val(a);
  for (float& v : n.value.values) v += c;
  return push(std::move(n));
}

ValueRef Tape::concat(std::span<const ValueRef> parts) {
  if (parts.empty()) throw ContractError("concat: no parts");
  Node n;
  n.op = Op::kConcat;
  int64_t total = 0;
  for (ValueRef p : parts) {
    if (val(p).shape.size() != 1) throw ConfigError("concat: vectors only");
    total += val(p).size();
    n.parents.push_back(p.id);
  }
  n.value = Tensor::zeros({int(total)});
  int64_t off = 0;
  for (ValueRef p : parts) {
    const Tensor& t = val(p);
    std::copy(t.values.begin(), t.values.end(), n.value.values.begin() + off);
    off += t.size();
  }
  return push(std::move(n));
}

ValueRef Tape::row(ValueRef matrix, int index) {
  const Tensor& m = val(matrix);
  if (m.shape.size() != 2) throw ConfigError("row: rank-2 input required");
  if (index < 0 || index >= m.rows()) throw ContractError("row: index out of range");
  Node n;
  n.op = Op::kRow;
  n.parents = {matrix.id};
  n.aux = index;
  int c = m.cols();
  n.value = Tensor::zeros({c});
  const float* src = m.values.data() + size_t(index) * size_t(c);
  std::copy(src, src + c, n.value.values.begin());
  return push(std::move(n));
}

ValueRef Tape::silu(ValueRef x) {
  const Tensor& xv = val(x);
  Node n;
  n.op = Op::kSilu;
  n.parents = {x.id};
  n.value = Tensor::zeros(xv.shape);
  kern::silu(xv.values.data(), int(xv.size()), n.value.values.data());
  return push(std::move(n));
}

ValueRef Tape::layer_norm(ValueRef x, ValueRef gain, ValueRef bias) {
  const Tensor& xv = val(x);
  const Tensor& g = val(gain);
  const Tensor& b = val(bias);
  if (xv.shape.size() != 1 || !xv.same_shape(g) || !xv.same_shape(b))
    throw ConfigError("layer_norm: shape mismatch");
  int d = int(xv.size());
  Node n;
  n.op = Op::kLayerNorm;
  n.parents = {x.id, gain.id, bias.id};
  n.value = Tensor::zeros(xv.shape);
  n.saved.resize(size_t(d) + 1);
  kern::layer_norm(xv.values.data(), d, g.values.data(), b.values.data(),
                   n.value.values.data(), n.saved.data(), n.saved.data() + d);
  return push(std::move(n));
}

static void require_mask(const Tensor& x, const std::vector<uint8_t>& mask) {
  if (mask.size() != x.values.size())
    throw ConfigError("masked op: mask length mismatch");
  for (uint8_t m : mask)
    if (m) return;
  throw ContractError("masked op: empty mask");
}

ValueRef Tape::masked_softmax(ValueRef x, const std::vector<uint8_t>& mask) {
  const Tensor& xv = val(x);
  require_mask(xv, mask);
  Node n;
  n.op = Op::kMaskedSoftmax;
  n.parents = {x.id};
  n.mask = mask;
  n.value = Tensor::zeros(xv.shape);
  kern::masked_softmax(xv.values.data(), mask.data(), int(xv.size()),
                       n.value.values.data());
  return push(std::move(n));
}

ValueRef Tape::masked_log_softmax(ValueRef x, const std::vector<uint8_t>& mask) {
  const Tensor& xv = val(x);
  require_mask(xv, mask);
  Node n;
  n.op = Op::kMaskedLogSoftmax;
  n.parents = {x.id};
  n.mask = mask;
  n.value = Tensor::zeros(xv.shape);
  n.saved.resize(xv.values.size());
  kern::masked_log_softmax(xv.values.data(), mask.data(), int(xv.size()),
                           n.value.values.data(), n.saved.data());
  return push(std::move(n));
}

ValueRef Tape::gru_step(const kern::GruDims& dims, ValueRef Wih, ValueRef bih,
                        ValueRef Whh, ValueRef bhh, ValueRef x, ValueRef h) {
  const Tensor& wih = val(Wih);
  const Tensor& whh = val(Whh);
  const Tensor& xv = val(x);
  const Tensor& hv = val(h);
  if (wih.rows() != 3 * dims.hidden || wih.cols() != dims.input ||
      whh.rows() != 3 * dims.hidden || whh.cols() != dims.hidden ||
      xv.rows() != dims.input || hv.rows() != dims.hidden ||
      val(bih).rows() != 3 * dims.hidden || val(bhh).rows() != 3 * dims.hidden)
    throw ConfigError("gru_step: shape mismatch");
  Node n;
  n.op = Op::kGruStep;
  n.parents = {Wih.id, bih.id, Whh.id, bhh.id, x.id, h.id};
  n.gru = dims;
  n.value = Tensor::zeros({dims.hidden});
  n.saved.resize(size_t(4) * size_t(dims.hidden));
  kern::gru_step(dims, wih.values.data(), val(bih).values.data(),
                 whh.values.data(), val(bhh).values.data(), xv.values.data(),
                 hv.values.data(), n.value.values.data(), n.saved.data());
  return push(std::move(n));
}

ValueRef Tape::pick(ValueRef v, int index) {
  const Tensor& t = val(v);
  if (index < 0 || index >= t.rows() || t.shape.size() != 1)
    throw ContractError("pick: index out of range");
  Node n;
  n.op = Op::kPick;
  n.parents = {v.id};
  n.aux = index;
  n.value = Tensor::scalar(t.values[size_t(index)]);
  return push(std::move(n));
}

ValueRef Tape::sum(ValueRef v) {
  const Tensor& t = val(v);
  float acc = 0.0f;
  for (float x : t.values) acc += x;
  Node n;
  n.op = Op::kSum;
  n.parents = {v.id};
  n.value = Tensor::scalar(acc);
  return push(std::move(n));
}

ValueRef Tape::mean(ValueRef v) {
  const Tensor& t = val(v);
  float acc = 0.0f;
  for (float x : t.values) acc += x;
  Node n;
  n.op = Op::kMean;
  n.parents = {v.id};
  n.value = Tensor::scalar(acc / float(t.size()));
  return push(std::move(n));
}

ValueRef Tape::dot(ValueRef a, ValueRef b) {
  const Tensor& av = val(a);
  const Tensor& bv = val(b);
  if (!av.same_shape(bv)) throw ConfigError("dot: shape mismatch");
  float acc = 0.0f;
  for (int64_t i = 0; i < av.size(); ++i)
    acc += av.values[size_t(i)] * bv.values[size_t(i)];
  Node n;
  n.op = Op::kDot;
  n.parents = {a.id, b.id};
  n.value = Tensor::scalar(acc);
  return push(std::move(n));
}

ValueRef Tape::clamp_min(ValueRef v, float floor) {
  Node n;
  n.op = Op::kClampMin;
  n.parents = {v.id};
  n.auxf = floor;
  n.value = val(v);
  for (float& x : n.value.values)
    if (x < floor) x = floor;
  return push(std::move(n));
}

ValueRef Tape::mul_scalar(ValueRef v, ValueRef s) {
  const Tensor& sv = val(s);
  if (sv.size() != 1) throw ConfigError("mul_scalar: scalar required");
  Node n;
  n.op = Op::kMulScalar;
  n.parents = {v.id, s.id};
  n.value = val(v);
  for (float& x : n.value.values) x *= sv.values[0];
  return push(std::move(n));
}

ValueRef Tape::pack(std::span<const ValueRef> scalars) {
  if (scalars.empty()) throw ContractError("pack: no inputs");
  Node n;
  n.op = Op::kPack;
  n.value = Tensor::zeros({int(scalars.size())});
  for (size_t i = 0; i < scalars.size(); ++i) {
    const Tensor& t = val(scalars[i]);
    if (t.size() != 1) throw ConfigError("pack: scalar inputs required");
    n.value.values[i] = t.values[0];
    n.parents.push_back(scalars[i].id);
  }
  return push(std::move(n));
}

Tensor& Tape::grad_of(int32_t id) {
  Node& n = nodes_[size_t(id)];
  if (n.grad.values.empty()) n.grad = Tensor::zeros(n.value.shape);
  return n.grad;
}

void Tape::backward(ValueRef loss) {
  if (backward_done_) throw ContractError("Tape: backward called twice");
  const Tensor& lv = val(loss);
  if (lv.size() != 1) throw ContractError("Tape: backward target must be scalar");
  if (!std::isfinite(lv.values[0]))
    throw ContractError("Tape: non-finite loss");
  backward_done_ = true;
  grad_of(loss.id).values[0] = 1.0f;
  for (int32_t id = int32_t(nodes_.size()) - 1; id >= 0; --id) backward_node(id);
  for (auto& [p, id] : param_nodes_) {
    Node& n = nodes_[size_t(id)];
    if (n.grad.values.empty()) continue;
    ParamTensor* pt = n.bound;
    if (pt->frozen) continue;
    for (int64_t i = 0; i < n.grad.size(); ++i)
      pt->grad.values[size_t(i)] += n.grad.values[size_t(i)];
    if (check_finite_ && !pt->grad.all_finite())
      throw ContractError("Tape: non-finite gradient for " + pt->name);
  }
}

void Tape::backward_node(int32_t id) {
  Node& n = nodes_[size_t(id)];
  if (n.grad.values.empty()) return;  // not on any path to the loss
  const float* g = n.grad.values.data();
  int64_t sz = n.value.size();
  switch (n.op) {
    case Op::kConstant:
    case Op::kParam:
      break;
    case Op::kMatVec:
    case Op::kLinear: {
      const Tensor& w = nodes_[size_t(n.parents[0])].value;
      const Tensor& x = nodes_[size_t(n.parents[1])].value;
      kern::matvec_bwd_w(grad_of(n.parents[0]).values.data(), w.rows(), w.cols(),
                         g, x.values.data());
      kern::matvec_bwd_x(w.values.data(), w.rows(), w.cols(), g,
                         grad_of(n.parents[1]).values.data());
      if (n.op == Op::kLinear) {
        Tensor& db = grad_of(n.parents[2]);
        for (int64_t i = 0; i < sz; ++i) db.values[size_t(i)] += g[i];
      }
      break;
    }
    case Op::kAdd: {
      Tensor& da = grad_of(n.parents[0]);
      Tensor& db = grad_of(n.parents[1]);
      for (int64_t i = 0; i < sz; ++i) {
        da.values[size_t(i)] += g[i];
        db.values[size_t(i)] += g[i];
      }
      break;
    }
    case Op::kSub: {
      Tensor& da = grad_of(n.parents[0]);
      Tensor& db = grad_of(n.parents[1]);
      for (int64_t i = 0; i < sz; ++i) {
        da.values[size_t(i)] += g[i];
        db.values[size_t(i)] -= g[i];
      }
      break;
    }
    case Op::kMul: {
      const Tensor& a = nodes_[size_t(n.parents[0])].value;
      const Tensor& b = nodes_[size_t(n.parents[1])].value;
      Tensor& da = grad_of(n.parents[0]);
      Tensor& db = grad_of(n.parents[1]);
      for (int64_t i = 0; i < sz; ++i) {
        da.values[size_t(i)] += g[i] * b.values[size_t(i)];
        db.values[size_t(i)] += g[i] * a.values[size_t(i)];
      }
      break;
    }
    case Op::kScale: {
      Tensor& da = grad_of(n.parents[0]);
      for (int64_t i = 0; i < sz; ++i) da.values[size_t(i)] += g[i] * n.auxf;
      break;
    }
    case Op::kOffset: {
      Tensor& da = grad_of(n.parents[0]);
      for (int64_t i = 0; i < sz; ++i) da.values[size_t(i)] += g[i];
      break;
    }
    case Op::kConcat: {
      int64_t off = 0;
      for (int32_t pid : n.parents) {
        Tensor& dp = grad_of(pid);
        for (int64_t i = 0; i < dp.size(); ++i) dp.values[size_t(i)] += g[off + i];
        off += dp.size();
      }
      break;
    }
    case Op::kRow: {
      Tensor& dm = grad_of(n.parents[0]);
      int c = dm.cols();
      float* dst = dm.values.data() + size_t(n.aux) * size_t(c);
      for (int i = 0; i < c; ++i) dst[i] += g[i];
      break;
    }
    case Op::kSilu: {
      const Tensor& x = nodes_[size_t(n.parents[0])].value;
      kern::silu_bwd(x.values.data(), int(sz), g,
                     grad_of(n.parents[0]).values.data());
      break;
    }
    case Op::kLayerNorm: {
      const Tensor& gain = nodes_[size_t(n.parents[1])].value;
      int d = int(sz);
      kern::layer_norm_bwd(n.saved.data(), n.saved[size_t(d)], d,
                           gain.values.data(), g,
                           grad_of(n.parents[0]).values.data(),
                           grad_of(n.parents[1]).values.data(),
                           grad_of(n.parents[2]).values.data());
      break;
    }
    case Op::kMaskedSoftmax:
      kern::masked_softmax_bwd(n.value.values.data(), n.mask.data(), int(sz), g,
                               grad_of(n.parents[0]).values.data());
      break;
    case Op::kMaskedLogSoftmax:
      kern::masked_log_softmax_bwd(n.value.values.data(), n.saved.data(),
                                   n.mask.data(), int(sz), g,
                                   grad_of(n.parents[0]).values.data());
      break;
    case Op::kGruStep: {
      const Tensor& wih = nodes_[size_t(n.parents[0])].value;
      const Tensor& whh = nodes_[size_t(n.parents[2])].value;
      const Tensor& x = nodes_[size_t(n.parents[4])].value;
      const Tensor& h = nodes_[size_t(n.parents[5])].value;
      kern::gru_step_bwd(n.gru, wih.values.data(), whh.values.data(),
                         x.values.data(), h.values.data(), n.saved.data(), g,
                         grad_of(n.parents[4]).values.data(),
                         grad_of(n.parents[5]).values.data(),
                         grad_of(n.parents[0]).values.data(),
                         grad_of(n.parents[1]).values.data(),
                         grad_of(n.parents[2]).values.data(),
                         grad_of(n.parents[3]).values.data());
      break;
    }
    case Op::kPick:
      grad_of(n.parents[0]).values[size_t(n.aux)] += g[0];
      break;
    case Op::kSum: {
      Tensor& dv = grad_of(n.parents[0]);
      for (int64_t i = 0; i < dv.size(); ++i) dv.values[size_t(i)] += g[0];
      break;
    }
    case Op::kMean: {
      Tensor& dv = grad_of(n.parents[0]);
      float s = g[0] / float(dv.size());
      for (int64_t i = 0; i < dv.size(); ++i) dv.values[size_t(i)] += s;
      break;
    }
    case Op::kDot: {
      const Tensor& a = nodes_[size_t(n.parents[0])].value;
      const Tensor& b = nodes_[size_t(n.parents[1])].value;
      Tensor& da = grad_of(n.parents[0]);
      Tensor& db = grad_of(n.parents[1]);
      for (int64_t i = 0; i < a.size(); ++i) {
        da.values[size_t(i)] += g[0] * b.values[size_t(i)];
        db.values[size_t(i)] += g[0] * a.values[size_t(i)];
      }
      break;
    }
    case Op::kClampMin: {
      const Tensor& x = nodes_[size_t(n.parents[0])].value;
      Tensor& dx = grad_of(n.parents[0]);
      for (int64_t i = 0; i < sz; ++i)
        if (x.values[size_t(i)] > n.auxf) dx.values[size_t(i)] += g[i];
      break;
    }
    case Op::kMulScalar: {
      const Tensor& v = nodes_[size_t(n.parents[0])].value;
      float s = nodes_[size_t(n.parents[1])].value.values[0];
      Tensor& dv = grad_of(n.parents[0]);
      Tensor& ds = grad_of(n.parents[1]);
      for (int64_t i = 0; i < sz; ++i) {
        dv.values[size_t(i)] += g[i] * s;
        ds.values[0] += g[i] * v.values[size_t(i)];
      }
      break;
    }
    case Op::kPack: {
      for (size_t i = 0; i < n.parents.size(); ++i)
        grad_of(n.parents[i]).values[0] += g[i];
      break;
    }
  }
}

void Tape::clear() {
  nodes_.clear();
  param_nodes_.clear();
  backward_done_ = false;
}

}  // namespace guild::nn
