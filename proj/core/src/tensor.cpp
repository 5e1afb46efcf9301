#include "mapr/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "mapr/error.hpp"

namespace mapr {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

thread_local Tape* g_active_tape = nullptr;

std::shared_ptr<TensorNode> new_node(Shape shape, std::vector<double> data) {
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  return node;
}

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  std::ostringstream msg;
  msg << op << ": incompatible shapes " << shape_str(a) << " and " << shape_str(b);
  throw ShapeError(msg.str());
}

// Returns how many times b repeats inside a (b equal to a or a trailing suffix).
std::size_t broadcast_outer(const char* op, const Shape& a, const Shape& b) {
  if (b.size() > a.size()) shape_fail(op, a, b);
  if (!std::equal(b.rbegin(), b.rend(), a.rbegin())) shape_fail(op, a, b);
  return shape_numel(a) / std::max<std::size_t>(shape_numel(b), 1);
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t n = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < shape.size(); ++i)
    if (i != axis) out.push_back(shape[i]);
  return out;
}

void require_finite(const Tensor& t, const char* op) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) throw ShapeError(std::string(op) + ": non-finite input");
  }
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "," : "") << shape[i];
  out << ']';
  return out.str();
}

void TensorNode::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

// ---------------------------------------------------------------------------
// Tensor

Tensor make_result(Shape shape, std::vector<double> data) {
  return Tensor(new_node(std::move(shape), std::move(data)));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::size_t n = shape_numel(shape);
  Tensor t(new_node(std::move(shape), std::vector<double>(n, value)));
  t.node_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("tensor shape " + shape_str(shape) + " does not match " +
                     std::to_string(data.size()) + " values");
  }
  Tensor t(new_node(std::move(shape), std::move(data)));
  t.node_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(double value) { return from({}, {value}); }

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= node_->shape.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(node_->shape));
  }
  return node_->shape[axis];
}

std::size_t Tensor::numel() const { return node_->data.size(); }
std::span<const double> Tensor::data() const { return node_->data; }
std::span<double> Tensor::mutable_data() { return node_->data; }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool value) {
  if (!node_->is_leaf) throw ShapeError("requires_grad can only be set on leaf tensors");
  node_->requires_grad = value;
}

bool Tensor::has_grad() const { return node_ && node_->grad.size() == node_->data.size(); }
std::span<const double> Tensor::grad() const { return node_->grad; }
void Tensor::zero_grad() { node_->grad.clear(); }

Tensor Tensor::detach() const { return from(node_->shape, node_->data); }

void Tensor::check_finite(const char* what) const {
  for (std::size_t i = 0; i < numel(); ++i) {
    if (!std::isfinite(node_->data[i])) {
      throw ShapeError(std::string(what) + ": non-finite value at index " + std::to_string(i));
    }
  }
}

// ---------------------------------------------------------------------------
// Tape

Tape::Scope::Scope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
Tape::Scope::~Scope() { g_active_tape = previous_; }

Tape* Tape::active() { return g_active_tape; }

bool Tape::record(std::vector<std::shared_ptr<TensorNode>> inputs,
                  const std::shared_ptr<TensorNode>& output, BackwardFn backward) {
  Tape* tape = g_active_tape;
  if (tape == nullptr) return false;
  bool any = false;
  for (const auto& in : inputs) {
    if (!in->requires_grad) continue;
    if (!in->is_leaf && in->tape != tape) {
      throw ShapeError("operand was recorded on a different tape");
    }
    any = true;
  }
  if (!any) return false;
  output->requires_grad = true;
  output->is_leaf = false;
  output->tape = tape;
  tape->ops_.push_back(Op{std::move(inputs), output, std::move(backward)});
  return true;
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward requires a scalar loss");
  }
  const auto& root = loss.node();
  if (!root->requires_grad) throw ShapeError("backward on a detached tensor");
  if (root->is_leaf) {
    root->ensure_grad();
    root->grad[0] += 1.0;
    return;
  }
  if (root->tape != this) throw ShapeError("backward on a tensor recorded on another tape");

  for (auto& op : ops_) op.output->grad.clear();
  root->grad.assign(1, 1.0);
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    TensorNode& out = *it->output;
    if (out.grad.empty()) continue;
    it->backward(out);
  }
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  const std::size_t outer = broadcast_outer("add", a.shape(), b.shape());
  const std::size_t inner = b.numel();
  std::vector<double> out(a.numel());
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] = ad[o * inner + i] + bd[i];
  Tensor r = make_result(a.shape(), std::move(out));
  auto an = a.node();
  auto bn = b.node();
  Tape::record({an, bn}, r.node(), [an, bn, outer, inner](TensorNode& o) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t k = 0; k < outer; ++k)
        for (std::size_t i = 0; i < inner; ++i) bn->grad[i] += o.grad[k * inner + i];
    }
  });
  return r;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  const std::size_t outer = broadcast_outer("sub", a.shape(), b.shape());
  const std::size_t inner = b.numel();
  std::vector<double> out(a.numel());
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] = ad[o * inner + i] - bd[i];
  Tensor r = make_result(a.shape(), std::move(out));
  auto an = a.node();
  auto bn = b.node();
  Tape::record({an, bn}, r.node(), [an, bn, outer, inner](TensorNode& o) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t k = 0; k < outer; ++k)
        for (std::size_t i = 0; i < inner; ++i) bn->grad[i] -= o.grad[k * inner + i];
    }
  });
  return r;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const std::size_t outer = broadcast_outer("mul", a.shape(), b.shape());
  const std::size_t inner = b.numel();
  std::vector<double> out(a.numel());
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] = ad[o * inner + i] * bd[i];
  Tensor r = make_result(a.shape(), std::move(out));
  auto an = a.node();
  auto bn = b.node();
  Tape::record({an, bn}, r.node(), [an, bn, outer, inner](TensorNode& o) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t k = 0; k < outer; ++k)
        for (std::size_t i = 0; i < inner; ++i)
          an->grad[k * inner + i] += o.grad[k * inner + i] * bn->data[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t k = 0; k < outer; ++k)
        for (std::size_t i = 0; i < inner; ++i)
          bn->grad[i] += o.grad[k * inner + i] * an->data[k * inner + i];
    }
  });
  return r;
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& v : out) v *= factor;
  Tensor r = make_result(a.shape(), std::move(out));
  auto an = a.node();
  Tape::record({an}, r.node(), [an, factor](TensorNode& o) {
    an->ensure_grad();
    for (std::size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += factor * o.grad[i];
  });
  return r;
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.numel());
  auto ad = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] > 0.0 ? ad[i] : 0.0;
  Tensor r = make_result(a.shape(), std::move(out));
  auto an = a.node();
  Tape::record({an}, r.node(), [an](TensorNode& o) {
    an->ensure_grad();
    for (std::size_t i = 0; i < o.grad.size(); ++i)
      if (an->data[i] > 0.0) an->grad[i] += o.grad[i];
  });
  return r;
}

Tensor exp(const Tensor& a) {
  require_finite(a, "exp");
  std::vector<double> out(a.numel());
  auto ad = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(ad[i]);
  Tensor r = make_result(a.shape(), std::move(out));
  auto an = a.node();
  Tape::record({an}, r.node(), [an](TensorNode& o) {
    an->ensure_grad();
    for (std::size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i] * o.data[i];
  });
  return r;
}

Tensor log(const Tensor& a) {
  auto ad = a.data();
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!std::isfinite(ad[i]) || ad[i] <= 0.0) {
      throw ShapeError("log: input must be finite and positive");
    }
    out[i] = std::log(ad[i]);
  }
  Tensor r = make_result(a.shape(), std::move(out));
  auto an = a.node();
  Tape::record({an}, r.node(), [an](TensorNode& o) {
    an->ensure_grad();
    for (std::size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i] / an->data[i];
  });
  return r;
}

Tensor clamp_min(const Tensor& a, double floor) {
  std::vector<double> out(a.numel());
  auto ad = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] >= floor ? ad[i] : floor;
  Tensor r = make_result(a.shape(), std::move(out));
  auto an = a.node();
  Tape::record({an}, r.node(), [an, floor](TensorNode& o) {
    an->ensure_grad();
    for (std::size_t i = 0; i < o.grad.size(); ++i)
      if (an->data[i] >= floor) an->grad[i] += o.grad[i];
  });
  return r;
}

// ---------------------------------------------------------------------------
// Linear algebra and reductions

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (b.rank() != 2 || a.rank() < 1 || a.shape().back() != b.dim(0)) {
    shape_fail("matmul", a.shape(), b.shape());
  }
  const auto k = static_cast<Eigen::Index>(b.dim(0));
  const auto h = static_cast<Eigen::Index>(b.dim(1));
  const auto rows = static_cast<Eigen::Index>(a.numel() / b.dim(0));
  Shape out_shape = a.shape();
  out_shape.back() = b.dim(1);
  std::vector<double> out(static_cast<std::size_t>(rows * h));
  MutMap(out.data(), rows, h).noalias() = ConstMap(a.data().data(), rows, k) * ConstMap(b.data().data(), k, h);
  Tensor r = make_result(std::move(out_shape), std::move(out));
  auto an = a.node();
  auto bn = b.node();
  Tape::record({an, bn}, r.node(), [an, bn, rows, k, h](TensorNode& o) {
    ConstMap g(o.grad.data(), rows, h);
    if (an->requires_grad) {
      an->ensure_grad();
      MutMap(an->grad.data(), rows, k).noalias() += g * ConstMap(bn->data.data(), k, h).transpose();
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      MutMap(bn->grad.data(), k, h).noalias() += ConstMap(an->data.data(), rows, k).transpose() * g;
    }
  });
  return r;
}

Tensor max_over_axis(const Tensor& a, std::size_t axis) {
  const AxisSplit s = split_axis(a.shape(), axis);
  if (s.n == 0) throw ShapeError("max_over_axis: empty axis");
  std::vector<double> out(s.outer * s.inner);
  std::vector<std::size_t> argmax(s.outer * s.inner);
  auto ad = a.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    const std::size_t base = o * s.n * s.inner;
    for (std::size_t i = 0; i < s.inner; ++i) {
      out[o * s.inner + i] = ad[base + i];
      argmax[o * s.inner + i] = base + i;
    }
    for (std::size_t j = 1; j < s.n; ++j) {
      const std::size_t row = base + j * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) {
        if (ad[row + i] > out[o * s.inner + i]) {
          out[o * s.inner + i] = ad[row + i];
          argmax[o * s.inner + i] = row + i;
        }
      }
    }
  }
  Tensor r = make_result(drop_axis(a.shape(), axis), std::move(out));
  auto an = a.node();
  Tape::record({an}, r.node(), [an, argmax = std::move(argmax)](TensorNode& o) {
    an->ensure_grad();
    for (std::size_t i = 0; i < o.grad.size(); ++i) an->grad[argmax[i]] += o.grad[i];
  });
  return r;
}

Tensor sum_over_axis(const Tensor& a, std::size_t axis) {
  const AxisSplit s = split_axis(a.shape(), axis);
  std::vector<double> out(s.outer * s.inner, 0.0);
  auto ad = a.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t j = 0; j < s.n; ++j)
      for (std::size_t i = 0; i < s.inner; ++i)
        out[o * s.inner + i] += ad[(o * s.n + j) * s.inner + i];
  Tensor r = make_result(drop_axis(a.shape(), axis), std::move(out));
  auto an = a.node();
  Tape::record({an}, r.node(), [an, s](TensorNode& o) {
    an->ensure_grad();
    for (std::size_t k = 0; k < s.outer; ++k)
      for (std::size_t j = 0; j < s.n; ++j)
        for (std::size_t i = 0; i < s.inner; ++i)
          an->grad[(k * s.n + j) * s.inner + i] += o.grad[k * s.inner + i];
  });
  return r;
}

Tensor softmax(const Tensor& a) {
  if (a.rank() < 1) throw ShapeError("softmax: scalar input");
  require_finite(a, "softmax");
  const std::size_t c = a.shape().back();
  const std::size_t rows = a.numel() / c;
  std::vector<double> out(a.numel());
  auto ad = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = ad.data() + r * c;
    double* y = out.data() + r * c;
    const double m = *std::max_element(in, in + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += (y[j] = std::exp(in[j] - m));
    for (std::size_t j = 0; j < c; ++j) y[j] /= z;
  }
  Tensor r = make_result(a.shape(), std::move(out));
  auto an = a.node();
  Tape::record({an}, r.node(), [an, rows, c](TensorNode& o) {
    an->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = o.data.data() + r * c;
      const double* g = o.grad.data() + r * c;
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < c; ++j) an->grad[r * c + j] += y[j] * (g[j] - dot);
    }
  });
  return r;
}

Tensor log_softmax(const Tensor& a) {
  if (a.rank() < 1) throw ShapeError("log_softmax: scalar input");
  require_finite(a, "log_softmax");
  const std::size_t c = a.shape().back();
  const std::size_t rows = a.numel() / c;
  std::vector<double> out(a.numel());
  auto ad = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = ad.data() + r * c;
    const double m = *std::max_element(in, in + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(in[j] - m);
    const double lse = m + std::log(z);
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] = in[j] - lse;
  }
  Tensor r = make_result(a.shape(), std::move(out));
  auto an = a.node();
  Tape::record({an}, r.node(), [an, rows, c](TensorNode& o) {
    an->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = o.data.data() + r * c;
      const double* g = o.grad.data() + r * c;
      double gsum = 0.0;
      for (std::size_t j = 0; j < c; ++j) gsum += g[j];
      for (std::size_t j = 0; j < c; ++j) an->grad[r * c + j] += g[j] - std::exp(y[j]) * gsum;
    }
  });
  return r;
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  Tensor r = make_result({}, {total});
  auto an = a.node();
  Tape::record({an}, r.node(), [an](TensorNode& o) {
    an->ensure_grad();
    for (double& g : an->grad) g += o.grad[0];
  });
  return r;
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Shape out_shape = parts.front().shape();
  if (axis >= out_shape.size()) throw ShapeError("concat: axis out of range");
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != out_shape.size()) shape_fail("concat", parts.front().shape(), p.shape());
    for (std::size_t d = 0; d < out_shape.size(); ++d) {
      if (d != axis && p.dim(d) != parts.front().dim(d)) shape_fail("concat", parts.front().shape(), p.shape());
    }
    out_shape[axis] += p.dim(axis);
  }
  const AxisSplit s = split_axis(out_shape, axis);
  std::vector<double> out(shape_numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t chunk = p.dim(axis) * s.inner;
    auto pd = p.data();
    for (std::size_t o = 0; o < s.outer; ++o)
      std::copy_n(pd.begin() + o * chunk, chunk, out.begin() + o * s.n * s.inner + offset);
    offset += chunk;
  }
  Tensor r = make_result(std::move(out_shape), std::move(out));
  std::vector<std::shared_ptr<TensorNode>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  Tape::record(nodes, r.node(), [nodes, offsets, s, axis](TensorNode& o) {
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      auto& in = *nodes[k];
      if (!in.requires_grad) continue;
      in.ensure_grad();
      const std::size_t chunk = in.shape[axis] * s.inner;
      for (std::size_t q = 0; q < s.outer; ++q)
        for (std::size_t i = 0; i < chunk; ++i)
          in.grad[q * chunk + i] += o.grad[q * s.n * s.inner + offsets[k] + i];
    }
  });
  return r;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.rank() == 0) throw ShapeError("concat_channels: scalar input");
  return concat({a, b}, a.rank() - 1);
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) shape_fail("reshape", a.shape(), shape);
  Tensor r = make_result(std::move(shape), std::vector<double>(a.data().begin(), a.data().end()));
  auto an = a.node();
  Tape::record({an}, r.node(), [an](TensorNode& o) {
    an->ensure_grad();
    for (std::size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i];
  });
  return r;
}

Tensor gather_rows(const Tensor& a, std::span<const int> index) {
  if (a.rank() != 2 || a.dim(0) != index.size()) {
    throw ShapeError("gather_rows: expected [R, C] with R = " + std::to_string(index.size()) +
                     ", got " + shape_str(a.shape()));
  }
  const std::size_t c = a.dim(1);
  std::vector<std::size_t> flat(index.size());
  std::vector<double> out(index.size());
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] < 0 || static_cast<std::size_t>(index[r]) >= c) {
      throw ShapeError("gather_rows: index " + std::to_string(index[r]) + " out of range [0, " +
                       std::to_string(c) + ")");
    }
    flat[r] = r * c + static_cast<std::size_t>(index[r]);
    out[r] = a.data()[flat[r]];
  }
  Tensor r = make_result({index.size()}, std::move(out));
  auto an = a.node();
  Tape::record({an}, r.node(), [an, flat = std::move(flat)](TensorNode& o) {
    an->ensure_grad();
    for (std::size_t i = 0; i < flat.size(); ++i) an->grad[flat[i]] += o.grad[i];
  });
  return r;
}

}  // namespace mapr
