#pragma once

// Dense f64 tensors with define-by-run reverse-mode differentiation.
//
// Operations record themselves on the thread's active Tape whenever at least
// one operand requires a gradient. Without an active tape every operation is
// evaluated eagerly and nothing is recorded, which is how inference and the
// frozen-parameter paths run.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mapr {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  bool is_leaf = true;
  const void* tape = nullptr;  // tape that produced this node, if any

  void ensure_grad();
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t flat_index) const { return data()[flat_index]; }

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  // Copy of the values with no gradient history.
  Tensor detach() const;

  // Throws ShapeError when any element is NaN or infinite.
  void check_finite(const char* what) const;

  const std::shared_ptr<TensorNode>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}
  friend class Tape;
  friend Tensor make_result(Shape, std::vector<double>);
  std::shared_ptr<TensorNode> node_;
};

// Ordered record of differentiable operations for one forward pass.
class Tape {
 public:
  using BackwardFn = std::function<void(TensorNode& out)>;

  struct Op {
    std::vector<std::shared_ptr<TensorNode>> inputs;
    std::shared_ptr<TensorNode> output;
    BackwardFn backward;
  };

  // Makes a tape the thread's active tape for the lifetime of the guard.
  class Scope {
   public:
    explicit Scope(Tape& tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* previous_;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  // Records `output = f(inputs)` if any input requires a gradient and a tape
  // is active. Returns true when recorded.
  static bool record(std::vector<std::shared_ptr<TensorNode>> inputs,
                     const std::shared_ptr<TensorNode>& output, BackwardFn backward);

  // Propagates d(loss)/d(node) to every recorded node, visiting each op once
  // in reverse order. Leaf gradients accumulate across calls.
  void backward(const Tensor& loss);

  std::size_t size() const { return ops_.size(); }
  const std::vector<Op>& ops() const { return ops_; }
  void clear() { ops_.clear(); }

 private:
  std::vector<Op> ops_;
};

// Elementwise ops. `b` may match `a` exactly or match a trailing suffix of
// a's shape, in which case it is broadcast over the leading axes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor clamp_min(const Tensor& a, double floor);

// [..., K] x [K, H] -> [..., H]
Tensor matmul(const Tensor& a, const Tensor& b);

// Reduces `axis` by max. Gradient goes to the lowest-index maximizer.
Tensor max_over_axis(const Tensor& a, std::size_t axis);
Tensor sum_over_axis(const Tensor& a, std::size_t axis);

Tensor softmax(const Tensor& a);      // over the last axis
Tensor log_softmax(const Tensor& a);  // over the last axis

Tensor sum(const Tensor& a);   // scalar
Tensor mean(const Tensor& a);  // scalar

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor reshape(const Tensor& a, Shape shape);

// out[r] = a[r, index[r]] for a of shape [R, C].
Tensor gather_rows(const Tensor& a, std::span<const int> index);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

}  // namespace mapr
