#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

namespace mmxai {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

/// A named, trainable value living outside any tape. Tapes copy the value in
/// as a leaf and accumulate gradients back into `grad` after backward().
struct Parameter {
  std::string name;
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;

  Parameter() = default;
  Parameter(std::string name, Shape shape);
  std::size_t size() const { return value.size(); }
  void zero_grad();
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid as long as the tape lives.
class Tensor {
 public:
  Tensor() = default;

  const Shape& shape() const;
  const std::vector<double>& value() const;
  /// Gradient after backward(); zeros for detached tensors.
  std::vector<double> grad() const;
  bool requires_grad() const;
  std::size_t size() const;
  /// Value of a single-element tensor.
  double scalar() const;

 private:
  friend class Tape;
  Tensor(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Record of primitive operations in execution order (define-by-run).
/// All reductions use a fixed summation order, so identical inputs produce
/// bit-identical values and gradients.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf holding explicit data. Rejects non-finite entries.
  Tensor input(Shape shape, std::vector<double> data, bool requires_grad = false);
  /// Leaf bound to a Parameter; backward() accumulates into param.grad.
  Tensor param(Parameter& p);
  Tensor scalar_input(double v, bool requires_grad = false);

  // Primitives. Shape errors name the operation and the offending shapes.
  Tensor matmul(Tensor a, Tensor b);                    // [M,K] x [K,N]
  Tensor add(Tensor a, Tensor b);                       // same shape
  Tensor add_row_bias(Tensor m, Tensor bias);           // [B,D] + [D]
  Tensor add_channel_bias(Tensor t, Tensor bias);       // [B,C,H,W] + [C]
  Tensor mul(Tensor a, Tensor b);                       // elementwise
  Tensor scale(Tensor a, double k);
  Tensor sum(Tensor a);                                 // -> scalar
  Tensor relu(Tensor a);
  Tensor sigmoid(Tensor a);
  /// Row-wise stable softmax of a vector [C] or matrix [B,C]; C >= 2.
  Tensor softmax(Tensor a);
  /// [B,Cin,H,W] * [Cout,Cin,KH,KW], zero padding, floor output sizes.
  Tensor conv2d(Tensor img, Tensor kernel, std::size_t stride, std::size_t pad);
  /// Zero-insertion upsampling: out[..., i*f, j*f] = in[..., i, j].
  Tensor upsample_zero(Tensor img, std::size_t factor);
  Tensor reshape(Tensor a, Shape new_shape);
  /// Concatenate along the last axis: [N]+[M] or [B,N]+[B,M].
  Tensor concat_cols(Tensor a, Tensor b);
  Tensor select(Tensor a, std::size_t flat_index);      // -> scalar
  /// Mean over all elements of the squared difference.
  Tensor mse(Tensor pred, Tensor target);
  /// Mean over rows of -log(max(probs[row,label], 1e-12)).
  Tensor cross_entropy(Tensor probs, const std::vector<std::size_t>& labels);

  /// Reverse sweep from a scalar loss. May be called once per tape.
  void backward(Tensor loss);

  std::size_t node_count() const { return nodes_.size(); }

 private:
  friend class Tensor;

  struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // allocated iff requires_grad
    bool requires_grad = false;
    std::function<void(Tape&)> backward_fn;  // empty for leaves
  };

  struct ParamLink {
    std::size_t node_id;
    Parameter* param;
  };

  Node& node(std::size_t id) { return nodes_[id]; }
  const Node& node(std::size_t id) const { return nodes_[id]; }
  Tensor make_node(Shape shape, std::vector<double> value, bool requires_grad,
                   std::function<void(Tape&)> backward_fn, const char* op);
  void check_same_tape(const Tensor& t, const char* op) const;

  std::vector<Node> nodes_;
  std::vector<ParamLink> param_links_;
  bool backward_done_ = false;
};

/// Central finite differences (f(x+eps*e_i) - f(x-eps*e_i)) / (2*eps).
/// Test oracle for the reverse-mode pass; uses only forward evaluation.
std::vector<double> finite_diff_gradient(
    const std::function<double(const std::vector<double>&)>& f,
    std::vector<double> x, double eps);

}  // namespace mmxai
