#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "cno/filters.hpp"
#include "cno/tensor.hpp"

namespace cno {

/// Trainable tensor with its accumulated gradient.
template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}
  void zero_grad() { grad.fill(T(0)); }
};

namespace ad {

template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::function<void(Node&)> backward;

  Tensor<T>& grad_buffer() {
    if (grad.empty()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

template <class T>
using Var = std::shared_ptr<Node<T>>;

/// Records differentiable operations in creation order. A non-recording tape
/// evaluates the same ops without keeping graph state.
template <class T>
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

  Var<T> constant(Tensor<T> value) const;
  /// Leaf whose gradient is added into `p.grad` during backward.
  Var<T> parameter(Parameter<T>& p);
  /// Creates the output node of an op. `backward` reads the node's grad and
  /// accumulates into the inputs; it is dropped when no input needs a grad.
  Var<T> record(Tensor<T> value, const std::vector<Var<T>>& inputs, std::function<void(Node<T>&)> backward);

  /// Reverse sweep from a scalar root. Throws a usage error otherwise.
  void backward(const Var<T>& root);

 private:
  bool recording_;
  std::vector<Var<T>> nodes_;
};

/// Separable resampling between square grids with its adjoint.
template <class T>
struct ResampleOp {
  AxisOperator<T> forward;
  AxisOperator<T> adjoint;

  int in_resolution() const { return forward.in_len; }
  int out_resolution() const { return forward.out_len; }
};

template <class T>
ResampleOp<T> make_resample_op(int s, int target, ResampleKind kind, const FilterSpec& spec,
                               Boundary boundary = Boundary::periodic);

/// 3×3 cross-correlation, same resolution, with periodic or zero padding.
/// x: (n, in, s, s), weight: (out, in, 3, 3), bias: (1, 1, 1, out).
template <class T>
Var<T> conv2d(Tape<T>& tape, const Var<T>& x, const Var<T>& weight, const Var<T>& bias, Boundary boundary);

template <class T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  explicit BatchNormState(std::size_t channels = 0)
      : running_mean({1, 1, 1, channels}, T(0)), running_var({1, 1, 1, channels}, T(1)) {}
};

/// Per-channel normalization over (n, h, w). Train mode uses the biased batch
/// variance and updates running statistics (unbiased variance); eval mode is
/// the affine map given by the running statistics.
template <class T>
Var<T> batch_norm(Tape<T>& tape, const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, BatchNormState<T>& state,
                  bool train);

template <class T>
Var<T> resample(Tape<T>& tape, const Var<T>& x, const ResampleOp<T>& op);

template <class T>
Var<T> leaky_relu(Tape<T>& tape, const Var<T>& x, double slope);

/// down(σ(up(x))) as a single node; only the sign pattern of up(x) is kept.
template <class T>
Var<T> filtered_activation(Tape<T>& tape, const Var<T>& x, const ResampleOp<T>& up, const ResampleOp<T>& down,
                           double slope);

template <class T>
Var<T> add(Tape<T>& tape, const Var<T>& a, const Var<T>& b);

/// Concatenation along the channel axis.
template <class T>
Var<T> concat(Tape<T>& tape, const std::vector<Var<T>>& xs);

template <class T>
Var<T> scale(Tape<T>& tape, const Var<T>& x, T factor);

/// Sum of all entries, as a (1,1,1,1) scalar.
template <class T>
Var<T> sum(Tape<T>& tape, const Var<T>& x);

/// Mean absolute error; the subgradient at ties is zero.
template <class T>
Var<T> l1_loss(Tape<T>& tape, const Var<T>& pred, const Var<T>& target);

}  // namespace ad
}  // namespace cno
