#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hisem {

/// Scalar type for every training-path value. This is the single switch
/// point for a float32 build; everything downstream uses `Real`.
using Real = double;

using Shape = std::vector<std::size_t>;

std::size_t numel_of(const Shape& shape);
std::string to_string(const Shape& shape);

/// Thrown when operand shapes do not fit an operation.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {
struct TensorStorage {
  Shape shape;
  std::vector<Real> data;
  std::vector<Real> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool is_leaf = true;
};
}  // namespace detail

/// Dense row-major tensor handle. Copies share storage; use `clone()` for a
/// deep copy. Values are treated as immutable once produced by an op; only
/// parameters are written, and only between training steps.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, Real fill = 0.0);
  Tensor(Shape shape, std::vector<Real> values);

  static Tensor scalar(Real value);
  /// Leaf tensor that accumulates gradients.
  static Tensor parameter(Shape shape, std::vector<Real> values);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const Real> values() const;
  std::span<Real> mutable_values();
  Real item() const;
  Real operator[](std::size_t flat_index) const { return values()[flat_index]; }
  Real at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);
  bool is_leaf() const;

  bool has_grad() const;
  /// Gradient buffer; zeros of the right shape when nothing has accumulated.
  std::vector<Real> grad() const;
  /// Read-only view of the gradient buffer; empty when nothing accumulated.
  std::span<const Real> grad_view() const;
  /// Gradient buffer, allocated as zeros on first use. A handle does not
  /// own its storage, so this is available through const handles.
  std::span<Real> mutable_grad() const;
  void zero_grad();

  Tensor clone() const;
  const void* identity() const { return impl_.get(); }

 private:
  friend class Tape;
  friend Tensor make_op_result(Shape, std::vector<Real>, const std::vector<Tensor>&,
                               std::function<void(const Tensor&)>);
  detail::TensorStorage& storage() const;
  std::shared_ptr<detail::TensorStorage> impl_;
};

/// Records differentiable ops in execution order. Constructing a Tape makes
/// it current on this thread until it is destroyed; ops record only when a
/// tape is current and some input requires a gradient.
class Tape {
 public:
  using BackwardFn = std::function<void(const Tensor& output)>;

  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current();

  void record(std::vector<Tensor> inputs, Tensor output, BackwardFn fn);

  /// Seeds d(loss)/d(loss) = 1 and walks nodes in exact reverse recording
  /// order. Leaf gradients accumulate across calls; intermediate gradients
  /// are reset on every call.
  void backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardFn fn;
  };
  std::vector<Node> nodes_;
  Tape* previous_ = nullptr;
};

/// Builds an op output and, when recording applies, registers `backward`
/// (which reads `output.grad()` and accumulates into its inputs).
Tensor make_op_result(Shape shape, std::vector<Real> values, const std::vector<Tensor>& inputs,
                      std::function<void(const Tensor&)> backward);

/// Adds `delta` into the gradient buffer of `t` if it tracks gradients.
void accumulate_grad(const Tensor& t, std::span<const Real> delta);

}  // namespace hisem
