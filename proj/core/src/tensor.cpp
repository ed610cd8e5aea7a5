#include "hisem/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>
#include <utility>

namespace hisem {

std::size_t numel_of(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have rank >= 1");
  for (auto extent : shape) {
    if (extent == 0) throw DimensionError("tensor extents must be positive, got " + to_string(shape));
  }
}

thread_local Tape* g_current_tape = nullptr;

}  // namespace

Tensor::Tensor(Shape shape, Real fill) : impl_(std::make_shared<detail::TensorStorage>()) {
  check_shape(shape);
  impl_->data.assign(numel_of(shape), fill);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<Real> values)
    : impl_(std::make_shared<detail::TensorStorage>()) {
  check_shape(shape);
  if (numel_of(shape) != values.size()) {
    throw DimensionError("shape " + to_string(shape) + " holds " + std::to_string(numel_of(shape)) +
                         " values, got " + std::to_string(values.size()));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

Tensor Tensor::scalar(Real value) { return Tensor({1}, std::vector<Real>{value}); }

Tensor Tensor::parameter(Shape shape, std::vector<Real> values) {
  Tensor t(std::move(shape), std::move(values));
  t.impl_->requires_grad = true;
  return t;
}

detail::TensorStorage& Tensor::storage() const {
  if (!impl_) throw std::logic_error("use of undefined tensor");
  return *impl_;
}

const Shape& Tensor::shape() const { return storage().shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + to_string(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return storage().data.size(); }

std::span<const Real> Tensor::values() const { return storage().data; }

std::span<Real> Tensor::mutable_values() { return storage().data; }

Real Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + to_string(shape()));
  return storage().data[0];
}

Real Tensor::at(std::size_t row, std::size_t col) const {
  const auto& s = shape();
  if (s.size() != 2) throw DimensionError("at(row, col) needs a matrix, got " + to_string(s));
  return storage().data[row * s[1] + col];
}

bool Tensor::requires_grad() const { return storage().requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  storage().requires_grad = flag;
  return *this;
}

bool Tensor::is_leaf() const { return storage().is_leaf; }

bool Tensor::has_grad() const { return !storage().grad.empty(); }

std::vector<Real> Tensor::grad() const {
  const auto& s = storage();
  if (s.grad.empty()) return std::vector<Real>(s.data.size(), 0.0);
  return s.grad;
}

std::span<const Real> Tensor::grad_view() const { return storage().grad; }

std::span<Real> Tensor::mutable_grad() const {
  auto& s = storage();
  if (s.grad.empty()) s.grad.assign(s.data.size(), 0.0);
  return s.grad;
}

void Tensor::zero_grad() {
  auto& s = storage();
  std::fill(s.grad.begin(), s.grad.end(), 0.0);
}

Tensor Tensor::clone() const {
  Tensor t(shape(), std::vector<Real>(values().begin(), values().end()));
  t.impl_->requires_grad = requires_grad();
  return t;
}

Tape::Tape() : previous_(g_current_tape) { g_current_tape = this; }

Tape::~Tape() { g_current_tape = previous_; }

Tape* Tape::current() { return g_current_tape; }

void Tape::record(std::vector<Tensor> inputs, Tensor output, BackwardFn fn) {
  nodes_.push_back(Node{std::move(inputs), std::move(output), std::move(fn)});
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw DimensionError("backward() needs a scalar loss, got " + to_string(loss.shape()));
  }
  for (auto& node : nodes_) {
    auto& g = node.output.storage().grad;
    g.assign(node.output.numel(), 0.0);
  }
  if (!loss.requires_grad()) return;
  Tensor seed = loss;
  seed.mutable_grad()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    it->fn(it->output);
  }
}

Tensor make_op_result(Shape shape, std::vector<Real> values, const std::vector<Tensor>& inputs,
                      std::function<void(const Tensor&)> backward) {
  Tensor out(std::move(shape), std::move(values));
  Tape* tape = Tape::current();
  if (tape == nullptr) return out;
  bool any = std::any_of(inputs.begin(), inputs.end(),
                         [](const Tensor& t) { return t.defined() && t.requires_grad(); });
  if (!any) return out;
  out.impl_->requires_grad = true;
  out.impl_->is_leaf = false;
  tape->record(inputs, out, std::move(backward));
  return out;
}

void accumulate_grad(const Tensor& t, std::span<const Real> delta) {
  if (!t.requires_grad()) return;
  auto g = t.mutable_grad();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

}  // namespace hisem
