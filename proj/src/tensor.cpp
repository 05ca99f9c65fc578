#include "mdr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "mdr/error.hpp"

namespace mdr {

namespace {
thread_local bool g_grad_mode = true;
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : impl_(std::make_shared<detail::TensorImpl>()) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
  }
  impl_->data.assign(shape_numel(shape), fill);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : impl_(std::make_shared<detail::TensorImpl>()) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("shape " + shape_str(shape) + " needs " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(data.size()));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

Tensor Tensor::uniform(Shape shape, double lo, double hi, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.impl_->data) v = dist(rng);
  return t;
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i) t.impl_->data[i * n + i] = 1.0;
  return t;
}

const Shape& Tensor::shape() const {
  if (!impl_) throw Error("undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                     shape_str(shape()));
  }
  return impl_->shape[axis];
}

std::size_t Tensor::numel() const { return impl_ ? impl_->data.size() : 0; }

std::span<const double> Tensor::data() const {
  if (!impl_) throw Error("undefined tensor");
  return impl_->data;
}

std::span<double> Tensor::data_mut() {
  if (!impl_) throw Error("undefined tensor");
  return impl_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

std::size_t Tensor::flat_index(std::initializer_list<std::size_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) {
    throw ShapeError("index rank " + std::to_string(index.size()) + " for shape " + shape_str(s));
  }
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= s[axis]) throw ShapeError("index out of range for shape " + shape_str(s));
    flat = flat * s[axis] + i;
    ++axis;
  }
  return flat;
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  return impl_->data[flat_index(index)];
}

double& Tensor::at(std::initializer_list<std::size_t> index) {
  return impl_->data[flat_index(index)];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  if (!impl_) throw Error("undefined tensor");
  if (impl_->node) throw Error("requires_grad can only be set on leaf tensors");
  impl_->requires_grad = flag;
  return *this;
}

bool Tensor::tracks_grad() const { return impl_ && (impl_->requires_grad || impl_->node); }

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!impl_) throw Error("undefined tensor");
  return impl_->grad;
}

Tensor Tensor::grad_tensor() const {
  if (!has_grad()) return Tensor(shape());
  return Tensor(shape(), impl_->grad);
}

void Tensor::zero_grad() {
  if (impl_) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return Tensor(shape(), impl_->data); }

Tensor Tensor::reshaped_copy(Shape shape) const { return Tensor(std::move(shape), impl_->data); }

const char* Tensor::op_name() const {
  return impl_ && impl_->node ? impl_->node->op : "leaf";
}

void Tensor::backward() const {
  if (!impl_) throw Error("backward() on undefined tensor");
  if (numel() != 1) {
    throw ShapeError("backward() needs a single-element loss, got shape " + shape_str(shape()));
  }
  if (!tracks_grad()) throw Error("backward() on a tensor that does not track gradients");

  // Iterative post-order DFS: every input precedes its consumers in `order`.
  std::vector<detail::TensorImpl*> order;
  std::unordered_set<detail::TensorImpl*> visited;
  std::vector<std::pair<detail::TensorImpl*, std::size_t>> stack;
  stack.emplace_back(impl_.get(), 0);
  visited.insert(impl_.get());
  while (!stack.empty()) {
    auto& [node_impl, next] = stack.back();
    const auto* node = node_impl->node.get();
    if (node && next < node->inputs.size()) {
      auto* child = node->inputs[next++].impl();
      if (child->node && visited.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(node_impl);
    stack.pop_back();
  }

  for (auto* t : order) {
    if (t->node) t->grad.assign(t->data.size(), 0.0);
  }
  if (impl_->node) {
    impl_->grad[0] = 1.0;
  } else {
    impl_->grad.resize(1, 0.0);
    impl_->grad[0] += 1.0;
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* t = *it;
    if (t->node) t->node->backward(t->grad, t->data);
  }
  // Intermediate gradients are not retained.
  for (auto* t : order) {
    if (t->node) std::vector<double>().swap(t->grad);
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_mode) { g_grad_mode = false; }
NoGradGuard::~NoGradGuard() { g_grad_mode = previous_; }
bool grad_mode_enabled() { return g_grad_mode; }

namespace detail {

Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   std::vector<Tensor> inputs, BackwardFn backward) {
  for (double v : data) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + op);
  }
  Tensor out(std::move(shape), std::move(data));
  if (!g_grad_mode) return out;
  bool track = false;
  for (const auto& in : inputs) track = track || in.tracks_grad();
  if (track) {
    auto node = std::make_shared<Node>();
    node->op = op;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
    out.impl()->node = std::move(node);
  }
  return out;
}

std::span<double> grad_sink(const Tensor& t) {
  if (!t.tracks_grad()) return {};
  auto* impl = t.impl();
  if (impl->grad.size() != impl->data.size()) impl->grad.assign(impl->data.size(), 0.0);
  return impl->grad;
}

}  // namespace detail

}  // namespace mdr
