#include "learn/tensor.hpp"

#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace learn {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Tensor::Tensor() = default;

Tensor::Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

Tensor::Tensor(Shape shape, double fill)
    : Tensor(shape, Vector::Constant(static_cast<Eigen::Index>(numel(shape)),
                                     fill)) {}

Tensor::Tensor(Shape shape, Vector values)
    : node_(std::make_shared<detail::Node>()) {
  for (auto d : shape) {
    if (d == 0) {
      throw std::invalid_argument("tensor dimensions must be positive, got " +
                                  to_string(shape));
    }
  }
  if (numel(shape) != static_cast<std::size_t>(values.size())) {
    throw std::invalid_argument("tensor of shape " + to_string(shape) +
                                " cannot hold " +
                                std::to_string(values.size()) + " values");
  }
  node_->shape = std::move(shape);
  node_->value = std::move(values);
}

Tensor Tensor::scalar(double value) {
  return Tensor(Shape{1}, Vector::Constant(1, value));
}

Tensor Tensor::from(Shape shape, std::initializer_list<double> values) {
  Vector v(static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (double x : values) v[i++] = x;
  return Tensor(std::move(shape), std::move(v));
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= node_->shape.size()) {
    throw std::out_of_range("axis " + std::to_string(axis) +
                            " out of range for shape " +
                            to_string(node_->shape));
  }
  return node_->shape[axis];
}

std::size_t Tensor::size() const {
  return static_cast<std::size_t>(node_->value.size());
}

const Vector& Tensor::values() const { return node_->value; }
Vector& Tensor::values() { return node_->value; }

double Tensor::item() const {
  if (size() != 1) {
    throw std::logic_error("item() on tensor of shape " + to_string(shape()));
  }
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  if (node_->backward) {
    throw std::logic_error("requires_grad can only be changed on leaf tensors");
  }
  node_->requires_grad = on;
  if (!on) node_->grad.resize(0);
  return *this;
}

Vector Tensor::grad() const {
  if (node_->grad.size() == 0) return Vector::Zero(node_->value.size());
  return node_->grad;
}

bool Tensor::has_grad() const { return node_->grad.size() != 0; }

Vector& Tensor::mutable_grad() {
  if (node_->grad.size() == 0) node_->grad = Vector::Zero(node_->value.size());
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_->grad.size() != 0) node_->grad.setZero();
}

Tensor Tensor::clone() const {
  Tensor out(node_->shape, node_->value);
  out.node_->requires_grad = node_->requires_grad && !node_->backward;
  return out;
}

Tensor Tensor::detach() const { return Tensor(node_->shape, node_->value); }

Tensor Tensor::make_result(Shape shape, Vector values,
                           std::vector<Tensor> inputs,
                           detail::BackwardFn backward) {
  Tensor out(std::move(shape), std::move(values));
  bool track = false;
  for (const auto& in : inputs) track = track || in.requires_grad();
  if (track) {
    out.node_->requires_grad = true;
    out.node_->backward = std::move(backward);
    out.node_->parents.reserve(inputs.size());
    for (auto& in : inputs) out.node_->parents.push_back(std::move(in.node_));
  }
  return out;
}

namespace {

std::vector<detail::Node*> topological_order(detail::Node* root) {
  std::vector<detail::Node*> order;
  if (!root->requires_grad) return order;
  std::unordered_set<detail::Node*> seen;
  // Iterative post-order DFS; graphs can be thousands of nodes deep.
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

class MapSink final : public detail::GradSink {
 public:
  MapSink(detail::Node* node,
          std::unordered_map<detail::Node*, Vector>& interior)
      : node_(node), interior_(interior) {}

  bool wants(std::size_t parent) const override {
    return node_->parents[parent]->requires_grad;
  }

  Vector& grad(std::size_t parent) override {
    detail::Node* p = node_->parents[parent].get();
    Vector& buf = p->backward ? interior_[p] : p->grad;
    if (buf.size() == 0) buf = Vector::Zero(p->value.size());
    return buf;
  }

 private:
  detail::Node* node_;
  std::unordered_map<detail::Node*, Vector>& interior_;
};

}  // namespace

void Tensor::backward() const {
  if (size() != 1) {
    throw std::invalid_argument("backward() needs a scalar loss, got shape " +
                                to_string(shape()));
  }
  if (!node_->requires_grad) return;

  auto order = topological_order(node_.get());
  std::unordered_map<detail::Node*, Vector> interior;
  if (node_->backward) {
    interior[node_.get()] = Vector::Ones(1);
  } else {
    if (node_->grad.size() == 0) node_->grad = Vector::Zero(1);
    node_->grad[0] += 1.0;
  }

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (!node->backward) continue;
    auto found = interior.find(node);
    if (found == interior.end()) continue;
    Vector grad_out = std::move(found->second);
    interior.erase(found);
    MapSink sink(node, interior);
    node->backward(grad_out, sink);
  }
}

std::vector<const detail::Node*> computation_record(const Tensor& root) {
  std::vector<const detail::Node*> record;
  if (!root.defined()) return record;
  for (auto* n : topological_order(root.node_.get())) {
    if (n->backward) record.push_back(n);
  }
  return record;
}

}  // namespace learn
