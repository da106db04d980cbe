#ifndef LEARN_TENSOR_HPP
#define LEARN_TENSOR_HPP

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace learn {

using Shape = std::vector<std::size_t>;
using Vector = Eigen::VectorXd;
using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class Tensor;

namespace detail {
struct Node;
}

/// Operations visited by one backward traversal, in topological order.
std::vector<const detail::Node*> computation_record(const Tensor& root);

namespace detail {

struct Node;

// Handed to a backward rule; hands out gradient buffers for the parents that
// take part in differentiation.
class GradSink {
 public:
  virtual ~GradSink() = default;
  virtual bool wants(std::size_t parent) const = 0;
  virtual Vector& grad(std::size_t parent) = 0;
};

using BackwardFn = std::function<void(const Vector& grad_out, GradSink& sink)>;

struct Node {
  Shape shape;
  Vector value;
  Vector grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;
};

}  // namespace detail

/// Dense row-major tensor of doubles with optional gradient tracking.
///
/// A Tensor is a handle: copies share storage and graph identity, the same way
/// a framework tensor does. Use clone() for a deep copy. Operations on tensors
/// that require gradients record a backward rule; operations on plain tensors
/// record nothing.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, Vector values);

  static Tensor scalar(double value);
  static Tensor from(Shape shape, std::initializer_list<double> values);

  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  bool defined() const { return static_cast<bool>(node_); }

  const Vector& values() const;
  Vector& values();
  double item() const;
  double operator[](std::size_t i) const { return values()[i]; }
  double& operator[](std::size_t i) { return values()[i]; }

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);

  /// Accumulated gradient; zeros when nothing has been accumulated.
  Vector grad() const;
  bool has_grad() const;
  Vector& mutable_grad();
  void zero_grad();

  /// Reverse-mode pass from this scalar. Gradients add onto existing buffers.
  void backward() const;

  Tensor clone() const;
  Tensor detach() const;
  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  // Used by operation implementations.
  static Tensor make_result(Shape shape, Vector values,
                            std::vector<Tensor> inputs,
                            detail::BackwardFn backward);

 private:
  friend std::vector<const detail::Node*> computation_record(const Tensor&);
  explicit Tensor(std::shared_ptr<detail::Node> node);
  std::shared_ptr<detail::Node> node_;
};

}  // namespace learn

#endif  // LEARN_TENSOR_HPP
