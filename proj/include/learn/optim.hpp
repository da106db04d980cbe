#ifndef LEARN_OPTIM_HPP
#define LEARN_OPTIM_HPP

#include <vector>

#include "learn/tensor.hpp"

namespace learn {

/// SGD with classical momentum: v = mu*v + g; p -= lr*v.
class Sgd {
 public:
  Sgd(std::vector<Tensor> params, double lr, double momentum = 0.9);

  void step();
  void zero_grad();
  double learning_rate() const { return lr_; }

 private:
  std::vector<Tensor> params_;
  std::vector<Vector> velocity_;
  double lr_;
  double momentum_;
};

/// Adaptive moment estimation with bias correction.
class Adam {
 public:
  Adam(std::vector<Tensor> params, double lr, double beta1 = 0.9,
       double beta2 = 0.999, double eps = 1e-8);

  void step();
  void zero_grad();
  long steps() const { return t_; }

 private:
  std::vector<Tensor> params_;
  std::vector<Vector> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

}  // namespace learn

#endif  // LEARN_OPTIM_HPP
