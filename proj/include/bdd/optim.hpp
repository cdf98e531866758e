#pragma once

#include <vector>

#include "bdd/tensor.hpp"

namespace bdd {

/// SGD with heavy-ball momentum:
///   v <- momentum * v + grad;  param <- param - lr * v;  grad <- 0.
class Sgd {
 public:
  Sgd(std::vector<Tensor> params, double lr, double momentum = 0.0);

  // Throws ContractError if any parameter has no gradient.
  void step();

  double lr() const { return lr_; }
  double momentum() const { return momentum_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> velocity_;
  double lr_;
  double momentum_;
};

// One-shot form of Sgd::step with fresh (zero) velocity.
void sgd_step(std::vector<Tensor>& params, double lr);

}  // namespace bdd
