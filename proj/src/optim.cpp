#include "bdd/optim.hpp"

#include <string>

#include "bdd/errors.hpp"

namespace bdd {

Sgd::Sgd(std::vector<Tensor> params, double lr, double momentum)
    : params_(std::move(params)), lr_(lr), momentum_(momentum) {
  if (lr < 0.0) throw ParameterError("sgd: negative learning rate");
  if (momentum < 0.0 || momentum >= 1.0) throw ParameterError("sgd: momentum must be in [0,1)");
  velocity_.reserve(params_.size());
  for (const auto& p : params_) velocity_.emplace_back(p.numel(), 0.0);
}

void Sgd::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!params_[i].has_grad()) {
      throw ContractError("sgd: parameter " + std::to_string(i) + " has no gradient");
    }
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    auto values = p.mutable_values();
    auto grad = p.mutable_grad();
    auto& v = velocity_[i];
    for (std::size_t k = 0; k < values.size(); ++k) {
      v[k] = momentum_ * v[k] + grad[k];
      values[k] -= lr_ * v[k];
    }
    p.zero_grad();
  }
}

void sgd_step(std::vector<Tensor>& params, double lr) {
  Sgd(params, lr, 0.0).step();
}

}  // namespace bdd
