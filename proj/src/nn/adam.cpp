#include "pv/nn/adam.hpp"

#include <cmath>

#include "pv/errors.hpp"

namespace pv::nn {

Adam::Adam(const Network& net, double learning_rate, double beta1, double beta2, double eps)
    : lr_(learning_rate), b1_(beta1), b2_(beta2), eps_(eps), m_(net.zero_gradients()),
      v_(net.zero_gradients()) {
  if (!(learning_rate > 0.0)) throw ArgumentError("learning rate must be positive");
}

void Adam::step(Network& net, const Gradients& grads) {
  if (grads.size() != m_.size()) throw ShapeError("adam: gradient layout differs from network");
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t l = 0; l < grads.size(); ++l) {
    auto p = net.layer(l).params();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double g = grads[l][i];
      m_[l][i] = b1_ * m_[l][i] + (1.0 - b1_) * g;
      v_[l][i] = b2_ * v_[l][i] + (1.0 - b2_) * g * g;
      p[i] -= lr_ * (m_[l][i] / c1) / (std::sqrt(v_[l][i] / c2) + eps_);
    }
  }
}

}  // namespace pv::nn
