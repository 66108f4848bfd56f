#pragma once

#include "pv/nn/network.hpp"

namespace pv::nn {

/// Adam over every parameter of one network. The optimizer only ever sees the
/// network it was constructed for, so a frozen encoder cannot be updated.
class Adam {
 public:
  Adam(const Network& net, double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);

  void step(Network& net, const Gradients& grads);
  long long steps() const { return t_; }

 private:
  double lr_, b1_, b2_, eps_;
  long long t_ = 0;
  Gradients m_, v_;
};

}  // namespace pv::nn
