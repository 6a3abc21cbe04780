#ifndef STREAMID_OPTIM_HPP_
#define STREAMID_OPTIM_HPP_

#include <cmath>
#include <vector>

#include "streamid/backbone.hpp"

namespace streamid {

// Adam with decoupled weight decay. Decay is applied to every parameter
// (weights, biases, batch-norm affine) uniformly.
class AdamW {
 public:
  AdamW(std::vector<ParamView> params, double lr, double weight_decay,
        double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)),
        lr_(lr),
        wd_(weight_decay),
        beta1_(beta1),
        beta2_(beta2),
        eps_(eps) {
    for (const auto& p : params_) {
      m_.emplace_back(p.size, 0.0);
      v_.emplace_back(p.size, 0.0);
    }
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
      auto& p = params_[pi];
      auto& m = m_[pi];
      auto& v = v_[pi];
      for (std::size_t i = 0; i < p.size; ++i) {
        const double g = p.grad[i];
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        p.value[i] -= lr_ * wd_ * p.value[i];
        p.value[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

 private:
  std::vector<ParamView> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, wd_, beta1_, beta2_, eps_;
  long long t_ = 0;
};

}  // namespace streamid

#endif  // STREAMID_OPTIM_HPP_
