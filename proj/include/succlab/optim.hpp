#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Core>

namespace succlab {

/// Adam over a fixed list of dense parameter blocks.
class Adam {
 public:
  explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  /// `params[i]` is updated in place with `grads[i]`; shapes must stay fixed across calls.
  void step(const std::vector<Eigen::MatrixXd*>& params, const std::vector<const Eigen::MatrixXd*>& grads) {
    if (m_.empty()) {
      for (const auto* p : params) {
        m_.push_back(Eigen::MatrixXd::Zero(p->rows(), p->cols()));
        v_.push_back(Eigen::MatrixXd::Zero(p->rows(), p->cols()));
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto g = grads[i]->array();
      m_[i].array() = beta1_ * m_[i].array() + (1.0 - beta1_) * g;
      v_[i].array() = beta2_ * v_[i].array() + (1.0 - beta2_) * g.square();
      params[i]->array() -= lr_ * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + eps_);
    }
  }

 private:
  double lr_, beta1_, beta2_, eps_;
  int t_ = 0;
  std::vector<Eigen::MatrixXd> m_, v_;
};

}  // namespace succlab
