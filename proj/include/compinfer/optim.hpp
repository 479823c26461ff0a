#pragma once
#include <cmath>
#include <vector>

#include "compinfer/tensor.hpp"

namespace compinfer {

struct AdamConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(std::vector<Tensor*> params, AdamConfig cfg = {})
      : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (Tensor* p : params_) {
      m_.emplace_back(p->shape(), 0.0);
      v_.emplace_back(p->shape(), 0.0);
    }
  }

  // grads[i] pairs with params[i]; null entries are skipped (parameter unused
  // in this step's graph).
  void step(const std::vector<const Tensor*>& grads) {
    ++t_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
      if (!grads[i]) continue;
      Tensor& p = *params_[i];
      const Tensor& gr = *grads[i];
      for (long j = 0; j < p.numel(); ++j) {
        double gj = gr.v[j];
        m_[i].v[j] = cfg_.beta1 * m_[i].v[j] + (1.0 - cfg_.beta1) * gj;
        v_[i].v[j] = cfg_.beta2 * v_[i].v[j] + (1.0 - cfg_.beta2) * gj * gj;
        double mhat = m_[i].v[j] / bc1;
        double vhat = v_[i].v[j] / bc2;
        p.v[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

  long steps() const { return t_; }

 private:
  std::vector<Tensor*> params_;
  std::vector<Tensor> m_, v_;
  AdamConfig cfg_;
  long t_ = 0;
};

// Scales the given gradients in place so their global L2 norm is at most
// max_norm. Returns the pre-clip norm.
inline double clip_grad_norm(std::vector<Tensor*> grads, double max_norm) {
  double sq = 0.0;
  for (Tensor* gr : grads) {
    if (!gr || gr->numel() == 0) continue;
    sq += gr->vec().squaredNorm();
  }
  double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    double s = max_norm / norm;
    for (Tensor* gr : grads) {
      if (!gr || gr->numel() == 0) continue;
      gr->vec() *= s;
    }
  }
  return norm;
}

}  // namespace compinfer
