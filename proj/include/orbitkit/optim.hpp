#pragma once

#include <cmath>

#include "orbitkit/params.hpp"

namespace orbitkit {

struct AdamConfig {
  double lr_pretrained = 1e-5;
  double lr_new = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with one learning rate per ParamGroup.
class Adam {
 public:
  Adam() = default;
  Adam(const ParamSet<float>& params, AdamConfig cfg) : cfg_(cfg) {
    for (const auto& e : params.entries()) {
      m_.emplace_back(e.value.shape(), 0.0f);
      v_.emplace_back(e.value.shape(), 0.0f);
    }
  }

  double lr_for(ParamGroup g) const { return g == ParamGroup::New ? cfg_.lr_new : cfg_.lr_pretrained; }

  void step(ParamSet<float>& params, const std::vector<Tensor<float>>& grads) {
    if (grads.size() != params.size() || m_.size() != params.size())
      throw std::invalid_argument("Adam: gradient count does not match parameters");
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& e = params.entries()[i];
      const double lr = lr_for(e.group);
      auto p = e.value.values();
      auto g = grads[i].values();
      auto m = m_[i].values();
      auto v = v_[i].values();
      for (std::size_t k = 0; k < p.size(); ++k) {
        const double gk = g[k];
        const double mk = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * gk;
        const double vk = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * gk * gk;
        m[k] = static_cast<float>(mk);
        v[k] = static_cast<float>(vk);
        p[k] = static_cast<float>(p[k] - lr * (mk / bc1) / (std::sqrt(vk / bc2) + cfg_.eps));
      }
    }
  }

  std::int64_t steps() const { return step_; }
  const AdamConfig& config() const { return cfg_; }

  void to_checkpoint(Checkpoint& ck, const ParamSet<float>& params) const {
    for (std::size_t i = 0; i < m_.size(); ++i) {
      ck.add("opt.m." + params.entries()[i].name, m_[i]);
      ck.add("opt.v." + params.entries()[i].name, v_[i]);
    }
    ck.add("opt.step", Tensor<float>({1}, static_cast<float>(step_)));
  }

  void from_checkpoint(const Checkpoint& ck, const ParamSet<float>& params) {
    for (std::size_t i = 0; i < m_.size(); ++i) {
      m_[i] = ck.at("opt.m." + params.entries()[i].name);
      v_[i] = ck.at("opt.v." + params.entries()[i].name);
      if (m_[i].shape() != params.entries()[i].value.shape() || v_[i].shape() != m_[i].shape())
        throw FormatError("optimizer moment shape mismatch for " + params.entries()[i].name);
    }
    step_ = static_cast<std::int64_t>(ck.at("opt.step")[0]);
  }

 private:
  AdamConfig cfg_;
  std::vector<Tensor<float>> m_, v_;
  std::int64_t step_ = 0;
};

/// Scales grads in place so their global L2 norm is at most max_norm; returns the norm before.
inline double clip_grad_norm(std::vector<Tensor<float>>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (float x : g.values()) sq += double(x) * x;
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const float s = static_cast<float>(max_norm / norm);
    for (auto& g : grads)
      for (auto& x : g.values()) x *= s;
  }
  return norm;
}

}  // namespace orbitkit
