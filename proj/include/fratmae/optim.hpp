#ifndef FRATMAE_OPTIM_HPP
#define FRATMAE_OPTIM_HPP

#include <cmath>
#include <map>
#include <string>

#include "fratmae/params.hpp"

namespace fratmae::nn {

// Cosine annealing: lr_min + 0.5 * (lr_init - lr_min) * (1 + cos(pi * s / S)).
inline double lr_schedule(int64_t step, int64_t total_steps, double lr_init, double lr_min = 0.0) {
  if (step < 0 || step > total_steps) throw ConfigError("lr_schedule: step out of range");
  if (total_steps == 0) return lr_init;
  const double t = static_cast<double>(step) / static_cast<double>(total_steps);
  return lr_min + 0.5 * (lr_init - lr_min) * (1.0 + std::cos(M_PI * t));
}

// AdamW with decoupled weight decay: the decay term is applied directly to
// the parameter and never enters the moment estimates. Decay skips 1-D
// tensors (biases, norm affines, scalar temperatures).
template <typename S>
struct AdamW {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  int64_t step_count = 0;
  std::map<std::string, Tensor<S>> m, v;

  void step(ParamStore<S>& params, const std::map<std::string, typename Graph<S>::Var>& bound,
            const Graph<S>& g, double lr) {
    ++step_count;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
    for (const auto& [name, var] : bound) {
      Tensor<S>& p = params.at(name);
      const Tensor<S>& grad = g.grad(var);
      Tensor<S>& mm = m.try_emplace(name, Tensor<S>(p.shape)).first->second;
      Tensor<S>& vv = v.try_emplace(name, Tensor<S>(p.shape)).first->second;
      const double wd = p.ndim() >= 2 ? weight_decay : 0.0;
      for (int64_t i = 0; i < p.numel(); ++i) {
        const double gi = static_cast<double>(grad.v[i]);
        const double mi = beta1 * static_cast<double>(mm.v[i]) + (1.0 - beta1) * gi;
        const double vi = beta2 * static_cast<double>(vv.v[i]) + (1.0 - beta2) * gi * gi;
        mm.v[i] = static_cast<S>(mi);
        vv.v[i] = static_cast<S>(vi);
        const double update = (mi / bc1) / (std::sqrt(vi / bc2) + eps) +
                              wd * static_cast<double>(p.v[i]);
        p.v[i] = static_cast<S>(static_cast<double>(p.v[i]) - lr * update);
      }
    }
  }
};

}  // namespace fratmae::nn

#endif
