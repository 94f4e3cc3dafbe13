#ifndef FRATMAE_TESTS_GRAD_CHECK_HPP
#define FRATMAE_TESTS_GRAD_CHECK_HPP

#include <functional>
#include <map>
#include <stdexcept>
#include <vector>

#include "fratmae/params.hpp"

#include "fratmae/graph.hpp"
#include "fratmae/rng.hpp"
#include "fratmae/tensor.hpp"

// Central finite differences against reverse-mode gradients, in double.
// `build` gets a fresh graph plus one leaf per input tensor and returns the
// scalar loss var. Returns the max relative error over every input element.
namespace gradtest {

using fratmae::Tensor;
using Graphd = fratmae::nn::Graph<double>;
using Var = Graphd::Var;
using BuildFn = std::function<Var(Graphd&, const std::vector<Var>&)>;

inline double eval_loss(const std::vector<Tensor<double>>& inputs, const BuildFn& build) {
  Graphd g;
  std::vector<Var> leafs;
  leafs.reserve(inputs.size());
  for (const auto& t : inputs) leafs.push_back(g.leaf(t));
  return g.value(build(g, leafs)).v[0];
}

inline double max_rel_err(std::vector<Tensor<double>> inputs, const BuildFn& build,
                          double h = 1e-5) {
  Graphd g;
  std::vector<Var> leafs;
  for (const auto& t : inputs) leafs.push_back(g.leaf(t));
  const Var loss = build(g, leafs);
  g.backward(loss);
  std::vector<Tensor<double>> grads;
  for (Var v : leafs) grads.push_back(g.grad(v));

  double worst = 0.0;
  for (size_t p = 0; p < inputs.size(); ++p) {
    for (int64_t i = 0; i < inputs[p].numel(); ++i) {
      const double orig = inputs[p].v[i];
      inputs[p].v[i] = orig + h;
      const double fp = eval_loss(inputs, build);
      inputs[p].v[i] = orig - h;
      const double fm = eval_loss(inputs, build);
      inputs[p].v[i] = orig;
      const double fd = (fp - fm) / (2.0 * h);
      const double ad = grads[p].v[i];
      const double denom = std::max({1.0, std::fabs(fd), std::fabs(ad)});
      worst = std::max(worst, std::fabs(fd - ad) / denom);
    }
  }
  return worst;
}

inline Tensor<double> randn(fratmae::Rng& rng, fratmae::Shape shape, double sigma = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& x : t.v) x = rng.normal(0.0, sigma);
  return t;
}

// Same idea for model parameters living in a ParamStore: `build` gets a graph
// plus a binder over `store` and returns the loss var. Gradients of every
// parameter named in `names` are checked element-wise.
using ParamBuildFn =
    std::function<Var(Graphd&, fratmae::nn::Binder<double>&)>;

inline double param_grad_check(fratmae::nn::ParamStore<double>& store,
                               const std::vector<std::string>& names, const ParamBuildFn& build,
                               double h = 1e-5) {
  Graphd g;
  fratmae::nn::Binder<double> binder(g, store);
  const Var loss = build(g, binder);
  g.backward(loss);
  std::map<std::string, Tensor<double>> grads;
  for (const std::string& name : names) {
    auto it = binder.bound.find(name);
    if (it == binder.bound.end())
      throw std::runtime_error("param_grad_check: " + name + " not used by the forward pass");
    grads.emplace(name, g.grad(it->second));
  }

  const auto eval = [&]() {
    Graphd g2;
    fratmae::nn::Binder<double> b2(g2, store);
    return g2.value(build(g2, b2)).v[0];
  };

  double worst = 0.0;
  for (const std::string& name : names) {
    Tensor<double>& t = store.at(name);
    for (int64_t i = 0; i < t.numel(); ++i) {
      const double orig = t.v[i];
      t.v[i] = orig + h;
      const double fp = eval();
      t.v[i] = orig - h;
      const double fm = eval();
      t.v[i] = orig;
      const double fd = (fp - fm) / (2.0 * h);
      const double ad = grads.at(name).v[i];
      const double denom = std::max({1.0, std::fabs(fd), std::fabs(ad)});
      worst = std::max(worst, std::fabs(fd - ad) / denom);
    }
  }
  return worst;
}

}  // namespace gradtest

#endif
