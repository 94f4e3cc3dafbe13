#ifndef FRATMAE_PARAMS_HPP
#define FRATMAE_PARAMS_HPP

#include <map>
#include <string>
#include <vector>

#include "fratmae/graph.hpp"
#include "fratmae/rng.hpp"
#include "fratmae/tensor.hpp"

namespace fratmae::nn {

// Named parameter arrays. std::map keeps iteration order sorted by name, so
// every walk over the store (init, optimizer, serialization) is deterministic
// and independent of construction order.
template <typename S>
struct ParamStore {
  std::map<std::string, Tensor<S>> items;

  Tensor<S>& add(const std::string& name, Shape shape) {
    auto [it, fresh] = items.emplace(name, Tensor<S>(std::move(shape)));
    if (!fresh) throw ConfigError("duplicate parameter name: " + name);
    return it->second;
  }

  Tensor<S>& at(const std::string& name) {
    auto it = items.find(name);
    if (it == items.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }
  const Tensor<S>& at(const std::string& name) const {
    auto it = items.find(name);
    if (it == items.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }
  bool has(const std::string& name) const { return items.count(name) != 0; }
  size_t size() const { return items.size(); }

  int64_t numel() const {
    int64_t n = 0;
    for (const auto& [k, t] : items) n += t.numel();
    return n;
  }
};

inline bool ends_with(const std::string& s, const std::string& suf) {
  return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}

// Initialization is keyed on (seed, tensor name), so a tensor gets the same
// initial values no matter which other modules exist in the store. Suffix
// convention: ".b"/".beta" start at zero, ".gamma" at one, everything else
// truncated normal (sigma 0.02).
template <typename S>
void init_params(ParamStore<S>& store, uint64_t seed, double sigma = 0.02) {
  for (auto& [name, t] : store.items) {
    Rng rng = Rng::fork(seed, name);
    if (ends_with(name, ".b") || ends_with(name, ".beta")) {
      std::fill(t.v.begin(), t.v.end(), S(0));
    } else if (ends_with(name, ".gamma")) {
      std::fill(t.v.begin(), t.v.end(), S(1));
    } else {
      for (auto& x : t.v) x = static_cast<S>(rng.trunc_normal(sigma));
    }
  }
}

// Per-step binding of parameters to graph leaves. Lazy: only parameters the
// forward pass actually touches become graph nodes, which is what makes
// ablation gating exact (untouched parameters see no gradient and no update).
template <typename S>
struct Binder {
  Graph<S>* g = nullptr;
  ParamStore<S>* store = nullptr;
  std::map<std::string, typename Graph<S>::Var> bound;

  Binder(Graph<S>& graph, ParamStore<S>& s) : g(&graph), store(&s) {}

  typename Graph<S>::Var operator()(const std::string& name) {
    auto it = bound.find(name);
    if (it != bound.end()) return it->second;
    const auto var = g->leaf(store->at(name));
    bound.emplace(name, var);
    return var;
  }
};

}  // namespace fratmae::nn

#endif
