#pragma once

#include <map>
#include <unordered_map>

#include "rawhdr/autodiff.hpp"
#include "rawhdr/core.hpp"

namespace rawhdr {

enum class Init { KaimingConv, Zero, One };

struct ParamSpec {
  std::string name;
  Shape shape;
  Init init = Init::KaimingConv;
  int fan_in = 0;  // for KaimingConv
};

/// Ordered, named parameter arrays. Order is the declaration order and fixes
/// the checkpoint layout.
struct ParamStore {
  std::vector<std::pair<std::string, Tensor>> items;
  std::unordered_map<std::string, std::size_t> index;

  bool has(const std::string& name) const { return index.count(name) > 0; }

  Tensor& at(const std::string& name) {
    auto it = index.find(name);
    if (it == index.end()) throw ValueError("ParamStore: unknown parameter '" + name + "'");
    return items[it->second].second;
  }

  const Tensor& at(const std::string& name) const {
    auto it = index.find(name);
    if (it == index.end()) throw ValueError("ParamStore: unknown parameter '" + name + "'");
    return items[it->second].second;
  }

  Tensor& create(const std::string& name, Shape shape) {
    if (has(name)) throw ValueError("ParamStore: duplicate parameter '" + name + "'");
    index[name] = items.size();
    items.emplace_back(name, Tensor(std::move(shape)));
    return items.back().second;
  }

  std::size_t count() const { return items.size(); }

  std::int64_t total_values() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : items) n += t.size();
    return n;
  }

  bool all_finite() const {
    for (const auto& [name, t] : items)
      if (!t.all_finite()) return false;
    return true;
  }
};

/// Fill a store from specs. Kaiming weights are zero-mean Gaussians with
/// variance 2/fan_in; each array gets its own seed derived from its name so
/// the result does not depend on declaration order.
inline ParamStore init_param_store(const std::vector<ParamSpec>& specs, std::uint64_t seed) {
  ParamStore store;
  for (const auto& spec : specs) {
    Tensor& t = store.create(spec.name, spec.shape);
    switch (spec.init) {
      case Init::Zero:
        break;
      case Init::One:
        std::fill(t.data.begin(), t.data.end(), 1.0);
        break;
      case Init::KaimingConv: {
        if (spec.fan_in <= 0) throw ValueError("init: fan_in required for '" + spec.name + "'");
        Rng rng(mix_seed(seed, hash_str(spec.name)));
        const double stddev = std::sqrt(2.0 / spec.fan_in);
        for (auto& v : t.data) v = stddev * rng.normal();
        break;
      }
    }
  }
  return store;
}

/// Per-graph view of a ParamStore: each parameter is lifted to a single Var
/// (leaf when training, constant otherwise) the first time it is used.
class GraphParams {
public:
  GraphParams(const ParamStore& store, bool trainable) : store_(&store), trainable_(trainable) {}

  Var operator()(const std::string& name) {
    auto it = vars_.find(name);
    if (it != vars_.end()) return it->second;
    const Tensor& t = store_->at(name);
    Var v = trainable_ ? leaf(t) : constant(t);
    vars_.emplace(name, v);
    return v;
  }

  /// Gradient of a used parameter after backward() (zeros if untouched).
  Tensor grad_of(const std::string& name) const {
    auto it = vars_.find(name);
    if (it == vars_.end() || !it->second->grad_ready) return Tensor(store_->at(name).shape);
    return it->second->grad_store;
  }

  const std::map<std::string, Var>& used() const { return vars_; }

private:
  const ParamStore* store_;
  bool trainable_;
  std::map<std::string, Var> vars_;
};

}  // namespace rawhdr
