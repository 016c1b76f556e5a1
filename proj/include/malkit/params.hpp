#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "malkit/errors.hpp"
#include "malkit/hashing.hpp"
#include "malkit/tensor.hpp"

namespace malkit::nn {

namespace group {
inline constexpr std::string_view kShared = "shared";
inline std::string task(std::string_view mechanism) {
  return "task:" + std::string(mechanism);
}
inline std::string head(std::string_view name) {
  return "head:" + std::string(name);
}
}  // namespace group

struct AdamState {
  Tensor m;
  Tensor v;
  std::uint64_t step = 0;
};

struct Parameter {
  std::string name;
  std::string group;
  Tensor value;
  AdamState adam;
};

enum class Init { kGlorotUniform, kZeros, kEmbeddingNormal };

/// Named parameters partitioned into groups, with their Adam state.
///
/// Initial values are drawn from a stream keyed by (seed, parameter name), so
/// two models that register the same names get the same values regardless of
/// what else they register.
class ParamStore {
 public:
  ParamStore() = default;
  explicit ParamStore(std::uint64_t seed) : seed_(seed) {}

  Parameter& add(const std::string& name, std::string group, Shape shape,
                 Init init) {
    if (index_.contains(name)) {
      throw ContractError("duplicate parameter name '" + name + "'");
    }
    Parameter p{name, std::move(group), Tensor(shape), {}};
    p.adam.m = Tensor(shape);
    p.adam.v = Tensor(shape);
    initialize(p, init);
    index_.emplace(name, params_.size());
    params_.push_back(std::move(p));
    return params_.back();
  }

  // Used when restoring a checkpoint.
  Parameter& insert(Parameter p) {
    if (index_.contains(p.name)) {
      throw ContractError("duplicate parameter name '" + p.name + "'");
    }
    index_.emplace(p.name, params_.size());
    params_.push_back(std::move(p));
    return params_.back();
  }

  bool contains(const std::string& name) const { return index_.contains(name); }

  Parameter& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
    return params_[it->second];
  }
  const Parameter& at(const std::string& name) const {
    return const_cast<ParamStore*>(this)->at(name);
  }

  std::vector<Parameter>& all() noexcept { return params_; }
  const std::vector<Parameter>& all() const noexcept { return params_; }
  std::size_t size() const noexcept { return params_.size(); }

  std::vector<std::string> groups() const {
    std::vector<std::string> out;
    for (const auto& p : params_) {
      if (std::find(out.begin(), out.end(), p.group) == out.end())
        out.push_back(p.group);
    }
    return out;
  }

  std::vector<std::string> names_in_group(std::string_view g) const {
    std::vector<std::string> out;
    for (const auto& p : params_)
      if (p.group == g) out.push_back(p.name);
    std::sort(out.begin(), out.end());
    return out;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  std::uint64_t seed() const noexcept { return seed_; }

 private:
  void initialize(Parameter& p, Init init) const {
    std::mt19937_64 rng(derive_seed(seed_, p.name));
    Tensor& t = p.value;
    switch (init) {
      case Init::kZeros:
        break;
      case Init::kEmbeddingNormal: {
        std::normal_distribution<double> dist(0.0, 0.01);
        for (double& v : t.data()) v = dist(rng);
        break;
      }
      case Init::kGlorotUniform: {
        const double fan_in = static_cast<double>(t.rows());
        const double fan_out = static_cast<double>(t.cols());
        const double limit = std::sqrt(6.0 / (fan_in + fan_out));
        std::uniform_real_distribution<double> dist(-limit, limit);
        for (double& v : t.data()) v = dist(rng);
        break;
      }
    }
  }

  std::uint64_t seed_ = 0;
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

/// Gradients keyed by parameter name. Ordered so that iteration and the
/// flattened views are deterministic.
class GradientSet {
 public:
  std::map<std::string, Tensor>& tensors() noexcept { return grads_; }
  const std::map<std::string, Tensor>& tensors() const noexcept {
    return grads_;
  }

  bool contains(const std::string& name) const { return grads_.contains(name); }
  Tensor& at(const std::string& name) { return grads_.at(name); }
  const Tensor& at(const std::string& name) const { return grads_.at(name); }

  void accumulate(const std::string& name, const Tensor& g,
                  double alpha = 1.0) {
    auto it = grads_.find(name);
    if (it == grads_.end()) {
      Tensor t = g;
      if (alpha != 1.0) t *= alpha;
      grads_.emplace(name, std::move(t));
    } else {
      it->second.add_scaled(g, alpha);
    }
  }

  void add(const GradientSet& other, double alpha = 1.0) {
    for (const auto& [name, g] : other.grads_) accumulate(name, g, alpha);
  }

  // Zero gradients for parameters of `store` that are absent here.
  void fill_missing(const ParamStore& store) {
    for (const auto& p : store.all())
      if (!grads_.contains(p.name)) grads_.emplace(p.name, Tensor(p.value.shape()));
  }

  /// Concatenation of the gradients of every parameter in `group` (sorted by
  /// name). Parameters of the group that have no gradient contribute zeros.
  std::vector<double> flatten(const ParamStore& store,
                              std::string_view group) const {
    std::vector<double> flat;
    for (const auto& name : store.names_in_group(group)) {
      auto it = grads_.find(name);
      if (it == grads_.end()) {
        flat.insert(flat.end(), store.at(name).value.size(), 0.0);
      } else {
        flat.insert(flat.end(), it->second.data().begin(),
                    it->second.data().end());
      }
    }
    return flat;
  }

  void unflatten(const ParamStore& store, std::string_view group,
                 std::span<const double> flat) {
    std::size_t offset = 0;
    for (const auto& name : store.names_in_group(group)) {
      const Parameter& p = store.at(name);
      if (offset + p.value.size() > flat.size()) {
        throw DimensionError("flat gradient too short for group '" +
                             std::string(group) + "'");
      }
      Tensor t(p.value.shape());
      std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset),
                  p.value.size(), t.data().begin());
      grads_.insert_or_assign(name, std::move(t));
      offset += p.value.size();
    }
    if (offset != flat.size()) {
      throw DimensionError("flat gradient too long for group '" +
                           std::string(group) + "'");
    }
  }

 private:
  std::map<std::string, Tensor> grads_;
};

struct AdamConfig {
  double lr = 0.003;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// One Adam update with bias correction. Only parameters present in `grads`
/// move (and only their step counters advance).
inline void adam_step(ParamStore& params, const GradientSet& grads,
                      const AdamConfig& cfg) {
  for (const auto& [name, g] : grads.tensors()) {
    if (!g.all_finite()) {
      throw NumericError("nonfinite gradient for parameter '" + name +
                         "' in group '" + params.at(name).group + "'");
    }
  }
  for (const auto& [name, g] : grads.tensors()) {
    Parameter& p = params.at(name);
    if (g.shape() != p.value.shape()) {
      throw DimensionError("gradient shape " + to_string(g.shape()) +
                           " does not match parameter '" + name + "' " +
                           to_string(p.value.shape()));
    }
    AdamState& s = p.adam;
    ++s.step;
    const double t = static_cast<double>(s.step);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    double* w = p.value.raw();
    double* m = s.m.raw();
    double* v = s.v.raw();
    const double* gr = g.raw();
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gr[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gr[i] * gr[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      w[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.epsilon);
    }
  }
}

}  // namespace malkit::nn
