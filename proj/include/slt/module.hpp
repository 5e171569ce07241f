#pragma once

// Named parameter registry plus the small building blocks (linear layers and
// MLPs) shared by every model component.  Parameters are created in a stable
// order so optimizer state and checkpoints line up across runs.

#include <string>
#include <unordered_map>
#include <vector>

#include "ops.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace slt {

template <typename S>
class ParamStore {
 public:
  Tensor<S> create(const std::string& name, const Shape& shape,
                   std::vector<S> init) {
    check(index_.find(name) == index_.end(), "duplicate parameter name '",
          name, "'");
    Tensor<S> t = Tensor<S>::from_data(shape, std::move(init));
    t.set_requires_grad(true);
    index_[name] = names_.size();
    names_.push_back(name);
    params_.push_back(t);
    return t;
  }

  // Fan-in scaled Gaussian init; fan_in = product of all dims but the last.
  Tensor<S> create_gaussian(const std::string& name, const Shape& shape,
                            Rng& rng) {
    int64_t fan_in = 1;
    for (size_t i = 0; i + 1 < shape.size(); ++i) fan_in *= shape[i];
    if (shape.size() == 1) fan_in = shape[0];
    S sd = S(1) / std::sqrt(static_cast<S>(fan_in));
    std::vector<S> v(static_cast<size_t>(numel(shape)));
    for (auto& x : v) x = static_cast<S>(rng.normal()) * sd;
    return create(name, shape, std::move(v));
  }

  Tensor<S> create_zeros(const std::string& name, const Shape& shape) {
    return create(name, shape,
                  std::vector<S>(static_cast<size_t>(numel(shape)), S(0)));
  }

  Tensor<S> get(const std::string& name) const {
    auto it = index_.find(name);
    check(it != index_.end(), "unknown parameter '", name, "'");
    return params_[it->second];
  }

  bool has(const std::string& name) const {
    return index_.find(name) != index_.end();
  }

  size_t size() const { return params_.size(); }
  const std::string& name(size_t i) const { return names_[i]; }
  Tensor<S>& param(size_t i) { return params_[i]; }
  const Tensor<S>& param(size_t i) const { return params_[i]; }

  int64_t total_elements() const {
    int64_t n = 0;
    for (const auto& p : params_) n += p.numel();
    return n;
  }

  void zero_grads() {
    for (auto& p : params_) p.zero_grad();
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<S>> params_;
  std::unordered_map<std::string, size_t> index_;
};

// y = x W + b, applied over the last axis.
template <typename S>
struct Linear {
  Tensor<S> w, b;

  Linear() = default;
  Linear(ParamStore<S>& ps, const std::string& prefix, int64_t in, int64_t out,
         Rng& rng)
      : w(ps.create_gaussian(prefix + ".w", {in, out}, rng)),
        b(ps.create_zeros(prefix + ".b", {out})) {}

  Tensor<S> operator()(const Tensor<S>& x) const {
    return add(matmul(x, w), b);
  }
};

// Stack of linear layers with relu between them (none after the last).
template <typename S>
struct Mlp {
  std::vector<Linear<S>> layers;

  Mlp() = default;
  Mlp(ParamStore<S>& ps, const std::string& prefix, int64_t in,
      const std::vector<int64_t>& sizes, Rng& rng) {
    int64_t d = in;
    for (size_t i = 0; i < sizes.size(); ++i) {
      layers.emplace_back(ps, prefix + ".l" + std::to_string(i), d, sizes[i],
                          rng);
      d = sizes[i];
    }
  }

  Tensor<S> operator()(const Tensor<S>& x) const {
    Tensor<S> h = x;
    for (size_t i = 0; i < layers.size(); ++i) {
      h = layers[i](h);
      if (i + 1 < layers.size()) h = relu(h);
    }
    return h;
  }
};

}  // namespace slt
