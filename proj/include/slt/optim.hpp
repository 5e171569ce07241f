#pragma once
// Adam-style optimizer with decoupled weight decay, a global gradient-norm
// clip, and the constant / warmup-cosine learning-rate schedules.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "module.hpp"

namespace slt {

struct OptimConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-6;
  double weight_decay = 0.0;
  double clip_norm = 1.0;  // <= 0 disables clipping
};

// Learning rate at `step` (0-based) for the given schedule over `total`
// steps: "constant", or "cosine" with `warmup` steps of linear ramp followed
// by cosine decay to zero.
inline double lr_at(const std::string& schedule, double lr, int64_t step,
                    int64_t warmup, int64_t total) {
  if (schedule == "constant") return lr;
  check(schedule == "cosine", "unknown lr schedule '", schedule, "'");
  if (warmup > 0 && step < warmup)
    return lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
  int64_t span = total > warmup ? total - warmup : 1;
  double t = static_cast<double>(step - warmup) / static_cast<double>(span);
  if (t > 1.0) t = 1.0;
  return lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
}

// Scales every gradient so the global L2 norm is at most cfg.clip_norm.
// Returns the pre-clip norm.
template <typename S>
double clip_gradients(ParamStore<S>& ps, double clip_norm) {
  double sq = 0.0;
  for (size_t i = 0; i < ps.size(); ++i)
    for (S g : ps.param(i).grad()) sq += static_cast<double>(g) * g;
  double norm = std::sqrt(sq);
  if (clip_norm > 0.0 && norm > clip_norm) {
    S f = static_cast<S>(clip_norm / norm);
    for (size_t i = 0; i < ps.size(); ++i)
      for (S& g : ps.param(i).grad()) g *= f;
  }
  return norm;
}

template <typename S>
struct Adam {
  OptimConfig cfg;
  int64_t t = 0;                   // completed steps (bias correction)
  std::vector<std::vector<S>> m;   // first moments, aligned with ps order
  std::vector<std::vector<S>> v;   // second moments

  Adam() = default;
  Adam(const ParamStore<S>& ps, const OptimConfig& config) : cfg(config) {
    for (size_t i = 0; i < ps.size(); ++i) {
      m.emplace_back(ps.param(i).data().size(), S(0));
      v.emplace_back(ps.param(i).data().size(), S(0));
    }
  }

  // One update from the gradients currently in `ps`; `lr_now` overrides the
  // configured rate (schedules). Decay is decoupled: p -= lr*wd*p.
  void step(ParamStore<S>& ps, double lr_now) {
    check(m.size() == ps.size(), "optimizer tracks ", m.size(),
          " parameters but the store has ", ps.size());
    ++t;
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    const S b1 = static_cast<S>(cfg.beta1), b2 = static_cast<S>(cfg.beta2);
    for (size_t i = 0; i < ps.size(); ++i) {
      auto& p = ps.param(i).data();
      const auto& g = ps.param(i).grad();
      auto& mi = m[i];
      auto& vi = v[i];
      for (size_t j = 0; j < p.size(); ++j) {
        mi[j] = b1 * mi[j] + (S(1) - b1) * g[j];
        vi[j] = b2 * vi[j] + (S(1) - b2) * g[j] * g[j];
        double mh = static_cast<double>(mi[j]) / bc1;
        double vh = static_cast<double>(vi[j]) / bc2;
        double upd = mh / (std::sqrt(vh) + cfg.eps) +
                     cfg.weight_decay * static_cast<double>(p[j]);
        p[j] -= static_cast<S>(lr_now * upd);
      }
    }
  }

  void step(ParamStore<S>& ps) { step(ps, cfg.lr); }
};

}  // namespace slt
