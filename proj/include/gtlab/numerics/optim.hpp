#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gtlab/numerics/tensor.hpp"

namespace gtlab {

class OptimError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct AdamHyper {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Moment buffers live in double regardless of the parameter dtype.
struct AdamState {
  AdamHyper hyper;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

template <typename Real>
AdamState make_adam_state(std::span<const Tensor<Real>> params, const AdamHyper& hyper) {
  AdamState s;
  s.hyper = hyper;
  for (const auto& p : params) {
    s.m.emplace_back(p.numel(), 0.0);
    s.v.emplace_back(p.numel(), 0.0);
  }
  return s;
}

// One bias-corrected Adam step with decoupled weight decay. Parameters without
// an accumulated gradient are treated as having a zero gradient. state.hyper.lr
// is the rate used for this step.
template <typename Real>
void adam_step(std::span<Tensor<Real>> params, AdamState& state) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw OptimError("adam_step: optimizer state tracks " + std::to_string(state.m.size()) +
                     " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].size() != params[i].numel() || state.v[i].size() != params[i].numel()) {
      throw OptimError("adam_step: moment buffers not congruent with parameter " +
                       std::to_string(i));
    }
    for (Real g : params[i].grad()) {
      if (!std::isfinite(g)) {
        throw OptimError("adam_step: non-finite gradient in parameter " + std::to_string(i));
      }
    }
  }

  const auto& h = state.hyper;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(h.beta1, t);
  const double bc2 = 1.0 - std::pow(h.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto values = params[i].mutable_values();
    const auto grad = params[i].grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < values.size(); ++j) {
      double p = static_cast<double>(values[j]);
      const double g = grad.empty() ? 0.0 : static_cast<double>(grad[j]);
      p -= h.lr * h.weight_decay * p;
      m[j] = h.beta1 * m[j] + (1.0 - h.beta1) * g;
      v[j] = h.beta2 * v[j] + (1.0 - h.beta2) * g * g;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p -= h.lr * mhat / (std::sqrt(vhat) + h.eps);
      values[j] = static_cast<Real>(p);
    }
  }
}

// Linear warmup from 0 to peak, then cosine decay to the floor.
struct LrSchedule {
  double peak_lr = 1e-4;
  std::uint64_t warmup_steps = 50;
  std::uint64_t total_steps = 1000;
  double min_lr = 0.0;

  void validate() const {
    if (!(min_lr >= 0.0 && min_lr <= peak_lr)) {
      throw OptimError("LrSchedule: need 0 <= min_lr <= peak_lr");
    }
    if (warmup_steps >= total_steps) {
      throw OptimError("LrSchedule: warmup_steps must be below total_steps");
    }
  }
};

inline double lr_at(const LrSchedule& s, std::uint64_t step) {
  s.validate();
  if (step > s.total_steps) {
    throw OptimError("lr_at: step " + std::to_string(step) + " beyond total_steps " +
                     std::to_string(s.total_steps));
  }
  if (step <= s.warmup_steps) {
    return s.warmup_steps == 0
               ? s.peak_lr
               : s.peak_lr * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
  }
  const double progress = static_cast<double>(step - s.warmup_steps) /
                          static_cast<double>(s.total_steps - s.warmup_steps);
  return s.min_lr + 0.5 * (s.peak_lr - s.min_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace gtlab
