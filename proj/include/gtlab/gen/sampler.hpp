#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gtlab/gpt/decoder.hpp"
#include "gtlab/numerics/rng.hpp"

namespace gtlab {

class SamplerError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct SamplerConfig {
  double top_p = 0.9;
  double temperature = 1.2;
  std::size_t max_new_tokens = 512;
  std::vector<std::int32_t> stop_ids;
  std::uint64_t rng_seed = 0;

  void validate() const {
    if (!(top_p > 0.0 && top_p <= 1.0)) {
      throw SamplerError("top_p must lie in (0, 1]");
    }
    if (!(temperature > 0.0) || !std::isfinite(temperature)) {
      throw SamplerError("temperature must be positive");
    }
    if (max_new_tokens < 1) {
      throw SamplerError("max_new_tokens must be at least 1");
    }
  }
};

template <typename Real>
std::vector<double> apply_temperature(std::span<const Real> logits, double temperature) {
  if (!(temperature > 0.0)) {
    throw SamplerError("temperature must be positive");
  }
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = static_cast<double>(logits[i]) / temperature;
  }
  return out;
}

inline std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) {
    throw SamplerError("softmax of an empty vector");
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    z += p[i];
  }
  for (auto& v : p) {
    v /= z;
  }
  return p;
}

// Smallest probability-sorted prefix with mass >= p, plus every token tied
// with the last one admitted; the rest is zeroed and the kept mass rescaled.
inline std::vector<double> nucleus_filter(std::span<const double> probs, double p) {
  if (!(p > 0.0 && p <= 1.0)) {
    throw SamplerError("top_p must lie in (0, 1]");
  }
  if (probs.empty()) {
    throw SamplerError("empty distribution");
  }
  double total = 0.0;
  for (double v : probs) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw SamplerError("distribution has a negative or non-finite entry");
    }
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-6) {
    throw SamplerError("distribution sums to " + std::to_string(total));
  }
  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
  // A small slack keeps p = 1 (and sums that round just below p) from
  // dropping the tail through accumulated rounding.
  constexpr double kSlack = 1e-12;
  double cum = 0.0;
  double boundary = 0.0;
  for (auto idx : order) {
    cum += probs[idx];
    boundary = probs[idx];
    if (cum >= p - kSlack) {
      break;
    }
  }
  std::vector<double> out(probs.size(), 0.0);
  double kept = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] >= boundary && probs[i] > 0.0) {
      out[i] = probs[i];
      kept += probs[i];
    }
  }
  for (auto& v : out) {
    v /= kept;
  }
  return out;
}

// Inverse-CDF draw in index order.
inline std::size_t sample_index(std::span<const double> probs, CounterRng& rng) {
  const double u = rng.uniform();
  double cum = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) {
      continue;
    }
    cum += probs[i];
    last = i;
    if (u < cum) {
      return i;
    }
  }
  return last;
}

// Temperature, softmax, nucleus truncation: the distribution a step samples from.
template <typename Real>
std::vector<double> step_distribution(std::span<const Real> logits, const SamplerConfig& cfg) {
  const auto scaled = apply_temperature(logits, cfg.temperature);
  const auto probs = softmax(scaled);
  return nucleus_filter(probs, cfg.top_p);
}

struct GenerationResult {
  std::vector<std::int32_t> tokens;  // new tokens only
  std::vector<double> logprobs;      // log of each chosen token's truncated probability
  bool stopped = false;              // ended on a stop id

  double total_logprob() const { return std::accumulate(logprobs.begin(), logprobs.end(), 0.0); }
};

// Autoregressive sampling through the KV cache. When the context fills, the
// cache is rebuilt from the most recent context_len/2 tokens and decoding
// continues, so max_new_tokens may exceed context_len on small models.
template <typename Real>
GenerationResult generate(const Checkpoint<Real>& ckpt, std::span<const std::int32_t> prompt,
                          const SamplerConfig& cfg) {
  cfg.validate();
  const auto ctx = ckpt.config.context_len;
  if (prompt.empty()) {
    throw SamplerError("prompt is empty");
  }
  if (prompt.size() >= ctx) {
    throw SamplerError("prompt of " + std::to_string(prompt.size()) +
                       " tokens leaves no room in context_len " + std::to_string(ctx));
  }
  IncrementalDecoder<Real> dec(ckpt);
  std::vector<std::int32_t> history(prompt.begin(), prompt.end());
  std::vector<Real> logits;
  for (auto id : prompt) {
    logits = dec.push_token(id);
  }
  CounterRng rng(CounterRng::derive(cfg.rng_seed, "sampler"));
  GenerationResult out;
  for (std::size_t step = 0; step < cfg.max_new_tokens; ++step) {
    const auto dist = step_distribution<Real>(logits, cfg);
    const auto id = static_cast<std::int32_t>(sample_index(dist, rng));
    out.tokens.push_back(id);
    out.logprobs.push_back(std::log(dist[static_cast<std::size_t>(id)]));
    history.push_back(id);
    if (std::find(cfg.stop_ids.begin(), cfg.stop_ids.end(), id) != cfg.stop_ids.end()) {
      out.stopped = true;
      break;
    }
    if (step + 1 == cfg.max_new_tokens) {
      break;
    }
    if (dec.length() == dec.capacity()) {
      dec.reset();
      const auto keep = std::max<std::size_t>(1, ctx / 2);
      for (auto it = history.end() - static_cast<std::ptrdiff_t>(keep); it != history.end(); ++it) {
        logits = dec.push_token(*it);
      }
    } else {
      logits = dec.push_token(id);
    }
  }
  return out;
}

}  // namespace gtlab
