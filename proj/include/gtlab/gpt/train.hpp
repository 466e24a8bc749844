#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "gtlab/gpt/model.hpp"
#include "gtlab/numerics/optim.hpp"

namespace gtlab {

class TrainError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A token batch plus optional per-token target weights (see lm_loss).
template <typename Real>
struct WeightedBatch {
  TokenBatch tokens;
  std::vector<Real> weights;
};

// Fixed-length blocks cut from one token stream. A seeded 3% of blocks
// (at least one) is held out for validation.
template <typename Real>
class StreamSource {
 public:
  StreamSource(std::span<const std::int32_t> stream, std::size_t seq_len, std::uint64_t seed,
               double val_fraction = 0.03)
      : seq_len_(seq_len) {
    if (seq_len < 2) {
      throw TrainError("sequence length must be at least 2");
    }
    const std::size_t blocks = stream.size() / seq_len;
    if (blocks < 2) {
      throw TrainError("corpus too small: need at least two blocks of " +
                       std::to_string(seq_len) + " tokens");
    }
    std::vector<std::size_t> order(blocks);
    for (std::size_t i = 0; i < blocks; ++i) {
      order[i] = i;
    }
    CounterRng rng(CounterRng::derive(seed, "validation-split"));
    shuffle(order, rng);
    const auto n_val = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(blocks))), 1,
        blocks - 1);
    for (std::size_t i = 0; i < blocks; ++i) {
      const auto* begin = stream.data() + order[i] * seq_len;
      std::vector<std::int32_t> block(begin, begin + seq_len);
      (i < n_val ? val_ : train_).push_back(std::move(block));
    }
  }

  WeightedBatch<Real> sample(std::size_t batch, CounterRng& rng) const {
    WeightedBatch<Real> out{{batch, seq_len_, {}}, {}};
    out.tokens.ids.reserve(batch * seq_len_);
    for (std::size_t b = 0; b < batch; ++b) {
      const auto& blk = train_[rng.below(train_.size())];
      out.tokens.ids.insert(out.tokens.ids.end(), blk.begin(), blk.end());
    }
    return out;
  }

  std::vector<WeightedBatch<Real>> validation(std::size_t batch, std::size_t max_sequences) const {
    std::vector<WeightedBatch<Real>> out;
    const auto n = std::min(max_sequences, val_.size());
    for (std::size_t i = 0; i < n; i += batch) {
      const auto m = std::min(batch, n - i);
      WeightedBatch<Real> wb{{m, seq_len_, {}}, {}};
      for (std::size_t j = 0; j < m; ++j) {
        wb.tokens.ids.insert(wb.tokens.ids.end(), val_[i + j].begin(), val_[i + j].end());
      }
      out.push_back(std::move(wb));
    }
    return out;
  }

  std::size_t train_blocks() const { return train_.size(); }
  std::size_t val_blocks() const { return val_.size(); }

 private:
  std::size_t seq_len_;
  std::vector<std::vector<std::int32_t>> train_;
  std::vector<std::vector<std::int32_t>> val_;
};

// Variable-length sequences, right-padded per batch with zero-weight positions.
template <typename Real>
class SequenceSource {
 public:
  struct Sequence {
    std::vector<std::int32_t> ids;
    std::vector<Real> weights;  // same length as ids; empty means all ones
  };

  SequenceSource(std::vector<Sequence> sequences, std::uint64_t seed, double val_fraction = 0.03) {
    if (sequences.size() < 2) {
      throw TrainError("need at least two sequences");
    }
    for (auto& s : sequences) {
      if (s.ids.size() < 2) {
        throw TrainError("sequences must hold at least two tokens");
      }
      if (s.weights.empty()) {
        s.weights.assign(s.ids.size(), Real{1});
      }
      if (s.weights.size() != s.ids.size()) {
        throw TrainError("sequence weights do not match ids");
      }
    }
    CounterRng rng(CounterRng::derive(seed, "validation-split"));
    shuffle(sequences, rng);
    const auto n = sequences.size();
    const auto n_val = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n))), 1, n - 1);
    val_.assign(std::make_move_iterator(sequences.begin()),
                std::make_move_iterator(sequences.begin() + static_cast<std::ptrdiff_t>(n_val)));
    train_.assign(std::make_move_iterator(sequences.begin() + static_cast<std::ptrdiff_t>(n_val)),
                  std::make_move_iterator(sequences.end()));
  }

  WeightedBatch<Real> sample(std::size_t batch, CounterRng& rng) const {
    std::vector<const Sequence*> picked;
    for (std::size_t b = 0; b < batch; ++b) {
      picked.push_back(&train_[rng.below(train_.size())]);
    }
    return pack(picked);
  }

  std::vector<WeightedBatch<Real>> validation(std::size_t batch, std::size_t max_sequences) const {
    std::vector<WeightedBatch<Real>> out;
    const auto n = std::min(max_sequences, val_.size());
    for (std::size_t i = 0; i < n; i += batch) {
      std::vector<const Sequence*> picked;
      for (std::size_t j = i; j < std::min(n, i + batch); ++j) {
        picked.push_back(&val_[j]);
      }
      out.push_back(pack(picked));
    }
    return out;
  }

  static WeightedBatch<Real> pack(const std::vector<const Sequence*>& seqs) {
    std::size_t len = 0;
    for (const auto* s : seqs) {
      len = std::max(len, s->ids.size());
    }
    WeightedBatch<Real> wb{{seqs.size(), len, std::vector<std::int32_t>(seqs.size() * len, 0)},
                           std::vector<Real>(seqs.size() * len, Real{0})};
    for (std::size_t b = 0; b < seqs.size(); ++b) {
      std::copy(seqs[b]->ids.begin(), seqs[b]->ids.end(), wb.tokens.ids.begin() + b * len);
      std::copy(seqs[b]->weights.begin(), seqs[b]->weights.end(), wb.weights.begin() + b * len);
    }
    return wb;
  }

 private:
  std::vector<Sequence> train_;
  std::vector<Sequence> val_;
};

struct TrainOptions {
  std::size_t steps = 300;
  std::size_t batch = 8;
  LrSchedule schedule{.peak_lr = 1e-3, .warmup_steps = 30, .total_steps = 300, .min_lr = 0.0};
  AdamHyper adam{.lr = 0.0, .beta1 = 0.9, .beta2 = 0.98, .eps = 1e-8, .weight_decay = 0.01};
  std::uint64_t seed = 0;
  std::size_t log_interval = 10;
  std::size_t max_val_sequences = 64;
};

struct LossPoint {
  std::uint64_t step = 0;
  std::optional<double> train_loss;  // mean over steps since the previous point
  double val_loss = 0.0;
  double lr = 0.0;
};

template <typename Real>
struct TrainResult {
  Checkpoint<Real> ckpt;
  std::vector<LossPoint> trace;
};

template <typename Real>
double evaluate_loss(const Checkpoint<Real>& ckpt, const std::vector<WeightedBatch<Real>>& batches) {
  NoGradGuard no_grad;
  double total = 0.0;
  double weight = 0.0;
  for (const auto& wb : batches) {
    auto logits = forward(ckpt, wb.tokens, Mode::eval);
    const double loss = lm_loss(logits, wb.tokens, std::span<const Real>(wb.weights)).item();
    double w = 0.0;
    for (std::size_t b = 0; b < wb.tokens.batch; ++b) {
      for (std::size_t t = 1; t < wb.tokens.len; ++t) {
        w += wb.weights.empty() ? 1.0 : static_cast<double>(wb.weights[b * wb.tokens.len + t]);
      }
    }
    total += loss * w;
    weight += w;
  }
  return weight > 0.0 ? total / weight : 0.0;
}

// Next-token training with AdamW and the warmup+cosine schedule. The input
// checkpoint is not modified. Deterministic for fixed (options.seed, source).
template <typename Real, typename Source>
TrainResult<Real> train(const Checkpoint<Real>& input, const Source& source,
                        const TrainOptions& opt) {
  if (opt.steps > opt.schedule.total_steps) {
    throw TrainError("steps exceed the schedule's total_steps");
  }
  if (opt.batch == 0 || opt.log_interval == 0) {
    throw TrainError("batch and log_interval must be positive");
  }
  opt.schedule.validate();
  TrainResult<Real> result{input.clone(), {}};
  auto& ckpt = result.ckpt;
  ckpt.set_requires_grad(true);
  auto params = ckpt.tensors();
  AdamState state = make_adam_state<Real>(params, opt.adam);
  const auto val = source.validation(opt.batch, opt.max_val_sequences);

  result.trace.push_back({ckpt.train_step, std::nullopt,
                          evaluate_loss<Real>(ckpt, val), 0.0});
  CounterRng batch_rng(CounterRng::derive(opt.seed, "batches"));
  double running = 0.0;
  std::size_t running_n = 0;
  for (std::size_t s = 1; s <= opt.steps; ++s) {
    const double lr = lr_at(opt.schedule, s);
    state.hyper.lr = lr;
    auto wb = source.sample(opt.batch, batch_rng);
    for (auto& p : params) {
      p.zero_grad();
    }
    CounterRng drop_rng(CounterRng::derive(opt.seed, s));
    auto logits = forward(ckpt, wb.tokens, Mode::train, &drop_rng);
    auto loss = lm_loss(logits, wb.tokens, std::span<const Real>(wb.weights));
    running += loss.item();
    ++running_n;
    backward(loss);
    adam_step<Real>(params, state);
    ckpt.train_step += 1;
    if (s % opt.log_interval == 0 || s == opt.steps) {
      result.trace.push_back({ckpt.train_step, running / static_cast<double>(running_n),
                              evaluate_loss<Real>(ckpt, val), lr});
      running = 0.0;
      running_n = 0;
    }
  }
  for (auto& p : params) {
    p.zero_grad();
  }
  return result;
}

}  // namespace gtlab
