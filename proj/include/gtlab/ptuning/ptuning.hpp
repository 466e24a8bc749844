#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gtlab/gen/sampler.hpp"
#include "gtlab/gpt/decoder.hpp"
#include "gtlab/gpt/model.hpp"
#include "gtlab/numerics/optim.hpp"

// Prompt tuning against a frozen checkpoint: a small encoder maps learnable
// seed vectors to n_virtual input embeddings that are prepended to [x; y].
// Virtual tokens are pure embeddings; they never occupy vocabulary ids.
namespace gtlab {

class PtuneError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class EncoderKind { recurrent, feedforward };

NLOHMANN_JSON_SERIALIZE_ENUM(EncoderKind, {{EncoderKind::recurrent, "recurrent"},
                                           {EncoderKind::feedforward, "feedforward"}})

struct SoftPromptConfig {
  std::size_t n_virtual = 15;
  EncoderKind encoder_kind = EncoderKind::recurrent;
  std::size_t encoder_hidden = 2048;  // feedforward only; the LSTM uses the model width
  std::string task_name = "task";
  std::uint64_t init_seed = 0;

  void validate() const {
    if (n_virtual == 0) {
      throw PtuneError("n_virtual must be at least 1");
    }
    if (encoder_kind == EncoderKind::feedforward && encoder_hidden == 0) {
      throw PtuneError("encoder_hidden must be positive");
    }
  }
};

inline void to_json(nlohmann::json& j, const SoftPromptConfig& c) {
  j = {{"n_virtual", c.n_virtual},
       {"encoder_kind", c.encoder_kind},
       {"encoder_hidden", c.encoder_hidden},
       {"task_name", c.task_name},
       {"init_seed", c.init_seed}};
}

inline void from_json(const nlohmann::json& j, SoftPromptConfig& c) {
  c.n_virtual = j.at("n_virtual").get<std::size_t>();
  c.encoder_kind = j.at("encoder_kind").get<EncoderKind>();
  c.encoder_hidden = j.at("encoder_hidden").get<std::size_t>();
  c.task_name = j.at("task_name").get<std::string>();
  c.init_seed = j.at("init_seed").get<std::uint64_t>();
}

template <typename Real>
struct PromptWeights {
  SoftPromptConfig config;
  std::size_t hidden = 0;
  std::vector<NamedTensor<Real>> params;
  std::uint64_t step = 0;

  const Tensor<Real>& param(std::string_view name) const {
    for (const auto& p : params) {
      if (p.name == name) {
        return p.tensor;
      }
    }
    throw PtuneError("prompt weights have no parameter '" + std::string(name) + "'");
  }

  std::vector<Tensor<Real>> tensors() const {
    std::vector<Tensor<Real>> out;
    for (const auto& p : params) {
      out.push_back(p.tensor);
    }
    return out;
  }

  PromptWeights clone() const {
    PromptWeights w{config, hidden, {}, step};
    for (const auto& p : params) {
      const auto v = p.tensor.values();
      w.params.push_back({p.name, Tensor<Real>(p.tensor.shape(), {v.begin(), v.end()}, true)});
    }
    return w;
  }

  bool same_values(const PromptWeights& o) const {
    if (params.size() != o.params.size()) {
      return false;
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto a = params[i].tensor.values();
      const auto b = o.params[i].tensor.values();
      if (params[i].name != o.params[i].name || !std::equal(a.begin(), a.end(), b.begin(), b.end())) {
        return false;
      }
    }
    return true;
  }
};

template <typename Real>
PromptWeights<Real> init_prompt(const SoftPromptConfig& spc, std::size_t hidden) {
  spc.validate();
  if (hidden == 0) {
    throw PtuneError("model width must be positive");
  }
  PromptWeights<Real> w{spc, hidden, {}, 0};
  auto add = [&](const std::string& name, Shape shape, double stdev, double fill = 0.0) {
    std::vector<Real> v(shape_numel(shape), static_cast<Real>(fill));
    if (stdev > 0.0) {
      CounterRng rng(CounterRng::derive(spc.init_seed, "prompt." + name));
      for (auto& x : v) x = static_cast<Real>(rng.normal() * stdev);
    }
    w.params.push_back({name, Tensor<Real>(std::move(shape), std::move(v), true)});
  };
  const std::size_t h = hidden;
  const double s = 1.0 / std::sqrt(static_cast<double>(h));
  add("seed", {spc.n_virtual, h}, 1.0);
  if (spc.encoder_kind == EncoderKind::feedforward) {
    const std::size_t e = spc.encoder_hidden;
    add("mlp.fc.weight", {h, e}, s);
    add("mlp.fc.bias", {e}, 0.0);
    add("mlp.proj.weight", {e, h}, 0.02 / std::sqrt(static_cast<double>(e)));
    add("mlp.proj.bias", {h}, 0.0);
  } else {
    for (const char* dir : {"fwd", "bwd"}) {
      const std::string p = std::string("lstm.") + dir + ".";
      add(p + "wx", {h, 4 * h}, s);
      add(p + "wh", {h, 4 * h}, s);
      // Forget gate starts open.
      std::vector<Real> bias(4 * h, Real{0});
      std::fill(bias.begin() + static_cast<std::ptrdiff_t>(h), bias.begin() + static_cast<std::ptrdiff_t>(2 * h), Real{1});
      w.params.push_back({p + "bias", Tensor<Real>({4 * h}, std::move(bias), true)});
      add(std::string("head.") + dir + ".weight", {h, h}, 0.02 * s);
    }
    add("head.bias", {h}, 0.0);
  }
  return w;
}

namespace detail {

template <typename Real>
std::vector<Tensor<Real>> lstm_pass(const Tensor<Real>& xw, const Tensor<Real>& wh,
                                    const Tensor<Real>& bias, std::size_t h, bool reverse) {
  const auto n = xw.dim(0);
  std::vector<Tensor<Real>> out(n);
  auto hs = Tensor<Real>::zeros({1, h});
  auto cs = Tensor<Real>::zeros({1, h});
  for (std::size_t k = 0; k < n; ++k) {
    const auto t = reverse ? n - 1 - k : k;
    auto gates = ops::add_bias(ops::add(ops::slice_rows(xw, t, t + 1), ops::matmul(hs, wh)), bias);
    auto i = ops::sigmoid(ops::slice_cols(gates, 0, h));
    auto f = ops::sigmoid(ops::slice_cols(gates, h, 2 * h));
    auto g = ops::tanh(ops::slice_cols(gates, 2 * h, 3 * h));
    auto o = ops::sigmoid(ops::slice_cols(gates, 3 * h, 4 * h));
    cs = ops::add(ops::mul(f, cs), ops::mul(i, g));
    hs = ops::mul(o, ops::tanh(cs));
    out[t] = hs;
  }
  return out;
}

}  // namespace detail

// The n_virtual x hidden block of virtual-token embeddings.
template <typename Real>
Tensor<Real> virtual_embeddings(const PromptWeights<Real>& w) {
  const auto& seed = w.param("seed");
  if (w.config.encoder_kind == EncoderKind::feedforward) {
    auto fc = ops::gelu(ops::add_bias(ops::matmul(seed, w.param("mlp.fc.weight")), w.param("mlp.fc.bias")));
    return ops::add_bias(ops::matmul(fc, w.param("mlp.proj.weight")), w.param("mlp.proj.bias"));
  }
  const auto h = w.hidden;
  const auto fwd = detail::lstm_pass(ops::matmul(seed, w.param("lstm.fwd.wx")), w.param("lstm.fwd.wh"),
                                     w.param("lstm.fwd.bias"), h, false);
  const auto bwd = detail::lstm_pass(ops::matmul(seed, w.param("lstm.bwd.wx")), w.param("lstm.bwd.wh"),
                                     w.param("lstm.bwd.bias"), h, true);
  auto hf = ops::concat_rows(fwd);
  auto hb = ops::concat_rows(bwd);
  return ops::add_bias(ops::add(ops::matmul(hf, w.param("head.fwd.weight")),
                                ops::matmul(hb, w.param("head.bwd.weight"))),
                       w.param("head.bias"));
}

template <typename Real>
void check_compatible(const Checkpoint<Real>& ckpt, const PromptWeights<Real>& w) {
  if (w.hidden != ckpt.config.hidden) {
    throw PtuneError("prompt width " + std::to_string(w.hidden) + " does not match model width " +
                     std::to_string(ckpt.config.hidden));
  }
}

// [virtual; embed(x); embed(y)] as one (n_virtual + |x| + |y|, hidden) block.
// Positions are added later by the model and run continuously across segments.
template <typename Real>
Tensor<Real> assemble_input(const Checkpoint<Real>& ckpt, const Tensor<Real>& virt,
                            std::span<const std::int32_t> x, std::span<const std::int32_t> y = {}) {
  if (x.empty()) {
    throw PtuneError("input x is empty");
  }
  const auto total = virt.dim(0) + x.size() + y.size();
  if (total > ckpt.config.context_len) {
    throw PtuneError("assembled input of " + std::to_string(total) + " exceeds context_len " +
                     std::to_string(ckpt.config.context_len));
  }
  std::vector<std::int32_t> ids(x.begin(), x.end());
  ids.insert(ids.end(), y.begin(), y.end());
  check_tokens<Real>(ckpt.config, TokenBatch::single(ids));
  return ops::concat_rows(std::vector<Tensor<Real>>{virt, ops::embedding(ckpt.param("wte"), std::span<const std::int32_t>(ids))});
}

template <typename Real>
Tensor<Real> assemble_input(const Checkpoint<Real>& ckpt, const PromptWeights<Real>& w,
                            std::span<const std::int32_t> x, std::span<const std::int32_t> y = {}) {
  check_compatible(ckpt, w);
  return assemble_input(ckpt, virtual_embeddings(w), x, y);
}

struct PromptExample {
  std::vector<std::int32_t> x;
  std::vector<std::int32_t> y;
};

// Mean cross-entropy over target (y) positions only, base model in eval mode.
template <typename Real>
Tensor<Real> prompt_loss(const Checkpoint<Real>& ckpt, const PromptWeights<Real>& w,
                         std::span<const PromptExample* const> batch) {
  check_compatible(ckpt, w);
  if (batch.empty()) {
    throw PtuneError("empty batch");
  }
  const auto nv = w.config.n_virtual;
  std::size_t len = 0;
  for (const auto* ex : batch) {
    if (ex->y.empty()) {
      throw PtuneError("training example has no target");
    }
    len = std::max(len, nv + ex->x.size() + ex->y.size());
  }
  const auto virt = virtual_embeddings(w);
  std::vector<Tensor<Real>> parts;
  TokenBatch tokens{batch.size(), len, std::vector<std::int32_t>(batch.size() * len, 0)};
  std::vector<Real> weights(batch.size() * len, Real{0});
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& ex = *batch[b];
    std::vector<std::int32_t> y = ex.y;
    const auto used = nv + ex.x.size() + ex.y.size();
    y.resize(ex.y.size() + (len - used), 0);  // right padding, zero weight
    parts.push_back(assemble_input(ckpt, virt, ex.x, y));
    auto* row = tokens.ids.data() + b * len;
    std::copy(ex.x.begin(), ex.x.end(), row + nv);
    std::copy(ex.y.begin(), ex.y.end(), row + nv + ex.x.size());
    std::fill_n(weights.begin() + static_cast<std::ptrdiff_t>(b * len + nv + ex.x.size()), ex.y.size(), Real{1});
  }
  auto logits = forward_embeddings(ckpt, ops::concat_rows(parts), batch.size(), len, Mode::eval);
  logits = ops::reshape(logits, {batch.size(), len, ckpt.config.vocab_size});
  return lm_loss(logits, tokens, std::span<const Real>(weights));
}

// Turns off requires_grad on every base tensor for its lifetime, restoring the
// previous flags afterwards. Parameter values are never touched.
template <typename Real>
class FreezeGuard {
 public:
  explicit FreezeGuard(const Checkpoint<Real>& ckpt) : tensors_(ckpt.tensors()) {
    for (auto& t : tensors_) {
      flags_.push_back(t.requires_grad());
      t.set_requires_grad(false);
    }
  }
  ~FreezeGuard() {
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
      tensors_[i].set_requires_grad(flags_[i]);
    }
  }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  std::vector<Tensor<Real>> tensors_;
  std::vector<bool> flags_;
};

struct PtuneHyper {
  std::size_t steps = 200;
  std::size_t batch = 32;
  LrSchedule schedule{.peak_lr = 1e-4, .warmup_steps = 50, .total_steps = 200, .min_lr = 0.0};
  AdamHyper adam{.lr = 0.0, .beta1 = 0.9, .beta2 = 0.98, .eps = 1e-8, .weight_decay = 0.01};
  std::uint64_t seed = 0;
};

template <typename Real>
struct PtuneResult {
  PromptWeights<Real> weights;
  std::vector<double> loss_trace;  // per step
  double max_base_grad = 0.0;      // largest |grad| seen on any base tensor
};

template <typename Real>
PtuneResult<Real> ptune_train(const Checkpoint<Real>& ckpt, const std::vector<PromptExample>& data,
                              const SoftPromptConfig& spc, const PtuneHyper& hp) {
  if (data.empty()) {
    throw PtuneError("p-tuning dataset is empty");
  }
  if (hp.batch == 0 || hp.steps > hp.schedule.total_steps) {
    throw PtuneError("batch must be positive and steps within the schedule");
  }
  hp.schedule.validate();
  for (const auto& ex : data) {
    if (spc.n_virtual + ex.x.size() + ex.y.size() > ckpt.config.context_len) {
      throw PtuneError("example overflows the context after assembly");
    }
  }
  PtuneResult<Real> r{init_prompt<Real>(spc, ckpt.config.hidden), {}, 0.0};
  FreezeGuard<Real> frozen(ckpt);
  const auto base = ckpt.tensors();
  auto params = r.weights.tensors();
  AdamState state = make_adam_state<Real>(params, hp.adam);
  CounterRng rng(CounterRng::derive(hp.seed, "ptune-batches"));
  std::vector<const PromptExample*> batch(hp.batch);
  for (std::size_t s = 1; s <= hp.steps; ++s) {
    for (auto& b : batch) {
      b = &data[rng.below(data.size())];
    }
    for (auto& p : params) {
      p.zero_grad();
    }
    auto loss = prompt_loss(ckpt, r.weights, std::span<const PromptExample* const>(batch));
    r.loss_trace.push_back(loss.item());
    backward(loss);
    for (const auto& t : base) {
      for (Real g : t.grad()) {
        r.max_base_grad = std::max(r.max_base_grad, std::abs(static_cast<double>(g)));
      }
    }
    state.hyper.lr = lr_at(hp.schedule, s);
    adam_step<Real>(params, state);
    r.weights.step += 1;
  }
  for (auto& p : params) {
    p.zero_grad();
  }
  return r;
}

struct InferOptions {
  std::size_t max_new_tokens = 64;
  std::vector<std::int32_t> stop_ids;
  std::optional<SamplerConfig> sampling;  // greedy when absent
};

// Generated target ids (stop token excluded). Greedy argmax unless sampling is set.
template <typename Real>
std::vector<std::int32_t> ptune_infer(const Checkpoint<Real>& ckpt, const PromptWeights<Real>& w,
                                      std::span<const std::int32_t> x, const InferOptions& opt = {}) {
  check_compatible(ckpt, w);
  if (x.empty()) {
    throw PtuneError("input x is empty");
  }
  if (w.config.n_virtual + x.size() >= ckpt.config.context_len) {
    throw PtuneError("prompt plus input leaves no room to generate");
  }
  NoGradGuard no_grad;
  const auto virt = virtual_embeddings(w);
  const auto vv = virt.values();
  IncrementalDecoder<Real> dec(ckpt);
  std::vector<Real> logits;
  for (std::size_t i = 0; i < w.config.n_virtual; ++i) {
    logits = dec.push_embedding(vv.subspan(i * w.hidden, w.hidden));
  }
  for (auto id : x) {
    logits = dec.push_token(id);
  }
  std::optional<CounterRng> rng;
  if (opt.sampling) {
    opt.sampling->validate();
    rng.emplace(CounterRng::derive(opt.sampling->rng_seed, "sampler"));
  }
  std::vector<std::int32_t> out;
  while (out.size() < opt.max_new_tokens) {
    std::int32_t id;
    if (rng) {
      id = static_cast<std::int32_t>(sample_index(step_distribution<Real>(logits, *opt.sampling), *rng));
    } else {
      id = static_cast<std::int32_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    }
    if (std::find(opt.stop_ids.begin(), opt.stop_ids.end(), id) != opt.stop_ids.end()) {
      break;
    }
    out.push_back(id);
    if (dec.length() >= dec.capacity()) {
      break;
    }
    logits = dec.push_token(id);
  }
  return out;
}

// ---- file format -------------------------------------------------------------

template <typename Real>
nlohmann::json prompt_to_json(const PromptWeights<Real>& w) {
  nlohmann::json j{{"format", "gtlab-prompt"}, {"version", 1},      {"dtype", dtype_name(dtype_of<Real>())},
                   {"config", w.config},       {"hidden", w.hidden}, {"step", w.step}};
  auto& ps = j["params"] = nlohmann::json::array();
  for (const auto& p : w.params) {
    const auto v = p.tensor.values();
    ps.push_back({{"name", p.name}, {"shape", p.tensor.shape()}, {"values", std::vector<Real>(v.begin(), v.end())}});
  }
  return j;
}

template <typename Real>
PromptWeights<Real> prompt_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "gtlab-prompt" || j.at("version") != 1) {
      throw PtuneError("not a version-1 prompt file");
    }
    if (j.at("dtype").get<std::string>() != dtype_name(dtype_of<Real>())) {
      throw PtuneError("prompt dtype mismatch");
    }
    PromptWeights<Real> w;
    w.config = j.at("config").get<SoftPromptConfig>();
    w.config.validate();
    w.hidden = j.at("hidden").get<std::size_t>();
    w.step = j.at("step").get<std::uint64_t>();
    const auto ref = init_prompt<Real>(w.config, w.hidden);
    for (const auto& p : j.at("params")) {
      w.params.push_back({p.at("name").get<std::string>(),
                          Tensor<Real>(p.at("shape").get<Shape>(), p.at("values").get<std::vector<Real>>(), true)});
    }
    if (w.params.size() != ref.params.size()) {
      throw PtuneError("prompt file has the wrong parameter set");
    }
    for (std::size_t i = 0; i < w.params.size(); ++i) {
      if (w.params[i].name != ref.params[i].name || w.params[i].tensor.shape() != ref.params[i].tensor.shape()) {
        throw PtuneError("prompt parameter '" + w.params[i].name + "' does not match the encoder layout");
      }
    }
    return w;
  } catch (const nlohmann::json::exception& e) {
    throw PtuneError(std::string("malformed prompt file: ") + e.what());
  } catch (const TensorError& e) {
    throw PtuneError(std::string("malformed prompt file: ") + e.what());
  }
}

template <typename Real>
void save_prompt(const PromptWeights<Real>& w, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw PtuneError("cannot write " + path.string());
  }
  out << prompt_to_json(w).dump() << '\n';
}

template <typename Real>
PromptWeights<Real> load_prompt(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw PtuneError("cannot open " + path.string());
  }
  try {
    return prompt_from_json<Real>(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw PtuneError(std::string("malformed prompt file: ") + e.what());
  }
}

}  // namespace gtlab
