#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "gtlab/gpt/config.hpp"
#include "gtlab/numerics/ops.hpp"
#include "gtlab/numerics/rng.hpp"
#include "gtlab/numerics/tensor.hpp"
#include "gtlab/util/digest.hpp"

namespace gtlab {

enum class Mode { train, eval };

class ModelError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Row-major batch of equal-length id sequences.
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t len = 0;
  std::vector<std::int32_t> ids;

  static TokenBatch single(std::span<const std::int32_t> seq) {
    return {1, seq.size(), std::vector<std::int32_t>(seq.begin(), seq.end())};
  }
};

template <typename Real>
struct NamedTensor {
  std::string name;
  Tensor<Real> tensor;
};

template <typename Real>
struct Checkpoint {
  ModelConfig config;
  std::vector<NamedTensor<Real>> params;
  std::uint64_t train_step = 0;
  // Free-form attachments (e.g. the tokenizer) carried in the file header.
  nlohmann::json metadata = nlohmann::json::object();

  const Tensor<Real>& param(std::string_view name) const {
    for (const auto& p : params) {
      if (p.name == name) {
        return p.tensor;
      }
    }
    throw ModelError("checkpoint has no parameter '" + std::string(name) + "'");
  }

  std::vector<Tensor<Real>> tensors() const {
    std::vector<Tensor<Real>> out;
    out.reserve(params.size());
    for (const auto& p : params) {
      out.push_back(p.tensor);
    }
    return out;
  }

  std::uint64_t allocated_elements() const {
    std::uint64_t n = 0;
    for (const auto& p : params) {
      n += p.tensor.numel();
    }
    return n;
  }

  void set_requires_grad(bool flag) {
    for (auto& p : params) {
      p.tensor.set_requires_grad(flag);
    }
  }

  // Deep copy; tensors in the result share no buffers with this checkpoint.
  Checkpoint clone() const {
    Checkpoint c{config, {}, train_step, metadata};
    for (const auto& p : params) {
      const auto v = p.tensor.values();
      c.params.push_back({p.name, Tensor<Real>(p.tensor.shape(), {v.begin(), v.end()},
                                               p.tensor.requires_grad())});
    }
    return c;
  }
};

// SHA-256 over every parameter's name, shape and raw value bytes.
template <typename Real>
std::string content_hash(const Checkpoint<Real>& ckpt) {
  Sha256 sha;
  sha.update(dtype_name(dtype_of<Real>()));
  for (const auto& p : ckpt.params) {
    sha.update(p.name);
    sha.update_pod('\0');
    for (auto e : p.tensor.shape()) {
      sha.update_pod(static_cast<std::uint64_t>(e));
    }
    const auto v = p.tensor.values();
    sha.update(v.data(), v.size() * sizeof(Real));
  }
  return sha.hex();
}

// Weights ~ N(0, 0.02); residual output projections are scaled by
// 1/sqrt(2 * n_layers); gains start at one and biases at zero. Each tensor
// draws from its own stream keyed by (init_seed, name).
template <typename Real>
Checkpoint<Real> init_model(const ModelConfig& config) {
  config.validate();
  constexpr double kStd = 0.02;
  const double residual_std =
      config.n_layers ? kStd / std::sqrt(2.0 * static_cast<double>(config.n_layers)) : kStd;
  Checkpoint<Real> ckpt;
  ckpt.config = config;
  for (const auto& spec : param_layout(config)) {
    std::vector<Real> values(spec.numel());
    CounterRng rng(CounterRng::derive(config.init_seed, spec.name));
    switch (spec.init) {
      case ParamSpec::Init::normal:
        for (auto& v : values) {
          v = static_cast<Real>(rng.normal() * kStd);
        }
        break;
      case ParamSpec::Init::residual_normal:
        for (auto& v : values) {
          v = static_cast<Real>(rng.normal() * residual_std);
        }
        break;
      case ParamSpec::Init::ones:
        std::fill(values.begin(), values.end(), Real{1});
        break;
      case ParamSpec::Init::zeros:
        break;
    }
    ckpt.params.push_back({spec.name, Tensor<Real>(spec.shape, std::move(values), true)});
  }
  return ckpt;
}

template <typename Real>
void check_tokens(const ModelConfig& config, const TokenBatch& tokens) {
  if (tokens.batch == 0 || tokens.len == 0 || tokens.ids.size() != tokens.batch * tokens.len) {
    throw ModelError("token batch is empty or ragged");
  }
  if (tokens.len > config.context_len) {
    throw ModelError("sequence of " + std::to_string(tokens.len) + " exceeds context_len " +
                     std::to_string(config.context_len));
  }
  for (auto id : tokens.ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= config.vocab_size) {
      throw ModelError("token id " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(config.vocab_size));
    }
  }
}

// Transformer stack over precomputed input embeddings (batch*len, hidden);
// positions are added here. Returns logits (batch*len, vocab).
template <typename Real>
Tensor<Real> forward_embeddings(const Checkpoint<Real>& ckpt, const Tensor<Real>& embeddings,
                                std::size_t batch, std::size_t len, Mode mode,
                                CounterRng* dropout_rng = nullptr) {
  const auto& c = ckpt.config;
  if (len > c.context_len) {
    throw ModelError("sequence of " + std::to_string(len) + " exceeds context_len " +
                     std::to_string(c.context_len));
  }
  const double p = mode == Mode::train ? c.dropout : 0.0;
  if (p > 0.0 && dropout_rng == nullptr) {
    throw ModelError("train-mode forward with dropout needs an rng");
  }
  auto drop = [&](const Tensor<Real>& t) { return p > 0.0 ? ops::dropout(t, p, *dropout_rng) : t; };

  auto x = drop(ops::add_positional(embeddings, ckpt.param("wpe"), batch, len));
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::string pre = "h" + std::to_string(l) + ".";
    auto a = ops::layer_norm(x, ckpt.param(pre + "ln1.gain"), ckpt.param(pre + "ln1.bias"));
    auto qkv = ops::add_bias(ops::matmul(a, ckpt.param(pre + "attn.qkv.weight")),
                             ckpt.param(pre + "attn.qkv.bias"));
    auto att = ops::causal_attention(qkv, batch, len, c.n_heads);
    auto proj = ops::add_bias(ops::matmul(att, ckpt.param(pre + "attn.proj.weight")),
                              ckpt.param(pre + "attn.proj.bias"));
    x = ops::add(x, drop(proj));
    auto m = ops::layer_norm(x, ckpt.param(pre + "ln2.gain"), ckpt.param(pre + "ln2.bias"));
    auto fc = ops::gelu(ops::add_bias(ops::matmul(m, ckpt.param(pre + "mlp.fc.weight")),
                                      ckpt.param(pre + "mlp.fc.bias")));
    auto out = ops::add_bias(ops::matmul(fc, ckpt.param(pre + "mlp.proj.weight")),
                             ckpt.param(pre + "mlp.proj.bias"));
    x = ops::add(x, drop(out));
  }
  x = ops::layer_norm(x, ckpt.param("ln_f.gain"), ckpt.param("ln_f.bias"));
  return ops::matmul_nt(x, ckpt.param("wte"));
}

// Logits of shape (batch, len, vocab); position i sees tokens <= i only.
template <typename Real>
Tensor<Real> forward(const Checkpoint<Real>& ckpt, const TokenBatch& tokens, Mode mode,
                     CounterRng* dropout_rng = nullptr) {
  check_tokens<Real>(ckpt.config, tokens);
  auto emb = ops::embedding(ckpt.param("wte"), std::span<const std::int32_t>(tokens.ids));
  auto logits = forward_embeddings(ckpt, emb, tokens.batch, tokens.len, mode, dropout_rng);
  return ops::reshape(logits, {tokens.batch, tokens.len, ckpt.config.vocab_size});
}

// Mean next-token cross-entropy: position t predicts token t+1. Optional
// weights (batch*len) apply to the predicted token; weight[b*len + 0] is unused.
template <typename Real>
Tensor<Real> lm_loss(const Tensor<Real>& logits, const TokenBatch& tokens,
                     std::span<const Real> target_weights = {}) {
  if (tokens.len < 2) {
    throw ModelError("lm_loss needs at least 2 tokens per sequence");
  }
  if (logits.rank() != 3 || logits.dim(0) != tokens.batch || logits.dim(1) != tokens.len) {
    throw ModelError("lm_loss: logits shape " + shape_str(logits.shape()) +
                     " does not match token batch");
  }
  if (!target_weights.empty() && target_weights.size() != tokens.ids.size()) {
    throw ModelError("lm_loss: weight count does not match token batch");
  }
  const auto vocab = logits.dim(2);
  const auto rows = tokens.batch * tokens.len;
  std::vector<std::int32_t> targets(rows, 0);
  std::vector<Real> weights(rows, Real{0});
  for (std::size_t b = 0; b < tokens.batch; ++b) {
    for (std::size_t t = 0; t + 1 < tokens.len; ++t) {
      const auto r = b * tokens.len + t;
      targets[r] = tokens.ids[r + 1];
      weights[r] = target_weights.empty() ? Real{1} : target_weights[r + 1];
    }
  }
  auto flat = ops::reshape(logits, {rows, vocab});
  return ops::cross_entropy(flat, std::span<const std::int32_t>(targets),
                            std::span<const Real>(weights));
}

}  // namespace gtlab
