#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace gtlab {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Decoder-only transformer hyperparameters. The block layout is GPT-3's:
// learned positions, pre-norm blocks, GeLU MLP of width 4*hidden, final norm,
// and an output projection tied to the token embedding.
struct ModelConfig {
  std::size_t n_layers = 2;
  std::size_t hidden = 64;
  std::size_t n_heads = 4;
  std::size_t vocab_size = 256;
  std::size_t context_len = 128;
  double dropout = 0.1;
  std::uint64_t init_seed = 1234;

  void validate() const {
    if (hidden == 0 || n_heads == 0) {
      throw ConfigError("hidden and n_heads must be positive");
    }
    if (hidden % n_heads != 0) {
      throw ConfigError("hidden " + std::to_string(hidden) + " is not divisible by n_heads " +
                        std::to_string(n_heads));
    }
    if (vocab_size == 0) {
      throw ConfigError("vocab_size must be positive");
    }
    if (context_len < 1) {
      throw ConfigError("context_len must be at least 1");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) {
      throw ConfigError("dropout must lie in [0, 1)");
    }
  }

  std::size_t head_dim() const { return hidden / n_heads; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"n_layers", c.n_layers},       {"hidden", c.hidden},
                     {"n_heads", c.n_heads},         {"vocab_size", c.vocab_size},
                     {"context_len", c.context_len}, {"dropout", c.dropout},
                     {"init_seed", c.init_seed}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.n_layers = j.value("n_layers", d.n_layers);
  c.hidden = j.value("hidden", d.hidden);
  c.n_heads = j.value("n_heads", d.n_heads);
  c.vocab_size = j.value("vocab_size", d.vocab_size);
  c.context_len = j.value("context_len", d.context_len);
  c.dropout = j.value("dropout", d.dropout);
  c.init_seed = j.value("init_seed", d.init_seed);
}

struct ParamSpec {
  std::string name;
  std::vector<std::size_t> shape;
  enum class Init { normal, residual_normal, ones, zeros } init;

  std::uint64_t numel() const {
    std::uint64_t n = 1;
    for (auto e : shape) {
      n *= e;
    }
    return n;
  }
};

// Every learned tensor of the model, in checkpoint order.
inline std::vector<ParamSpec> param_layout(const ModelConfig& c) {
  using I = ParamSpec::Init;
  const auto h = c.hidden;
  std::vector<ParamSpec> out{
      {"wte", {c.vocab_size, h}, I::normal},
      {"wpe", {c.context_len, h}, I::normal},
  };
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::string p = "h" + std::to_string(l) + ".";
    out.push_back({p + "ln1.gain", {h}, I::ones});
    out.push_back({p + "ln1.bias", {h}, I::zeros});
    out.push_back({p + "attn.qkv.weight", {h, 3 * h}, I::normal});
    out.push_back({p + "attn.qkv.bias", {3 * h}, I::zeros});
    out.push_back({p + "attn.proj.weight", {h, h}, I::residual_normal});
    out.push_back({p + "attn.proj.bias", {h}, I::zeros});
    out.push_back({p + "ln2.gain", {h}, I::ones});
    out.push_back({p + "ln2.bias", {h}, I::zeros});
    out.push_back({p + "mlp.fc.weight", {h, 4 * h}, I::normal});
    out.push_back({p + "mlp.fc.bias", {4 * h}, I::zeros});
    out.push_back({p + "mlp.proj.weight", {4 * h, h}, I::residual_normal});
    out.push_back({p + "mlp.proj.bias", {h}, I::zeros});
  }
  out.push_back({"ln_f.gain", {h}, I::ones});
  out.push_back({"ln_f.bias", {h}, I::zeros});
  return out;
}

// Exact parameter count of the layout above; never allocates.
inline std::uint64_t param_count(const ModelConfig& c) {
  c.validate();
  std::uint64_t total = 0;
  for (const auto& spec : param_layout(c)) {
    total += spec.numel();
  }
  return total;
}

}  // namespace gtlab
