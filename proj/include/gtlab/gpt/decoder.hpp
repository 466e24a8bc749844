#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "gtlab/gpt/model.hpp"

namespace gtlab {

// Eval-mode incremental decoding with a per-layer key/value cache. Produces
// the same logits as `forward` (up to summation order) one position at a time.
template <typename Real>
class IncrementalDecoder {
 public:
  explicit IncrementalDecoder(const Checkpoint<Real>& ckpt) : ckpt_(&ckpt) {
    const auto& c = ckpt.config;
    c.validate();
    keys_.assign(c.n_layers, {});
    vals_.assign(c.n_layers, {});
    for (std::size_t l = 0; l < c.n_layers; ++l) {
      const std::string p = "h" + std::to_string(l) + ".";
      layers_.push_back({ckpt.param(p + "ln1.gain").values(), ckpt.param(p + "ln1.bias").values(),
                         ckpt.param(p + "attn.qkv.weight").values(),
                         ckpt.param(p + "attn.qkv.bias").values(),
                         ckpt.param(p + "attn.proj.weight").values(),
                         ckpt.param(p + "attn.proj.bias").values(),
                         ckpt.param(p + "ln2.gain").values(), ckpt.param(p + "ln2.bias").values(),
                         ckpt.param(p + "mlp.fc.weight").values(),
                         ckpt.param(p + "mlp.fc.bias").values(),
                         ckpt.param(p + "mlp.proj.weight").values(),
                         ckpt.param(p + "mlp.proj.bias").values()});
    }
    wte_ = ckpt.param("wte").values();
    wpe_ = ckpt.param("wpe").values();
    lnf_g_ = ckpt.param("ln_f.gain").values();
    lnf_b_ = ckpt.param("ln_f.bias").values();
  }

  std::size_t length() const { return pos_; }
  std::size_t capacity() const { return ckpt_->config.context_len; }

  void reset() {
    pos_ = 0;
    for (auto& k : keys_) {
      k.clear();
    }
    for (auto& v : vals_) {
      v.clear();
    }
  }

  std::vector<Real> push_token(std::int32_t id) {
    const auto& c = ckpt_->config;
    if (id < 0 || static_cast<std::size_t>(id) >= c.vocab_size) {
      throw ModelError("token id " + std::to_string(id) + " outside vocabulary");
    }
    return push_embedding(wte_.subspan(static_cast<std::size_t>(id) * c.hidden, c.hidden));
  }

  // Appends one input embedding (positional term added here) and returns the
  // next-token logits at that position.
  std::vector<Real> push_embedding(std::span<const Real> embedding) {
    const auto& c = ckpt_->config;
    const std::size_t h = c.hidden;
    if (embedding.size() != h) {
      throw ModelError("embedding width mismatch");
    }
    if (pos_ >= c.context_len) {
      throw ModelError("decoder context of " + std::to_string(c.context_len) + " exhausted");
    }
    std::vector<Real> x(h);
    for (std::size_t j = 0; j < h; ++j) {
      x[j] = embedding[j] + wpe_[pos_ * h + j];
    }
    std::vector<Real> a(h);
    std::vector<Real> qkv(3 * h);
    std::vector<Real> att(h);
    std::vector<Real> fc(4 * h);
    std::vector<Real> scores(pos_ + 1);
    const std::size_t hd = c.head_dim();
    const Real scale = Real{1} / std::sqrt(static_cast<Real>(hd));
    for (std::size_t l = 0; l < c.n_layers; ++l) {
      const auto& L = layers_[l];
      layer_norm(x, L.ln1_g, L.ln1_b, a);
      affine(a, L.qkv_w, L.qkv_b, qkv);
      keys_[l].insert(keys_[l].end(), qkv.begin() + static_cast<std::ptrdiff_t>(h),
                      qkv.begin() + static_cast<std::ptrdiff_t>(2 * h));
      vals_[l].insert(vals_[l].end(), qkv.begin() + static_cast<std::ptrdiff_t>(2 * h), qkv.end());
      std::fill(att.begin(), att.end(), Real{0});
      for (std::size_t head = 0; head < c.n_heads; ++head) {
        const Real* q = qkv.data() + head * hd;
        Real mx = -std::numeric_limits<Real>::infinity();
        for (std::size_t j = 0; j <= pos_; ++j) {
          const Real* k = keys_[l].data() + j * h + head * hd;
          Real s{0};
          for (std::size_t d = 0; d < hd; ++d) {
            s += q[d] * k[d];
          }
          scores[j] = s * scale;
          mx = std::max(mx, scores[j]);
        }
        Real z{0};
        for (std::size_t j = 0; j <= pos_; ++j) {
          scores[j] = std::exp(scores[j] - mx);
          z += scores[j];
        }
        Real* o = att.data() + head * hd;
        for (std::size_t j = 0; j <= pos_; ++j) {
          const Real w = scores[j] / z;
          const Real* v = vals_[l].data() + j * h + head * hd;
          for (std::size_t d = 0; d < hd; ++d) {
            o[d] += w * v[d];
          }
        }
      }
      std::vector<Real> proj(h);
      affine(att, L.proj_w, L.proj_b, proj);
      for (std::size_t j = 0; j < h; ++j) {
        x[j] += proj[j];
      }
      layer_norm(x, L.ln2_g, L.ln2_b, a);
      affine(a, L.fc_w, L.fc_b, fc);
      for (auto& v : fc) {
        v = gelu(v);
      }
      affine(fc, L.mproj_w, L.mproj_b, proj);
      for (std::size_t j = 0; j < h; ++j) {
        x[j] += proj[j];
      }
    }
    layer_norm(x, lnf_g_, lnf_b_, a);
    std::vector<Real> logits(c.vocab_size);
    for (std::size_t v = 0; v < c.vocab_size; ++v) {
      const Real* e = wte_.data() + v * h;
      Real s{0};
      for (std::size_t j = 0; j < h; ++j) {
        s += a[j] * e[j];
      }
      logits[v] = s;
    }
    ++pos_;
    return logits;
  }

 private:
  struct Layer {
    std::span<const Real> ln1_g, ln1_b, qkv_w, qkv_b, proj_w, proj_b, ln2_g, ln2_b, fc_w, fc_b,
        mproj_w, mproj_b;
  };

  static Real gelu(Real v) {
    constexpr Real c = static_cast<Real>(0.7978845608028654);
    constexpr Real k = static_cast<Real>(0.044715);
    return Real{0.5} * v * (Real{1} + std::tanh(c * (v + k * v * v * v)));
  }

  static void layer_norm(const std::vector<Real>& x, std::span<const Real> g,
                         std::span<const Real> b, std::vector<Real>& out) {
    const std::size_t n = x.size();
    Real mu{0};
    for (Real v : x) {
      mu += v;
    }
    mu /= static_cast<Real>(n);
    Real var{0};
    for (Real v : x) {
      var += (v - mu) * (v - mu);
    }
    var /= static_cast<Real>(n);
    const Real r = Real{1} / std::sqrt(var + Real{1e-5});
    for (std::size_t j = 0; j < n; ++j) {
      out[j] = (x[j] - mu) * r * g[j] + b[j];
    }
  }

  // out = in @ W + bias, W row-major (in.size(), out.size()).
  static void affine(const std::vector<Real>& in, std::span<const Real> w,
                     std::span<const Real> bias, std::vector<Real>& out) {
    const std::size_t m = out.size();
    std::copy(bias.begin(), bias.end(), out.begin());
    for (std::size_t k = 0; k < in.size(); ++k) {
      const Real a = in[k];
      const Real* row = w.data() + k * m;
      for (std::size_t j = 0; j < m; ++j) {
        out[j] += a * row[j];
      }
    }
  }

  const Checkpoint<Real>* ckpt_;
  std::vector<Layer> layers_;
  std::span<const Real> wte_, wpe_, lnf_g_, lnf_b_;
  std::vector<std::vector<Real>> keys_;
  std::vector<std::vector<Real>> vals_;
  std::size_t pos_ = 0;
};

}  // namespace gtlab
