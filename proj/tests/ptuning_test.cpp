#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <vector>

#include "gtlab/gpt/model.hpp"
#include "gtlab/ptuning/ptuning.hpp"
#include "support/synthetic_re.hpp"

using namespace gtlab;

namespace {

Checkpoint<double> tiny_model() {
  return init_model<double>({.n_layers = 1, .hidden = 16, .n_heads = 2, .vocab_size = 40, .context_len = 48,
                             .dropout = 0.0, .init_seed = 4});
}

SoftPromptConfig small_prompt(EncoderKind kind = EncoderKind::recurrent) {
  SoftPromptConfig c;
  c.encoder_kind = kind;
  c.encoder_hidden = 32;
  c.task_name = "unit";
  c.init_seed = 2;
  return c;
}

std::vector<std::int32_t> ids(std::size_t n, std::int32_t start) {
  std::vector<std::int32_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<std::int32_t>((start + 3 * i) % 40);
  return v;
}

}  // namespace

TEST(Assemble, Lengths) {
  const auto ckpt = tiny_model();
  const auto w = init_prompt<double>(small_prompt(), 16);
  EXPECT_EQ(assemble_input(ckpt, w, ids(20, 1), ids(5, 2)).dim(0), 40u);
  EXPECT_EQ(assemble_input(ckpt, w, ids(20, 1), {}).dim(0), 35u);
  EXPECT_THROW(assemble_input(ckpt, w, ids(30, 1), ids(4, 2)), std::exception);
  EXPECT_THROW(assemble_input(ckpt, w, {}, ids(4, 2)), PtuneError);
}

TEST(Assemble, TokenRowsAreTableRows) {
  const auto ckpt = tiny_model();
  const auto w = init_prompt<double>(small_prompt(), 16);
  const auto x = ids(6, 5), y = ids(3, 7);
  const auto emb = assemble_input(ckpt, w, x, y);
  const auto virt = virtual_embeddings(w);
  const auto wte = ckpt.param("wte").values();
  const auto e = emb.values();
  const std::size_t h = 16;
  for (std::size_t i = 0; i < 15 * h; ++i) ASSERT_EQ(e[i], virt.values()[i]);
  std::vector<std::int32_t> xy(x);
  xy.insert(xy.end(), y.begin(), y.end());
  for (std::size_t t = 0; t < xy.size(); ++t) {
    for (std::size_t k = 0; k < h; ++k) {
      ASSERT_EQ(e[(15 + t) * h + k], wte[static_cast<std::size_t>(xy[t]) * h + k]);
    }
  }
}

TEST(Assemble, VirtualChangeMovesLogits) {
  const auto ckpt = tiny_model();
  for (auto kind : {EncoderKind::recurrent, EncoderKind::feedforward}) {
    auto w = init_prompt<double>(small_prompt(kind), 16);
    const auto x = ids(5, 3);
    auto logits = [&] {
      NoGradGuard ng;
      const auto emb = assemble_input(ckpt, w, x, {});
      const auto out = forward_embeddings(ckpt, emb, 1, emb.dim(0), Mode::eval);
      return std::vector<double>(out.values().begin(), out.values().end());
    };
    const auto before = logits();
    auto seed = w.param("seed");
    seed.mutable_values()[0] += 0.5;
    EXPECT_NE(before, logits());
  }
}

TEST(Train, ZeroStepsLeavesInitialization) {
  const auto ckpt = tiny_model();
  PtuneHyper hp;
  hp.steps = 0;
  const std::vector<PromptExample> data{{ids(4, 1), ids(2, 9)}};
  const auto r = ptune_train(ckpt, data, small_prompt(), hp);
  EXPECT_TRUE(r.weights.same_values(init_prompt<double>(small_prompt(), 16)));
  EXPECT_TRUE(r.loss_trace.empty());
}

TEST(Train, GradientIsolation) {
  const auto ckpt = tiny_model();
  auto w = init_prompt<double>(small_prompt(), 16);
  const std::vector<PromptExample> data{{ids(4, 1), ids(3, 9)}, {ids(6, 2), ids(2, 5)}};
  std::vector<const PromptExample*> batch{&data[0], &data[1]};
  FreezeGuard<double> frozen(ckpt);
  auto loss = prompt_loss(ckpt, w, std::span<const PromptExample* const>(batch));
  backward(loss);
  for (const auto& t : ckpt.tensors()) {
    for (double g : t.grad_or_zeros()) ASSERT_EQ(g, 0.0);
  }
  for (const auto& t : w.tensors()) {
    ASSERT_TRUE(t.has_grad());
    double norm = 0;
    for (double g : t.grad()) {
      ASSERT_TRUE(std::isfinite(g));
      norm += g * g;
    }
    EXPECT_GT(norm, 0.0);
  }
}

TEST(Train, FreezeGuardRestoresFlags) {
  const auto ckpt = tiny_model();
  const auto before = ckpt.tensors().front().requires_grad();
  {
    FreezeGuard<double> g(ckpt);
    for (const auto& t : ckpt.tensors()) EXPECT_FALSE(t.requires_grad());
  }
  EXPECT_EQ(ckpt.tensors().front().requires_grad(), before);
}

TEST(Train, RejectsBadData) {
  const auto ckpt = tiny_model();
  PtuneHyper hp;
  EXPECT_THROW(ptune_train(ckpt, {}, small_prompt(), hp), PtuneError);
  const std::vector<PromptExample> big{{ids(30, 1), ids(10, 2)}};
  EXPECT_THROW(ptune_train(ckpt, big, small_prompt(), hp), PtuneError);
}

TEST(Infer, GreedyDeterministicAndGuarded) {
  const auto ckpt = tiny_model();
  const auto w = init_prompt<double>(small_prompt(), 16);
  InferOptions opt;
  opt.max_new_tokens = 10;
  const auto x = ids(5, 4);
  const auto a = ptune_infer(ckpt, w, std::span<const std::int32_t>(x), opt);
  EXPECT_EQ(a.size(), 10u);
  EXPECT_EQ(a, ptune_infer(ckpt, w, std::span<const std::int32_t>(x), opt));
  EXPECT_THROW(ptune_infer(ckpt, w, std::span<const std::int32_t>(), opt), PtuneError);
  const auto huge = ids(33, 1);
  EXPECT_THROW(ptune_infer(ckpt, w, std::span<const std::int32_t>(huge), opt), PtuneError);
}

TEST(Infer, RejectsMismatchedPrompt) {
  const auto ckpt = tiny_model();
  const auto w = init_prompt<double>(small_prompt(), 24);
  const auto x = ids(3, 1);
  EXPECT_THROW(ptune_infer(ckpt, w, std::span<const std::int32_t>(x)), PtuneError);
}

TEST(PromptFile, RoundTrip) {
  for (auto kind : {EncoderKind::recurrent, EncoderKind::feedforward}) {
    auto w = init_prompt<double>(small_prompt(kind), 16);
    w.step = 17;
    const auto path = std::filesystem::temp_directory_path() / "gtlab_prompt_roundtrip.json";
    save_prompt(w, path);
    const auto back = load_prompt<double>(path);
    EXPECT_TRUE(back.same_values(w));
    EXPECT_EQ(back.step, 17u);
    EXPECT_EQ(back.config.task_name, "unit");
    EXPECT_EQ(back.config.encoder_kind, kind);
    EXPECT_THROW(load_prompt<float>(path), std::exception);
    std::filesystem::remove(path);
  }
}

// ---- the synthetic relation task -------------------------------------------

class SyntheticRelation : public ::testing::Test {
 protected:
  struct Run {
    fixtures::ReWorld world;
    std::string hash_before, hash_after;
    PtuneResult<float> result;
    double untuned_f1 = 0, tuned_f1 = 0;
  };

  static void SetUpTestSuite() {
    if (run_) return;
    run_ = new Run{fixtures::make_re_world(5, 1000, GTLAB_CACHE_DIR), {}, {}, {}, 0, 0};
    auto& w = run_->world;
    SoftPromptConfig spc;
    spc.task_name = "synthetic-re";
    PtuneHyper hp;
    hp.schedule.peak_lr = 1e-3;
    run_->hash_before = content_hash(w.ckpt);
    run_->untuned_f1 = w.evaluate(init_prompt<float>(spc, w.ckpt.config.hidden)).f1;
    run_->result = ptune_train(w.ckpt, w.train_examples(), spc, hp);
    run_->hash_after = content_hash(w.ckpt);
    run_->tuned_f1 = w.evaluate(run_->result.weights).f1;
  }

  static Run* run_;
};

SyntheticRelation::Run* SyntheticRelation::run_ = nullptr;

TEST_F(SyntheticRelation, TuningLiftsF1) {
  EXPECT_LE(run_->untuned_f1, 0.2);
  EXPECT_GE(run_->tuned_f1, 0.9);
}

TEST_F(SyntheticRelation, BaseModelUntouched) {
  EXPECT_EQ(run_->hash_before, run_->hash_after);
  EXPECT_EQ(run_->result.max_base_grad, 0.0);
}

TEST_F(SyntheticRelation, SmoothedLossDoesNotClimb) {
  const auto& trace = run_->result.loss_trace;
  ASSERT_EQ(trace.size(), 200u);
  std::vector<double> ema;
  double s = trace.front();
  for (double l : trace) {
    s = 0.9 * s + 0.1 * l;
    ema.push_back(s);
  }
  for (std::size_t i = 0; i < ema.size(); ++i) {
    for (std::size_t j = i + 1; j < std::min(ema.size(), i + 51); ++j) {
      ASSERT_LE(ema[j], 1.05 * ema[i]) << i << " -> " << j;
    }
  }
  EXPECT_LT(ema.back(), 0.2 * ema.front());
}

TEST_F(SyntheticRelation, ParsedOutputsMatchGold) {
  const auto& w = run_->world;
  InferOptions opt;
  opt.max_new_tokens = 40;
  opt.stop_ids = {w.eot};
  std::size_t exact = 0;
  for (const auto& it : w.test) {
    // The label rule is the cue phrase; recompute gold from the sentence.
    const auto cue = std::find_if(fixtures::re_words::kCues.begin(), fixtures::re_words::kCues.end(),
                                  [&](const auto& c) { return it.sentence.find(c.phrase) != std::string::npos; });
    ASSERT_EQ(cue->relation, it.triplet.relation);
    const auto x = w.tok.encode(it.sentence);
    const auto out = ptune_infer(w.ckpt, run_->result.weights, std::span<const std::int32_t>(x), opt);
    const auto parsed = tasks::parse_triplets(w.tok.decode(out));
    if (parsed.triplets == tasks::TripletSet{it.triplet}) ++exact;
  }
  EXPECT_GE(exact, 90u);
}
