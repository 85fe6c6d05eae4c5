// Global preference activation: shapes, the zero-weight residual closed form,
// the oracle match, question influence, branch independence and gradients.

#include <gtest/gtest.h>

#include "avm/preference.hpp"
#include "oracle.hpp"
#include "test_util.hpp"

using avm::ForwardCtx;
using avm::Mat;
using avm::Modality;
using avm::ModelConfig;
using avm::ParameterStore;
using avm::Rng;
using avm::Tape;
using avm::Var;

namespace {

void zero_pref_blocks(ParameterStore& ps, const std::string& mod) {
  for (const char* blk : {".sab", ".cab"})
    for (const char* n : {".wq", ".bq", ".wk", ".wv", ".bv", ".wo", ".bo",
                          ".ln1.g", ".ln1.b", ".ln2.g", ".ln2.b", ".ffn.w1", ".ffn.b1",
                          ".ffn.w2", ".ffn.b2"})
      ps.value("pref." + mod + blk + n).setZero();
}

}  // namespace

TEST(Preference, OutputShapeIsTxD) {
  ModelConfig cfg = testutil::tiny_config();
  ParameterStore ps = avm::init_parameters(cfg, 1);
  Rng rng(1);
  Tape t;
  ForwardCtx ctx(t, ps, cfg, false);
  Var out = avm::activate(ctx, t.leaf(testutil::random_mat(rng, 4, cfg.d)),
                          t.leaf(testutil::random_mat(rng, 3, cfg.d)), Modality::visual);
  EXPECT_EQ(t.val(out).rows(), 4);
  EXPECT_EQ(t.val(out).cols(), cfg.d);
}

TEST(Preference, ZeroBlocksGiveMlpOfTwiceInput) {
  ModelConfig cfg = testutil::tiny_config();
  ParameterStore ps = avm::init_parameters(cfg, 2);
  zero_pref_blocks(ps, "audio");
  Rng rng(2);
  Mat feats = testutil::random_mat(rng, 3, cfg.d);
  Mat word = testutil::random_mat(rng, 3, cfg.d);
  Tape t;
  ForwardCtx ctx(t, ps, cfg, false);
  Var out = avm::activate(ctx, t.leaf(feats), t.leaf(word), Modality::audio);
  Mat expect = oracle::mlp(2.0 * feats, ps, "pref.audio.mlp");
  EXPECT_LE(testutil::max_abs_diff(t.val(out), expect), 1e-9);
}

TEST(Preference, MatchesOracleComposition) {
  ModelConfig cfg = testutil::tiny_config();
  ParameterStore ps = avm::init_parameters(cfg, 3);
  Rng rng(3);
  Mat feats = testutil::random_mat(rng, 4, cfg.d);
  Mat word = testutil::random_mat(rng, 2, cfg.d);
  Tape t;
  ForwardCtx ctx(t, ps, cfg, false);
  Var out = avm::activate(ctx, t.leaf(feats), t.leaf(word), Modality::visual);
  EXPECT_LE(testutil::max_abs_diff(t.val(out),
                                   oracle::activate(ps, cfg, Modality::visual, feats, word)),
            1e-6);
}

TEST(Preference, QuestionRowsInfluenceOutput) {
  ModelConfig cfg = testutil::tiny_config();
  ParameterStore ps = avm::init_parameters(cfg, 4);
  Rng rng(4);
  Mat feats = testutil::random_mat(rng, 4, cfg.d);
  Mat word = testutil::random_mat(rng, 3, cfg.d);
  auto run = [&](const Mat& w) {
    Tape t;
    ForwardCtx ctx(t, ps, cfg, false);
    return t.val(avm::activate(ctx, t.leaf(feats), t.leaf(w), Modality::audio));
  };
  Mat base = run(word);
  for (int r = 0; r < word.rows(); ++r) {
    Mat w = word;
    w(r, 1) += 1e-2;
    EXPECT_GT(testutil::max_abs_diff(run(w), base), 1e-8) << "word row " << r;
  }
}

TEST(Preference, BranchesAreIndependent) {
  ModelConfig cfg = testutil::tiny_config();
  ParameterStore ps = avm::init_parameters(cfg, 5);
  Rng rng(5);
  Mat feats = testutil::random_mat(rng, 3, cfg.d);
  Mat word = testutil::random_mat(rng, 2, cfg.d);
  auto visual_out = [&]() {
    Tape t;
    ForwardCtx ctx(t, ps, cfg, false);
    return t.val(avm::activate(ctx, t.leaf(feats), t.leaf(word), Modality::visual));
  };
  Mat before = visual_out();
  zero_pref_blocks(ps, "audio");
  for (const char* n : {".w1", ".b1", ".w2", ".b2"})
    ps.value(std::string("pref.audio.mlp") + n).setZero();
  Mat after = visual_out();
  EXPECT_EQ(testutil::max_abs_diff(before, after), 0.0);  // bit-identical
}

TEST(Preference, GradientCheck) {
  ModelConfig cfg = testutil::tiny_config();
  ParameterStore ps = avm::init_parameters(cfg, 6);
  Rng rng(6);
  Mat feats = testutil::random_mat(rng, 3, cfg.d);
  Mat word = testutil::random_mat(rng, 2, cfg.d);
  Mat seed = testutil::random_mat(rng, 3, cfg.d);
  auto loss = [&]() {
    Tape t;
    ForwardCtx ctx(t, ps, cfg, false);
    Var out = avm::activate(ctx, t.leaf(feats), t.leaf(word), Modality::audio);
    return t.val(out).cwiseProduct(seed).sum();
  };
  Mat fsink = Mat::Zero(3, cfg.d), wsink = Mat::Zero(2, cfg.d);
  ps.zero_grads();
  Tape t;
  ForwardCtx ctx(t, ps, cfg, true);
  Var out = avm::activate(ctx, t.leaf(feats, &fsink), t.leaf(word, &wsink), Modality::audio);
  Var zero = t.leaf(Mat::Zero(1, 1));
  t.backward(zero, 1.0, {{out, seed}});
  testutil::check_grad_against_fd(feats, fsink, loss, 1e-4, 4);
  testutil::check_grad_against_fd(word, wsink, loss, 1e-4, 4);
  for (const char* name : {"pref.audio.mlp.w1", "pref.audio.sab.wq", "pref.audio.cab.wk"})
    testutil::check_grad_against_fd(ps.value(name), ps.grad(name), loss, 1e-4, 3);
}

TEST(Preference, TraceCapturesWordAttention) {
  ModelConfig cfg = testutil::tiny_config();
  ParameterStore ps = avm::init_parameters(cfg, 7);
  Rng rng(7);
  Mat feats = testutil::random_mat(rng, 4, cfg.d);
  Mat word = testutil::random_mat(rng, 3, cfg.d);
  avm::TraceRecord trace;
  trace.enabled = true;
  Tape t;
  ForwardCtx ctx(t, ps, cfg, false);
  avm::activate(ctx, t.leaf(feats), t.leaf(word), Modality::audio, &trace);
  ASSERT_EQ(trace.word_attn_audio.rows(), 4);
  ASSERT_EQ(trace.word_attn_audio.cols(), 3);
  for (int r = 0; r < 4; ++r) EXPECT_NEAR(trace.word_attn_audio.row(r).sum(), 1.0, 1e-9);
}
