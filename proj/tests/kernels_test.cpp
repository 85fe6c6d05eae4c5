// Attention-kernel contracts: closed-form cases, the dense-loop oracle, and
// finite-difference gradient verification for SAB / CAB / MLP / pooling.

#include <gtest/gtest.h>

#include "avm/kernels.hpp"
#include "oracle.hpp"
#include "test_util.hpp"

using avm::BlockVars;
using avm::ForwardCtx;
using avm::Mat;
using avm::ModelConfig;
using avm::ParameterStore;
using avm::Rng;
using avm::Tape;
using avm::Var;

namespace {

constexpr const char* kBlock = "pref.audio.sab";  // any allocated block

void zero_block(ParameterStore& ps, const std::string& prefix, bool include_ffn) {
  for (const char* n : {".wq", ".bq", ".wk", ".wv", ".bv", ".wo", ".bo",
                        ".ln1.g", ".ln1.b"})
    ps.value(prefix + n).setZero();
  if (include_ffn)
    for (const char* n : {".ln2.g", ".ln2.b", ".ffn.w1", ".ffn.b1", ".ffn.w2", ".ffn.b2"})
      ps.value(prefix + n).setZero();
}

}  // namespace

TEST(Sab, ZeroQueryProjectionGivesUniformAttention) {
  ModelConfig cfg = testutil::tiny_config();
  ParameterStore ps = avm::init_parameters(cfg, 1);
  ps.value(std::string(kBlock) + ".wq").setZero();
  ps.value(std::string(kBlock) + ".bq").setZero();
  Rng rng(2);
  Mat x = testutil::random_mat(rng, 4, cfg.d);
  Tape t;
  ForwardCtx ctx(t, ps, cfg, false);
  std::vector<Mat> attn;
  avm::sab(t, t.leaf(x), avm::load_block(ctx, kBlock), cfg.h, &attn);
  ASSERT_EQ(attn.size(), static_cast<std::size_t>(cfg.h));
  for (const Mat& p : attn)
    for (int r = 0; r < p.rows(); ++r)
      for (int c = 0; c < p.cols(); ++c) EXPECT_NEAR(p(r, c), 0.25, 1e-12);
}

TEST(Sab, SingleRowAttendsToItselfWithWeightOne) {
  ModelConfig cfg = testutil::tiny_config();
  ParameterStore ps = avm::init_parameters(cfg, 1);
  Rng rng(3);
  Mat x = testutil::random_mat(rng, 1, cfg.d);
  Tape t;
  ForwardCtx ctx(t, ps, cfg, false);
  std::vector<Mat> attn;
  avm::sab(t, t.leaf(x), avm::load_block(ctx, kBlock), cfg.h, &attn);
  for (const Mat& p : attn) EXPECT_DOUBLE_EQ(p(0, 0), 1.0);
}

TEST(Sab, MatchesDenseLoopOracle) {
  ModelConfig cfg = testutil::tiny_config();
  ParameterStore ps = avm::init_parameters(cfg, 5);
  Rng rng(4);
  Mat x = testutil::random_mat(rng, 3, cfg.d);
  Tape t;
  ForwardCtx ctx(t, ps, cfg, false);
  Var out = avm::sab(t, t.leaf(x), avm::load_block(ctx, kBlock), cfg.h);
  Mat expect = oracle::sab(x, ps, kBlock, cfg);
  EXPECT_LE(testutil::max_abs_diff(t.val(out), expect), 1e-6);
}

TEST(Sab, PermutationEquivariance) {
  ModelConfig cfg = testutil::tiny_config();
  ParameterStore ps = avm::init_parameters(cfg, 6);
  Rng rng(5);
  Mat x = testutil::random_mat(rng, 4, cfg.d);
  std::vector<int> perm = {2, 0, 3, 1};
  Mat xp(4, cfg.d);
  for (int i = 0; i < 4; ++i) xp.row(i) = x.row(perm[i]);
  Tape t;
  ForwardCtx ctx(t, ps, cfg, false);
  BlockVars blk = avm::load_block(ctx, kBlock);
  Mat y = t.val(avm::sab(t, t.leaf(x), blk, cfg.h));
  Mat yp = t.val(avm::sab(t, t.leaf(xp), blk, cfg.h));
  for (int i = 0; i < 4; ++i)
    EXPECT_LE((yp.row(i) - y.row(perm[i])).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Sab, RejectsNonFiniteInput) {
  ModelConfig cfg = testutil::tiny_config();
  ParameterStore ps = avm::init_parameters(cfg, 1);
  Mat x = Mat::Zero(2, cfg.d);
  x(1, 3) = std::numeric_limits<double>::quiet_NaN();
  Tape t;
  ForwardCtx ctx(t, ps, cfg, false);
  BlockVars blk = avm::load_block(ctx, kBlock);
  EXPECT_THROW(avm::sab(t, t.leaf(x), blk, cfg.h), avm::NumericError);
}

TEST(Cab, SingletonKeyValueGetsFullWeight) {
  ModelConfig cfg = testutil::tiny_config();
  ParameterStore ps = avm::init_parameters(cfg, 7);
  Rng rng(6);
  Mat q = testutil::random_mat(rng, 3, cfg.d);
  Mat kv = testutil::random_mat(rng, 1, cfg.d);
  Tape t;
  ForwardCtx ctx(t, ps, cfg, false);
  std::vector<Mat> attn;
  avm::cab(t, t.leaf(q), t.leaf(kv), avm::load_block(ctx, "pref.audio.cab"), cfg.h, &attn);
  for (const Mat& p : attn)
    for (int r = 0; r < p.rows(); ++r) EXPECT_DOUBLE_EQ(p(r, 0), 1.0);
}

TEST(Cab, IdenticalValueRowsMakeAttentionConstant) {
  ModelConfig cfg = testutil::tiny_config();
  ParameterStore ps = avm::init_parameters(cfg, 8);
  Rng rng(7);
  Mat q = testutil::random_mat(rng, 3, cfg.d);
  Mat row = testutil::random_mat(rng, 1, cfg.d);
  Mat kv(2, cfg.d);
  kv.row(0) = row.row(0);
  kv.row(1) = row.row(0);
  Tape t;
  ForwardCtx ctx(t, ps, cfg, false);
  BlockVars blk = avm::load_block(ctx, "pref.audio.cab");
  // pre-residual attention: mha directly
  Var out = avm::mha(t, t.layer_norm(t.leaf(q), blk.ln1g, blk.ln1b), t.leaf(kv), blk, cfg.h);
  Mat v = t.val(avm::linear(t, t.leaf(row), blk.wv, blk.bv));
  Mat expected = t.val(avm::linear(t, t.leaf(v), blk.wo, blk.bo));
  for (int i = 0; i < 3; ++i)
    EXPECT_LE((t.val(out).row(i) - expected.row(0)).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Cab, MatchesDenseLoopOracle) {
  ModelConfig cfg = testutil::tiny_config();
  ParameterStore ps = avm::init_parameters(cfg, 9);
  Rng rng(8);
  Mat q = testutil::random_mat(rng, 2, cfg.d);
  Mat kv = testutil::random_mat(rng, 3, cfg.d);
  Tape t;
  ForwardCtx ctx(t, ps, cfg, false);
  Var out = avm::cab(t, t.leaf(q), t.leaf(kv), avm::load_block(ctx, "pref.audio.cab"), cfg.h);
  Mat expect = oracle::cab(q, kv, ps, "pref.audio.cab", cfg);
  EXPECT_LE(testutil::max_abs_diff(t.val(out), expect), 1e-6);
}

TEST(Cab, InvariantToKeyValuePermutation) {
  ModelConfig cfg = testutil::tiny_config();
  ParameterStore ps = avm::init_parameters(cfg, 10);
  Rng rng(9);
  Mat q = testutil::random_mat(rng, 2, cfg.d);
  Mat kv = testutil::random_mat(rng, 4, cfg.d);
  Mat kvp(4, cfg.d);
  std::vector<int> perm = {3, 1, 0, 2};
  for (int i = 0; i < 4; ++i) kvp.row(i) = kv.row(perm[i]);
  Tape t;
  ForwardCtx ctx(t, ps, cfg, false);
  BlockVars blk = avm::load_block(ctx, "pref.audio.cab");
  Mat a = t.val(avm::cab(t, t.leaf(q), t.leaf(kv), blk, cfg.h));
  Mat b = t.val(avm::cab(t, t.leaf(q), t.leaf(kvp), blk, cfg.h));
  EXPECT_LE(testutil::max_abs_diff(a, b), 1e-6);
}

TEST(Cab, WidthMismatchIsShapeError) {
  ModelConfig cfg = testutil::tiny_config();
  ParameterStore ps = avm::init_parameters(cfg, 1);
  Tape t;
  ForwardCtx ctx(t, ps, cfg, false);
  BlockVars blk = avm::load_block(ctx, "pref.audio.cab");
  Mat q = Mat::Zero(2, cfg.d), kv = Mat::Zero(2, cfg.d + 1);
  EXPECT_THROW(avm::cab(t, t.leaf(q), t.leaf(kv), blk, cfg.h), avm::ShapeError);
}

TEST(Mlp, ZeroWeightsGiveZero) {
  ModelConfig cfg = testutil::tiny_config();
  ParameterStore ps = avm::init_parameters(cfg, 11);
  for (const char* n : {".w1", ".b1", ".w2", ".b2"})
    ps.value(std::string("pref.audio.mlp") + n).setZero();
  Rng rng(10);
  Mat x = testutil::random_mat(rng, 3, cfg.d);
  Tape t;
  ForwardCtx ctx(t, ps, cfg, false);
  Var out = avm::mlp(t, t.leaf(x), avm::load_mlp(ctx, "pref.audio.mlp"));
  EXPECT_EQ(t.val(out).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Mlp, IdentityConstruction) {
  // w1 = [I; 0] with a bias shift into the ReLU's linear region, w2 undoes it
  ModelConfig cfg = testutil::tiny_config();
  ParameterStore ps = avm::init_parameters(cfg, 12);
  const int d = cfg.d, f = cfg.ffn_dim();
  const double shift = 100.0;
  Mat w1 = Mat::Zero(d, f), w2 = Mat::Zero(f, d);
  for (int i = 0; i < d; ++i) w1(i, i) = 1.0;
  for (int i = 0; i < d; ++i) w2(i, i) = 1.0;
  ps.value("pref.audio.mlp.w1") = w1;
  ps.value("pref.audio.mlp.b1") = Mat::Constant(1, f, shift);
  ps.value("pref.audio.mlp.w2") = w2;
  ps.value("pref.audio.mlp.b2") = Mat::Constant(1, d, -shift);
  Rng rng(11);
  Mat x = testutil::random_mat(rng, 3, d);  // |x| << shift: linear region
  Tape t;
  ForwardCtx ctx(t, ps, cfg, false);
  Var out = avm::mlp(t, t.leaf(x), avm::load_mlp(ctx, "pref.audio.mlp"));
  EXPECT_LE(testutil::max_abs_diff(t.val(out), x), 1e-9);
}

TEST(Mlp, MatchesScalarLoopOracle) {
  ModelConfig cfg = testutil::tiny_config();
  cfg.d = 4;
  cfg.h = 2;
  ParameterStore ps = avm::init_parameters(cfg, 13);
  Rng rng(12);
  Mat x = testutil::random_mat(rng, 2, 4);
  Tape t;
  ForwardCtx ctx(t, ps, cfg, false);
  Var out = avm::mlp(t, t.leaf(x), avm::load_mlp(ctx, "pref.audio.mlp"));
  EXPECT_LE(testutil::max_abs_diff(t.val(out), oracle::mlp(x, ps, "pref.audio.mlp")), 1e-7);
}

TEST(Pools, SpecArithmetic) {
  Tape t;
  Mat x(2, 2);
  x << 1, 2, 3, 4;
  Mat s = t.val(avm::pool_sum(t, t.leaf(x)));
  EXPECT_EQ(s(0, 0), 4);
  EXPECT_EQ(s(0, 1), 6);
  Mat m = t.val(avm::reduce_max_seq(t, t.leaf(x)));
  EXPECT_EQ(m(0, 0), 3);
  EXPECT_EQ(m(0, 1), 4);
}

TEST(Kernels, AttentionRowsAreDistributions) {
  ModelConfig cfg = testutil::tiny_config();
  ParameterStore ps = avm::init_parameters(cfg, 14);
  Rng rng(13);
  for (int draw = 0; draw < 5; ++draw) {
    Mat x = testutil::random_mat(rng, 3 + draw % 2, cfg.d, 1.5);
    Tape t;
    ForwardCtx ctx(t, ps, cfg, false);
    std::vector<Mat> attn;
    avm::sab(t, t.leaf(x), avm::load_block(ctx, kBlock), cfg.h, &attn);
    for (const Mat& p : attn)
      for (int r = 0; r < p.rows(); ++r) {
        EXPECT_NEAR(p.row(r).sum(), 1.0, 1e-6);
        EXPECT_GE(p.row(r).minCoeff(), 0.0);
      }
  }
}

// Gradient checks over >= 5 random (input, params) draws at D=8, H=2, S<=4.
TEST(Kernels, GradientsMatchFiniteDifferences) {
  for (int draw = 0; draw < 5; ++draw) {
    ModelConfig cfg = testutil::tiny_config();
    ParameterStore ps = avm::init_parameters(cfg, 100 + draw);
    Rng rng(200 + draw);
    const int s = 2 + draw % 3;
    Mat x = testutil::random_mat(rng, s, cfg.d, 0.8);
    Mat kv = testutil::random_mat(rng, 3, cfg.d, 0.8);
    Mat seed_sab = testutil::random_mat(rng, s, cfg.d);
    Mat seed_mlp = testutil::random_mat(rng, s, cfg.d);

    auto weighted = [](const Mat& v, const Mat& w) {
      return (v.cwiseProduct(w)).sum();
    };

    // --- SAB: gradients w.r.t. input and a spread of parameter tensors
    auto sab_loss = [&]() {
      Tape t;
      ForwardCtx ctx(t, ps, cfg, false);
      return weighted(t.val(avm::sab(t, t.leaf(x), avm::load_block(ctx, kBlock), cfg.h)),
                      seed_sab);
    };
    {
      Mat xsink = Mat::Zero(s, cfg.d);
      ps.zero_grads();
      Tape t;
      ForwardCtx ctx(t, ps, cfg, true);
      Var xin = t.leaf(x, &xsink);
      Var out = avm::sab(t, xin, avm::load_block(ctx, kBlock), cfg.h);
      Var zero = t.leaf(Mat::Zero(1, 1));
      t.backward(zero, 1.0, {{out, seed_sab}});
      testutil::check_grad_against_fd(x, xsink, sab_loss, 1e-4, 4);
      for (const char* pname : {".wq", ".wv", ".wo", ".ln1.g", ".ffn.w1", ".ffn.b2"}) {
        std::string full = std::string(kBlock) + pname;
        testutil::check_grad_against_fd(ps.value(full), ps.grad(full), sab_loss, 1e-4, 3);
      }
    }

    // --- CAB
    auto cab_loss = [&]() {
      Tape t;
      ForwardCtx ctx(t, ps, cfg, false);
      return weighted(t.val(avm::cab(t, t.leaf(x), t.leaf(kv),
                                     avm::load_block(ctx, "pref.audio.cab"), cfg.h)),
                      seed_sab);
    };
    {
      Mat kvsink = Mat::Zero(3, cfg.d);
      ps.zero_grads();
      Tape t;
      ForwardCtx ctx(t, ps, cfg, true);
      Var kvin = t.leaf(kv, &kvsink);
      Var out = avm::cab(t, t.leaf(x), kvin, avm::load_block(ctx, "pref.audio.cab"), cfg.h);
      Var zero = t.leaf(Mat::Zero(1, 1));
      t.backward(zero, 1.0, {{out, seed_sab}});
      testutil::check_grad_against_fd(kv, kvsink, cab_loss, 1e-4, 4);
      for (const char* pname : {".wk", ".wq", ".ffn.w2"}) {
        std::string full = std::string("pref.audio.cab") + pname;
        testutil::check_grad_against_fd(ps.value(full), ps.grad(full), cab_loss, 1e-4, 3);
      }
    }

    // --- MLP
    auto mlp_loss = [&]() {
      Tape t;
      ForwardCtx ctx(t, ps, cfg, false);
      return weighted(t.val(avm::mlp(t, t.leaf(x), avm::load_mlp(ctx, "pref.audio.mlp"))),
                      seed_mlp);
    };
    {
      Mat xsink = Mat::Zero(s, cfg.d);
      ps.zero_grads();
      Tape t;
      ForwardCtx ctx(t, ps, cfg, true);
      Var xin = t.leaf(x, &xsink);
      Var out = avm::mlp(t, xin, avm::load_mlp(ctx, "pref.audio.mlp"));
      Var zero = t.leaf(Mat::Zero(1, 1));
      t.backward(zero, 1.0, {{out, seed_mlp}});
      testutil::check_grad_against_fd(x, xsink, mlp_loss, 1e-4, 4);
      testutil::check_grad_against_fd(ps.value("pref.audio.mlp.w1"),
                                      ps.grad("pref.audio.mlp.w1"), mlp_loss, 1e-4, 3);
    }
  }
}

TEST(Kernels, ZeroedBlockReducesToIdentity) {
  ModelConfig cfg = testutil::tiny_config();
  ParameterStore ps = avm::init_parameters(cfg, 15);
  zero_block(ps, kBlock, cfg.include_ffn);
  Rng rng(14);
  Mat x = testutil::random_mat(rng, 3, cfg.d);
  Tape t;
  ForwardCtx ctx(t, ps, cfg, false);
  Var out = avm::sab(t, t.leaf(x), avm::load_block(ctx, kBlock), cfg.h);
  EXPECT_LE(testutil::max_abs_diff(t.val(out), x), 1e-12);
}
