// Whole-pipeline checks: the tape forward against the scalar-loop equation
// oracle, the end-to-end gradient suite, trace capture and path switches.

#include <gtest/gtest.h>

#include "avm/gradcheck.hpp"
#include "avm/model.hpp"
#include "oracle.hpp"
#include "test_util.hpp"

using avm::ForwardCtx;
using avm::Mat;
using avm::ModelConfig;
using avm::ParameterStore;
using avm::Rng;
using avm::Tape;

TEST(Model, FullForwardMatchesEquationOracle) {
  ModelConfig cfg = testutil::tiny_config();
  ParameterStore ps = avm::init_parameters(cfg, 21);
  Rng rng(21);
  avm::Sample s = testutil::random_sample(cfg, rng, 3, 3);

  Tape t;
  ForwardCtx ctx(t, ps, cfg, false);
  avm::SampleVars sv = avm::forward_sample(ctx, s);

  oracle::FullForward expect = oracle::full_forward(ps, cfg, s);
  EXPECT_LE(testutil::max_abs_diff(t.val(sv.context), expect.context), 1e-6);
  EXPECT_LE(testutil::max_abs_diff(t.val(sv.focus_audio), expect.focus_a), 1e-6);
  EXPECT_LE(testutil::max_abs_diff(t.val(sv.focus_visual), expect.focus_v), 1e-6);
  EXPECT_LE(testutil::max_abs_diff(t.val(sv.fused), expect.fused), 1e-6);
  EXPECT_LE(testutil::max_abs_diff(t.val(sv.pref_audio), expect.pref_a), 1e-6);
  EXPECT_LE(testutil::max_abs_diff(t.val(sv.pref_visual), expect.pref_v), 1e-6);
  EXPECT_LE((t.val(sv.dec_mm.probs).row(0) - expect.probs_mm).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LE((t.val(sv.dec_audio.probs).row(0) - expect.probs_a).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LE((t.val(sv.dec_visual.probs).row(0) - expect.probs_v).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Model, EndToEndGradientsPassForEveryGroup) {
  ModelConfig cfg = testutil::tiny_config();  // T=4 D=8 M=2 L=3 C=5 H=2
  avm::GradCheckReport report = avm::run_gradcheck(cfg, 2, 2);
  EXPECT_TRUE(report.dead_tensors.empty())
      << "dead: " << (report.dead_tensors.empty() ? "" : report.dead_tensors.front());
  ASSERT_EQ(report.groups.size(), 7u);  // all parameter groups exercised
  for (const auto& g : report.groups)
    EXPECT_LE(g.max_rel_err, 1e-4) << g.name << " worst " << g.worst_tensor;
}

TEST(Model, EvalSampleIsDeterministic) {
  ModelConfig cfg = testutil::tiny_config();
  ParameterStore ps = avm::init_parameters(cfg, 22);
  Rng rng(22);
  avm::Sample s = testutil::random_sample(cfg, rng, 4, 3);
  avm::SampleEval a = avm::eval_sample(ps, cfg, s);
  avm::SampleEval b = avm::eval_sample(ps, cfg, s);
  EXPECT_EQ((a.result.combined.probs - b.result.combined.probs).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(a.result.answer, b.result.answer);
}

TEST(Model, WithoutTemporalPathFusedIsMeanContext) {
  ModelConfig cfg = testutil::tiny_config();
  ParameterStore ps = avm::init_parameters(cfg, 23);
  Rng rng(23);
  avm::Sample s = testutil::random_sample(cfg, rng, 3, 3);
  Tape t;
  ForwardCtx ctx(t, ps, cfg, false);
  avm::PathSwitches sw;
  sw.tdpp = false;
  avm::SampleVars sv = avm::forward_sample(ctx, s, sw);
  oracle::FullForward expect = oracle::full_forward(ps, cfg, s);
  EXPECT_LE(testutil::max_abs_diff(t.val(sv.fused), oracle::mean_rows(expect.context)), 1e-6);
}

TEST(Model, WithoutFocusScanTemplatesFeedFusion) {
  ModelConfig cfg = testutil::tiny_config();
  ParameterStore ps = avm::init_parameters(cfg, 24);
  Rng rng(24);
  avm::Sample s = testutil::random_sample(cfg, rng, 3, 3);
  Tape t;
  ForwardCtx ctx(t, ps, cfg, false);
  avm::PathSwitches sw;
  sw.avfc = false;
  avm::SampleVars sv = avm::forward_sample(ctx, s, sw);
  oracle::FullForward expect = oracle::full_forward(ps, cfg, s);
  Mat want = oracle::fuse(ps, cfg, ps.value("focus.audio.template"),
                          ps.value("focus.visual.template"), expect.context);
  EXPECT_LE(testutil::max_abs_diff(t.val(sv.fused), want), 1e-6);
}

TEST(Model, WithoutPreferencePathAuxDecodersAbsent) {
  ModelConfig cfg = testutil::tiny_config();
  ParameterStore ps = avm::init_parameters(cfg, 25);
  Rng rng(25);
  avm::Sample s = testutil::random_sample(cfg, rng, 3, 3);
  avm::PathSwitches sw;
  sw.gpap = false;
  avm::SampleEval ev = avm::eval_sample(ps, cfg, s, {}, sw);
  EXPECT_FALSE(ev.has_preference);
  // combined answer equals the multimodal decoder's argmax
  int mm_arg = 0;
  for (int i = 1; i < ev.mm.probs.probs.size(); ++i)
    if (ev.mm.probs.probs(i) > ev.mm.probs.probs(mm_arg)) mm_arg = i;
  EXPECT_EQ(ev.result.answer, mm_arg);
}

TEST(Model, BatchLossBreakdownIsConsistent) {
  ModelConfig cfg = testutil::tiny_config();
  ParameterStore ps = avm::init_parameters(cfg, 26);
  Rng rng(26);
  avm::Sample s1 = testutil::random_sample(cfg, rng, 3, 3);
  avm::Sample s2 = testutil::random_sample(cfg, rng, 4, 2);
  std::vector<const avm::Sample*> batch = {&s1, &s2};
  ps.zero_grads();
  avm::BatchOutputs out = avm::run_batch(ps, cfg, batch, {}, true);
  double recomputed = cfg.lambda_qa * out.loss.l_qa + cfg.lambda_vp * out.loss.l_vp +
                      cfg.lambda_ap * out.loss.l_ap + cfg.lambda_c * out.loss.l_c;
  EXPECT_NEAR(out.loss.total, recomputed, 1e-12);
  EXPECT_EQ(out.predicted.size(), 2u);
  // gradients landed
  EXPECT_GT(ps.grad("proj.audio.w").cwiseAbs().maxCoeff(), 0.0);
}

TEST(Model, TraceCapturesIntermediates) {
  ModelConfig cfg = testutil::tiny_config();
  ParameterStore ps = avm::init_parameters(cfg, 27);
  Rng rng(27);
  avm::Sample s = testutil::random_sample(cfg, rng, 4, 3);
  avm::TraceRecord trace;
  trace.enabled = true;
  avm::eval_sample(ps, cfg, s, {}, {}, &trace);
  EXPECT_EQ(trace.audio_templates.size(), 4u);
  EXPECT_EQ(trace.f_c.rows(), 2 * 4 + 3);
  EXPECT_EQ(trace.o_a_l.rows(), 1);
  EXPECT_EQ(trace.o_v_g.rows(), 4);
  EXPECT_EQ(trace.word_attn_audio.rows(), 4);
  EXPECT_EQ(trace.word_attn_audio.cols(), 3);
}

TEST(Model, MismatchedSampleWidthIsShapeError) {
  ModelConfig cfg = testutil::tiny_config();
  ParameterStore ps = avm::init_parameters(cfg, 28);
  Rng rng(28);
  avm::Sample s = testutil::random_sample(cfg, rng, 3, 3);
  s.audio.data = Mat::Zero(3, cfg.d + 2);
  EXPECT_THROW(avm::eval_sample(ps, cfg, s), avm::ShapeError);
}
