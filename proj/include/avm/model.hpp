#ifndef AVM_MODEL_HPP
#define AVM_MODEL_HPP

#include <vector>

#include "avm/decoders.hpp"
#include "avm/focus.hpp"
#include "avm/fusion.hpp"
#include "avm/preference.hpp"
#include "avm/types.hpp"

namespace avm {

/// Architectural ablation switches. tdpp: temporal path feeding the fused
/// feature (off replaces it with the mean-pooled context); gpap: preference
/// path, its decoders and losses; avfc: the focus scan (off feeds the initial
/// templates straight into fusion). The contrastive loss is controlled by
/// lambda_c, not a switch.
struct PathSwitches {
  bool tdpp = true;
  bool gpap = true;
  bool avfc = true;
};

struct ProjectedInputs {
  Var f_a, f_v;  // T x D
  Var f_w;       // L x D
  Var f_s;       // 1 x D
};

/// Raw streams enter as constant leaves and pass their per-stream learned
/// linear projections into the shared width D.
inline ProjectedInputs project_inputs(ForwardCtx& ctx, const Sample& s) {
  s.validate(ctx.cfg);
  Tape& t = ctx.tape;
  ProjectedInputs in;
  Var audio = t.leaf(s.audio.data);
  Var visual = t.leaf(s.visual.data);
  Var word = t.leaf(s.question.word);
  Var sentence = t.leaf(s.question.sentence);
  in.f_a = linear(t, audio, ctx.param("proj.audio.w"), ctx.param("proj.audio.b"));
  in.f_v = linear(t, visual, ctx.param("proj.visual.w"), ctx.param("proj.visual.b"));
  in.f_w = linear(t, word, ctx.param("proj.word.w"), ctx.param("proj.word.b"));
  in.f_s = linear(t, sentence, ctx.param("proj.sentence.w"), ctx.param("proj.sentence.b"));
  return in;
}

/// All tape handles produced by one sample's forward pass.
struct SampleVars {
  ProjectedInputs in;
  Var context;
  Var focus_audio, focus_visual;
  Var fused;
  Var pref_audio, pref_visual;
  Var mean_pref_audio, mean_pref_visual;
  DecoderVars dec_mm, dec_audio, dec_visual;
  Var l_qa, l_vp, l_ap;
  bool has_preference = false;
};

/// focus_override, when given, bypasses the scan and injects fixed template
/// banks (used by the per-step trajectory probe).
inline SampleVars forward_sample(ForwardCtx& ctx, const Sample& s,
                                 const PathSwitches& sw = {},
                                 TraceRecord* trace = nullptr,
                                 const FocusFeatures* focus_override = nullptr) {
  Tape& t = ctx.tape;
  SampleVars out;
  out.in = project_inputs(ctx, s);
  out.context = build_context(ctx, out.in.f_a, out.in.f_v, out.in.f_w);

  if (sw.tdpp) {
    if (focus_override) {
      out.focus_audio = t.leaf(focus_override->audio);
      out.focus_visual = t.leaf(focus_override->visual);
    } else if (sw.avfc) {
      auto [fa, fv] = run_focus_capture(ctx, out.in.f_a, out.in.f_v, trace);
      out.focus_audio = fa;
      out.focus_visual = fv;
    } else {
      out.focus_audio = ctx.param("focus.audio.template");
      out.focus_visual = ctx.param("focus.visual.template");
    }
    out.fused = fuse(ctx, out.focus_audio, out.focus_visual, out.context, trace);
  } else {
    out.fused = t.mean_rows(out.context);
    if (trace && trace->enabled) trace->f_c = t.val(out.context);
  }

  if (sw.gpap) {
    out.pref_audio = activate(ctx, out.in.f_a, out.in.f_w, Modality::audio, trace);
    out.pref_visual = activate(ctx, out.in.f_v, out.in.f_w, Modality::visual, trace);
    out.mean_pref_audio = t.mean_rows(out.pref_audio);
    out.mean_pref_visual = t.mean_rows(out.pref_visual);
    out.has_preference = true;
  }

  out.dec_mm = decode_multimodal(ctx, out.fused, out.in.f_s);
  out.l_qa = loss_nll(t, out.dec_mm, s.answer);
  if (sw.gpap) {
    out.dec_audio = decode_preference(ctx, out.pref_audio, out.in.f_s, Modality::audio);
    out.dec_visual = decode_preference(ctx, out.pref_visual, out.in.f_s, Modality::visual);
    out.l_ap = loss_nll(t, out.dec_audio, s.answer);
    out.l_vp = loss_nll(t, out.dec_visual, s.answer);
  }
  return out;
}

struct BatchOutputs {
  LossBreakdown loss;
  std::vector<int> predicted;  // combined-distribution argmax per sample
  bool zero_norm_cosine = false;
};

/// Forward (and optionally backward) over one mini-batch on a single tape.
/// Per-sample prediction losses are averaged; the contrastive term couples
/// the batch. Gradients accumulate into the store when do_backward is set.
inline BatchOutputs run_batch(ParameterStore& ps, const ModelConfig& cfg,
                              const std::vector<const Sample*>& batch,
                              const PathSwitches& sw = {}, bool do_backward = true) {
  if (batch.empty()) throw ShapeError("run_batch: empty batch");
  const int n = static_cast<int>(batch.size());
  Tape tape;
  ForwardCtx ctx{tape, ps, cfg, do_backward};

  std::vector<Var> l_qa, l_vp, l_ap, fused, mean_a, mean_v;
  BatchOutputs out;
  out.predicted.reserve(n);

  InferenceConfig monitor_ic;
  monitor_ic.enable_ap = monitor_ic.enable_vp = sw.gpap;

  for (const Sample* s : batch) {
    SampleVars sv = forward_sample(ctx, *s, sw);
    l_qa.push_back(sv.l_qa);
    fused.push_back(sv.fused);
    if (sw.gpap) {
      l_vp.push_back(sv.l_vp);
      l_ap.push_back(sv.l_ap);
      mean_a.push_back(sv.mean_pref_audio);
      mean_v.push_back(sv.mean_pref_visual);
    }
    DecoderOutput mm = decoder_output(tape, sv.dec_mm);
    DecoderOutput da = sw.gpap ? decoder_output(tape, sv.dec_audio) : mm;
    DecoderOutput dv = sw.gpap ? decoder_output(tape, sv.dec_visual) : mm;
    out.predicted.push_back(infer(mm, da, dv, monitor_ic).answer);
  }

  auto mean_of = [&](const std::vector<Var>& xs) {
    Var acc = xs[0];
    for (std::size_t i = 1; i < xs.size(); ++i) acc = tape.add(acc, xs[i]);
    return tape.scale(acc, 1.0 / static_cast<double>(xs.size()));
  };

  Var m_qa = mean_of(l_qa);
  Var total = tape.scale(m_qa, cfg.lambda_qa);
  Var m_vp, m_ap, m_c;
  if (sw.gpap) {
    m_vp = mean_of(l_vp);
    m_ap = mean_of(l_ap);
    m_c = loss_contrastive(tape, fused, mean_a, mean_v, cfg.tau, cfg.contrastive_literal);
    total = tape.add(total, tape.scale(m_vp, cfg.lambda_vp));
    total = tape.add(total, tape.scale(m_ap, cfg.lambda_ap));
    total = tape.add(total, tape.scale(m_c, cfg.lambda_c));
  }

  out.loss = loss_total(tape.val(m_qa)(0, 0), sw.gpap ? tape.val(m_vp)(0, 0) : 0.0,
                        sw.gpap ? tape.val(m_ap)(0, 0) : 0.0,
                        sw.gpap ? tape.val(m_c)(0, 0) : 0.0, cfg);
  out.zero_norm_cosine = tape.zero_norm_cosine_seen();

  if (do_backward) tape.backward(total);
  return out;
}

struct SampleEval {
  DecoderOutput mm, audio, visual;
  InferenceResult result;
  bool has_preference = false;
};

/// Inference for one sample on a throwaway tape (no gradient sinks). With the
/// preference path ablated the auxiliary decoders are forced off.
inline SampleEval eval_sample(ParameterStore& ps, const ModelConfig& cfg, const Sample& s,
                              const InferenceConfig& ic = {}, const PathSwitches& sw = {},
                              TraceRecord* trace = nullptr,
                              const FocusFeatures* focus_override = nullptr) {
  Tape tape;
  ForwardCtx ctx{tape, ps, cfg, false};
  SampleVars sv = forward_sample(ctx, s, sw, trace, focus_override);
  SampleEval ev;
  ev.mm = decoder_output(tape, sv.dec_mm);
  ev.has_preference = sv.has_preference;
  InferenceConfig effective = ic;
  if (!sv.has_preference) {
    effective.enable_ap = false;
    effective.enable_vp = false;
  }
  ev.audio = sv.has_preference ? decoder_output(tape, sv.dec_audio) : ev.mm;
  ev.visual = sv.has_preference ? decoder_output(tape, sv.dec_visual) : ev.mm;
  ev.result = infer(ev.mm, ev.audio, ev.visual, effective);
  return ev;
}

}  // namespace avm

#endif  // AVM_MODEL_HPP
