#ifndef AVM_FOCUS_HPP
#define AVM_FOCUS_HPP

#include <stdexcept>
#include <string>
#include <utility>

#include "avm/kernels.hpp"
#include "avm/types.hpp"

namespace avm {

/// One focus-sampling update at time step k. feat_k is the 1xD segment
/// feature, repeated to the template length before the residual addition;
/// the repeated feature also serves as cross-attention key/value, the
/// twice-enhanced template as query.
inline Var focus_step(ForwardCtx& ctx, Var feat_k, Var template_prev, int k, int t,
                      Modality m, TraceRecord* trace = nullptr) {
  if (k < 0 || k >= t) throw std::out_of_range("focus_step: step index outside [0, T)");
  Tape& tape = ctx.tape;
  const ModelConfig& cfg = ctx.cfg;
  if (!cfg.bias_shared && k >= cfg.t_max)
    throw ConfigError("focus_step: step exceeds T_max with unshared biases");
  if (!cfg.attn_shared && k >= cfg.t_max)
    throw ConfigError("focus_step: step exceeds T_max with unshared attention blocks");

  const int rows = static_cast<int>(tape.val(template_prev).rows());
  Var repeated = tape.repeat_row(feat_k, rows);
  Var tp1 = tape.add(repeated, template_prev);

  BlockVars sab1 = load_block(ctx, focus_block_prefix(cfg, m, k, "sab1"));
  BlockVars sab2 = load_block(ctx, focus_block_prefix(cfg, m, k, "sab2"));
  BlockVars cabp = load_block(ctx, focus_block_prefix(cfg, m, k, "cab"));
  Var bias_inner = ctx.param(bias_name(cfg, m, k, "inner"));
  Var bias_outer = ctx.param(bias_name(cfg, m, k, "outer"));

  Var inner = tape.add(sab(tape, tp1, sab1, cfg.h), bias_inner);
  Var tp2 = tape.add(sab(tape, inner, sab2, cfg.h), bias_outer);
  Var cls = cab(tape, tp2, repeated, cabp, cfg.h);

  if (trace && trace->enabled) {
    auto& tp1v = m == Modality::audio ? trace->a_tp1 : trace->v_tp1;
    auto& tp2v = m == Modality::audio ? trace->a_tp2 : trace->v_tp2;
    tp1v.push_back(tape.val(tp1));
    tp2v.push_back(tape.val(tp2));
  }
  return cls;
}

/// Left fold of focus_step over k = 0..T-1, starting from the learnable
/// initial template. Returns the final template (the focus feature).
inline Var focus_scan(ForwardCtx& ctx, Var feats, Var initial_template, Modality m,
                      TraceRecord* trace = nullptr) {
  Tape& tape = ctx.tape;
  const int t = static_cast<int>(tape.val(feats).rows());
  if (t < 1) throw ShapeError("focus_scan: empty feature sequence");
  if (t > ctx.cfg.t_max && (!ctx.cfg.bias_shared || !ctx.cfg.attn_shared))
    throw ConfigError("focus_scan: T exceeds T_max with unshared step parameters");

  Var cur = initial_template;
  for (int k = 0; k < t; ++k) {
    Var feat_k = tape.slice_rows(feats, k, 1);
    cur = focus_step(ctx, feat_k, cur, k, t, m, trace);
    if (trace && trace->enabled) {
      auto& snaps = m == Modality::audio ? trace->audio_templates : trace->visual_templates;
      snaps.push_back(tape.val(cur));
    }
  }
  return cur;
}

/// Scans both modalities with their own templates, biases and attention
/// parameters. Inputs are the projected T x D sequences.
inline std::pair<Var, Var> run_focus_capture(ForwardCtx& ctx, Var audio_feats,
                                             Var visual_feats,
                                             TraceRecord* trace = nullptr) {
  Var a0 = ctx.param("focus.audio.template");
  Var v0 = ctx.param("focus.visual.template");
  Var fa = focus_scan(ctx, audio_feats, a0, Modality::audio, trace);
  Var fv = focus_scan(ctx, visual_feats, v0, Modality::visual, trace);
  return {fa, fv};
}

}  // namespace avm

#endif  // AVM_FOCUS_HPP
