#ifndef AVM_FUSION_HPP
#define AVM_FUSION_HPP

#include <vector>

#include "avm/kernels.hpp"
#include "avm/types.hpp"

namespace avm {

/// Concatenates [audio; visual; word] along the sequence axis (order per
/// config) and self-attends once: the shared multimodal context F_c.
inline Var build_context(ForwardCtx& ctx, Var audio, Var visual, Var word) {
  Tape& t = ctx.tape;
  if (t.val(audio).cols() != t.val(visual).cols() ||
      t.val(audio).cols() != t.val(word).cols())
    throw ShapeError("build_context: stream widths differ");
  std::vector<Var> parts;
  if (ctx.cfg.context_order == ContextOrder::audio_first)
    parts = {audio, visual, word};
  else
    parts = {visual, audio, word};
  Var cat = t.concat_rows(parts);
  BlockVars blk = load_block(ctx, "fusion.context");
  return sab(t, cat, blk, ctx.cfg.h);
}

/// Question-guided key fusion. Each focus bank is linearly projected,
/// sum-pooled over its M rows, broadcast onto the context, self-attention
/// enhanced and sum-pooled to a single row; [O_a; O_v; F_c] then passes a
/// linear map and a sequence-axis max down to the fused 1 x D feature.
inline Var fuse(ForwardCtx& ctx, Var focus_audio, Var focus_visual, Var context,
                TraceRecord* trace = nullptr) {
  Tape& t = ctx.tape;
  const int s_c = static_cast<int>(t.val(context).rows());
  if (s_c < 1) throw ShapeError("fuse: empty context");

  auto branch = [&](Var focus, const char* proj, const char* enhance) {
    Var w = ctx.param(std::string("fusion.proj.") + proj + ".w");
    Var b = ctx.param(std::string("fusion.proj.") + proj + ".b");
    Var projected = linear(t, focus, w, b);          // M x D
    Var pooled = t.sum_rows(projected);              // 1 x D
    Var mixed = t.add_brow(context, pooled);         // S_c x D
    BlockVars blk = load_block(ctx, enhance);
    return pool_sum(t, sab(t, mixed, blk, ctx.cfg.h));  // 1 x D
  };

  Var o_a = branch(focus_audio, "audio", "fusion.enhance.audio");
  Var o_v = branch(focus_visual, "visual", "fusion.enhance.visual");

  Var cat = t.concat_rows({o_a, o_v, context});  // (S_c + 2) x D
  Var w = ctx.param("fusion.out.w");
  Var b = ctx.param("fusion.out.b");
  Var fused = reduce_max_seq(t, linear(t, cat, w, b));

  if (trace && trace->enabled) {
    trace->o_a_l = t.val(o_a);
    trace->o_v_l = t.val(o_v);
    trace->f_c = t.val(context);
  }
  return fused;
}

}  // namespace avm

#endif  // AVM_FUSION_HPP
