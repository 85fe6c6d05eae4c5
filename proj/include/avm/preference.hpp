#ifndef AVM_PREFERENCE_HPP
#define AVM_PREFERENCE_HPP

#include <string>
#include <vector>

#include "avm/kernels.hpp"
#include "avm/types.hpp"

namespace avm {

/// Global preference activation for one modality: the raw sequence is
/// self-enhanced and, in parallel, cross-attends onto the question words
/// (sequence as query, words as key/value); the sum passes an MLP. Audio and
/// visual use independent parameter sets.
inline Var activate(ForwardCtx& ctx, Var feats, Var word, Modality m,
                    TraceRecord* trace = nullptr) {
  Tape& t = ctx.tape;
  const std::string mod = to_string(m);
  BlockVars sabp = load_block(ctx, "pref." + mod + ".sab");
  BlockVars cabp = load_block(ctx, "pref." + mod + ".cab");

  std::vector<Mat> attn;
  std::vector<Mat>* attn_sink = (trace && trace->enabled) ? &attn : nullptr;

  Var self_branch = sab(t, feats, sabp, ctx.cfg.h);
  Var cross_branch = cab(t, feats, word, cabp, ctx.cfg.h, attn_sink);
  Var o_g = t.add(self_branch, cross_branch);
  Var out = mlp(t, o_g, load_mlp(ctx, "pref." + mod + ".mlp"));

  if (trace && trace->enabled) {
    Mat head_avg = Mat::Zero(t.val(feats).rows(), t.val(word).rows());
    for (const Mat& p : attn) head_avg += p;
    if (!attn.empty()) head_avg /= static_cast<double>(attn.size());
    if (m == Modality::audio) {
      trace->o_a_g = t.val(o_g);
      trace->word_attn_audio = head_avg;
    } else {
      trace->o_v_g = t.val(o_g);
      trace->word_attn_visual = head_avg;
    }
  }
  return out;
}

}  // namespace avm

#endif  // AVM_PREFERENCE_HPP
