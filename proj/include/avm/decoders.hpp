#ifndef AVM_DECODERS_HPP
#define AVM_DECODERS_HPP

#include <string>
#include <vector>

#include "avm/kernels.hpp"
#include "avm/types.hpp"

namespace avm {

/// Logits plus their softmax, kept as tape handles so losses stay
/// differentiable.
struct DecoderVars {
  Var logits;  // 1 x C
  Var probs;   // 1 x C
};

struct DecoderOutput {
  Eigen::RowVectorXd logits;
  AnswerDistribution probs;
};

inline DecoderOutput decoder_output(const Tape& t, const DecoderVars& d) {
  DecoderOutput out;
  out.logits = t.val(d.logits).row(0);
  out.probs.probs = t.val(d.probs).row(0);
  return out;
}

/// Multimodal decoder θ_l: [fused; sentence] as a two-token sequence, two
/// transformer blocks, mean pool, linear D -> C, softmax.
inline DecoderVars decode_multimodal(ForwardCtx& ctx, Var fused, Var sentence) {
  Tape& t = ctx.tape;
  Var tokens = t.concat_rows({fused, sentence});
  Var x = sab(t, tokens, load_block(ctx, "dec.mm.block1"), ctx.cfg.h);
  x = sab(t, x, load_block(ctx, "dec.mm.block2"), ctx.cfg.h);
  Var pooled = t.layer_norm(t.mean_rows(x), ctx.param("dec.mm.ln.g"), ctx.param("dec.mm.ln.b"));
  Var logits = linear(t, pooled, ctx.param("dec.mm.out.w"), ctx.param("dec.mm.out.b"));
  return {logits, t.softmax_rows(logits)};
}

/// Preference decoder θ_g (separate parameters per modality): the sentence
/// token is prepended to the T preference rows, one transformer block, mean
/// pool, linear D -> C, softmax.
inline DecoderVars decode_preference(ForwardCtx& ctx, Var pref, Var sentence, Modality m) {
  Tape& t = ctx.tape;
  const std::string prefix = std::string("dec.") + to_string(m);
  Var tokens = t.concat_rows({sentence, pref});
  Var x = sab(t, tokens, load_block(ctx, prefix + ".block"), ctx.cfg.h);
  Var pooled = t.layer_norm(t.mean_rows(x), ctx.param(prefix + ".ln.g"),
                            ctx.param(prefix + ".ln.b"));
  Var logits = linear(t, pooled, ctx.param(prefix + ".out.w"), ctx.param(prefix + ".out.b"));
  return {logits, t.softmax_rows(logits)};
}

/// Negative log-likelihood of the true answer; probabilities are clamped at
/// 1e-12 before the log (zero gradient in the clamp region).
inline Var loss_nll(Tape& t, const DecoderVars& dec, int y) {
  return t.pick_nll(dec.probs, y);
}

/// Batch contrastive loss between the fused features and the sequence-mean
/// preference features. For each sample the positive score sums both
/// modalities of its own pair; negatives compare the sample's fused feature
/// against every other sample's preference features (the cross-pair reading).
/// literal=true switches the denominator to the other samples' own positive
/// scores instead.
inline Var loss_contrastive(Tape& t, const std::vector<Var>& fused,
                            const std::vector<Var>& mean_pref_audio,
                            const std::vector<Var>& mean_pref_visual, double tau,
                            bool literal = false) {
  const int n = static_cast<int>(fused.size());
  if (n < 1) throw ShapeError("loss_contrastive: empty batch");
  if (tau <= 0) throw ConfigError("loss_contrastive: tau must be > 0");
  if (mean_pref_audio.size() != fused.size() || mean_pref_visual.size() != fused.size())
    throw ShapeError("loss_contrastive: batch sizes differ");

  const double inv_tau = 1.0 / tau;
  auto pair_score = [&](int i, int k) {
    Var ev = t.exp(t.scale(t.cosine(fused[i], mean_pref_visual[k]), inv_tau));
    Var ea = t.exp(t.scale(t.cosine(fused[i], mean_pref_audio[k]), inv_tau));
    return t.add(ev, ea);
  };

  std::vector<Var> positive(n);
  for (int i = 0; i < n; ++i) positive[i] = pair_score(i, i);

  Var acc;
  for (int i = 0; i < n; ++i) {
    Var denom = positive[i];
    for (int k = 0; k < n; ++k) {
      if (k == i) continue;
      denom = t.add(denom, literal ? positive[k] : pair_score(i, k));
    }
    // -log(p/denom) = log(denom) - log(p); exactly 0 when there are no negatives
    Var term = t.add(t.log(denom), t.scale(t.log(positive[i]), -1.0));
    acc = acc.valid() ? t.add(acc, term) : term;
  }
  return t.scale(acc, 1.0 / n);
}

/// Weighted total of the four objectives.
inline LossBreakdown loss_total(double l_qa, double l_vp, double l_ap, double l_c,
                                const ModelConfig& cfg) {
  LossBreakdown b;
  b.l_qa = l_qa;
  b.l_vp = l_vp;
  b.l_ap = l_ap;
  b.l_c = l_c;
  b.total = cfg.lambda_qa * l_qa + cfg.lambda_vp * l_vp + cfg.lambda_ap * l_ap +
            cfg.lambda_c * l_c;
  return b;
}

enum class CombineMode { add, mul, wadd };

inline const char* to_string(CombineMode m) {
  switch (m) {
    case CombineMode::add: return "add";
    case CombineMode::mul: return "mul";
    default: return "wadd";
  }
}

inline CombineMode combine_from_string(const std::string& s) {
  if (s == "add") return CombineMode::add;
  if (s == "mul") return CombineMode::mul;
  if (s == "wadd") return CombineMode::wadd;
  throw ConfigError("unknown combine mode: " + s);
}

/// Inference-time decoder switches and distribution fusion mode.
struct InferenceConfig {
  bool enable_qa = true;
  bool enable_ap = true;
  bool enable_vp = true;
  CombineMode combine_mode = CombineMode::add;

  void validate() const {
    if (!enable_qa && !enable_ap && !enable_vp)
      throw ConfigError("inference: all decoders disabled");
  }
};

struct InferenceResult {
  int answer = 0;
  AnswerDistribution combined;
};

/// Combines the enabled probability vectors (ADD: sum; MUL: elementwise
/// product; W-ADD: weights proportional to each vector's maximum probability)
/// and takes the argmax, ties to the lowest index. The reported combined
/// distribution is normalized.
inline InferenceResult infer(const DecoderOutput& mm, const DecoderOutput& audio,
                             const DecoderOutput& visual, const InferenceConfig& ic) {
  ic.validate();
  std::vector<const Eigen::RowVectorXd*> enabled;
  if (ic.enable_qa) enabled.push_back(&mm.probs.probs);
  if (ic.enable_ap) enabled.push_back(&audio.probs.probs);
  if (ic.enable_vp) enabled.push_back(&visual.probs.probs);

  const int c = static_cast<int>(enabled.front()->size());
  for (const auto* p : enabled)
    if (p->size() != c) throw ShapeError("infer: distribution lengths differ");

  Eigen::RowVectorXd combined;
  switch (ic.combine_mode) {
    case CombineMode::add: {
      combined = Eigen::RowVectorXd::Zero(c);
      for (const auto* p : enabled) combined += *p;
      break;
    }
    case CombineMode::mul: {
      combined = Eigen::RowVectorXd::Ones(c);
      for (const auto* p : enabled) combined = combined.cwiseProduct(*p);
      break;
    }
    case CombineMode::wadd: {
      std::vector<double> w;
      double wsum = 0;
      for (const auto* p : enabled) {
        w.push_back(p->maxCoeff());
        wsum += w.back();
      }
      combined = Eigen::RowVectorXd::Zero(c);
      for (std::size_t j = 0; j < enabled.size(); ++j) {
        double wj = wsum > 0 ? w[j] / wsum : 1.0 / enabled.size();
        combined += wj * *enabled[j];
      }
      break;
    }
  }

  InferenceResult r;
  r.answer = 0;
  for (int i = 1; i < c; ++i)
    if (combined(i) > combined(r.answer)) r.answer = i;
  double s = combined.sum();
  r.combined.probs = s > 0 ? Eigen::RowVectorXd(combined / s)
                           : Eigen::RowVectorXd::Constant(c, 1.0 / c);
  return r;
}

}  // namespace avm

#endif  // AVM_DECODERS_HPP
