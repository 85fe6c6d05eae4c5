#ifndef AVM_KERNELS_HPP
#define AVM_KERNELS_HPP

#include <string>
#include <unordered_map>
#include <vector>

#include "avm/config.hpp"
#include "avm/params.hpp"
#include "avm/tape.hpp"

namespace avm {

/// Shared state for one forward build: parameters enter the tape once and
/// their tape gradients drain into the store's accumulators on backward.
struct ForwardCtx {
  Tape& tape;
  ParameterStore& ps;
  const ModelConfig& cfg;
  bool with_grads = true;

  ForwardCtx(Tape& t, ParameterStore& p, const ModelConfig& c, bool grads = true)
      : tape(t), ps(p), cfg(c), with_grads(grads) {}

  Var param(const std::string& name) {
    auto it = cache_.find(name);
    if (it != cache_.end()) return Var{it->second};
    Var v = tape.leaf(ps.value(name), with_grads ? &ps.grad(name) : nullptr);
    cache_[name] = v.i;
    return v;
  }

 private:
  std::unordered_map<std::string, int> cache_;
};

/// Tape handles for one attention block: q/k/v/out projections, two
/// normalizations, and the position-wise feed-forward (expansion 4).
struct BlockVars {
  Var wq, bq, wk, wv, bv, wo, bo;
  Var ln1g, ln1b;
  bool has_ffn = false;
  Var ln2g, ln2b, fw1, fb1, fw2, fb2;
};

inline BlockVars load_block(ForwardCtx& ctx, const std::string& prefix) {
  BlockVars b;
  b.wq = ctx.param(prefix + ".wq");
  b.bq = ctx.param(prefix + ".bq");
  b.wk = ctx.param(prefix + ".wk");
  b.wv = ctx.param(prefix + ".wv");
  b.bv = ctx.param(prefix + ".bv");
  b.wo = ctx.param(prefix + ".wo");
  b.bo = ctx.param(prefix + ".bo");
  b.ln1g = ctx.param(prefix + ".ln1.g");
  b.ln1b = ctx.param(prefix + ".ln1.b");
  b.has_ffn = ctx.cfg.include_ffn;
  if (b.has_ffn) {
    b.ln2g = ctx.param(prefix + ".ln2.g");
    b.ln2b = ctx.param(prefix + ".ln2.b");
    b.fw1 = ctx.param(prefix + ".ffn.w1");
    b.fb1 = ctx.param(prefix + ".ffn.b1");
    b.fw2 = ctx.param(prefix + ".ffn.w2");
    b.fb2 = ctx.param(prefix + ".ffn.b2");
  }
  return b;
}

struct MlpVars {
  Var w1, b1, w2, b2;
};

inline MlpVars load_mlp(ForwardCtx& ctx, const std::string& prefix) {
  return MlpVars{ctx.param(prefix + ".w1"), ctx.param(prefix + ".b1"),
                 ctx.param(prefix + ".w2"), ctx.param(prefix + ".b2")};
}

inline Var linear(Tape& t, Var x, Var w, Var b) {
  return t.add_brow(t.matmul(x, w), b);
}

/// Multi-head scaled-dot-product attention core. Query stream from q_in,
/// key/value from kv_in, projections per head, concatenated and projected
/// out. Per-head probability matrices are copied to attn_out when requested.
inline Var mha(Tape& t, Var q_in, Var kv_in, const BlockVars& p, int heads,
               std::vector<Mat>* attn_out = nullptr) {
  Var q = linear(t, q_in, p.wq, p.bq);
  Var k = t.matmul(kv_in, p.wk);
  Var v = linear(t, kv_in, p.wv, p.bv);
  const int d = static_cast<int>(t.val(q).cols());
  if (d % heads != 0) throw ShapeError("mha: D not divisible by head count");
  const int hd = d / heads;
  std::vector<Var> outs;
  outs.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    Var qh = t.slice_cols(q, h * hd, hd);
    Var kh = t.slice_cols(k, h * hd, hd);
    Var vh = t.slice_cols(v, h * hd, hd);
    Var logits = t.scale(t.matmul_nt(qh, kh), 1.0 / std::sqrt(double(hd)));
    Var probs = t.softmax_rows(logits);
    if (attn_out) attn_out->push_back(t.val(probs));
    outs.push_back(t.matmul(probs, vh));
  }
  Var merged = heads == 1 ? outs[0] : t.concat_cols(outs);
  return linear(t, merged, p.wo, p.bo);
}

inline Var ffn(Tape& t, Var x, const BlockVars& p) {
  Var h = t.gelu(linear(t, x, p.fw1, p.fb1));
  return linear(t, h, p.fw2, p.fb2);
}

/// Self-attention block: pre-normalization attention with residual, then
/// pre-normalization feed-forward with residual.
inline Var sab(Tape& t, Var x, const BlockVars& p, int heads,
               std::vector<Mat>* attn_out = nullptr) {
  require_finite(t.val(x), "sab input");
  Var h = t.layer_norm(x, p.ln1g, p.ln1b);
  Var y = t.add(x, mha(t, h, h, p, heads, attn_out));
  if (!p.has_ffn) return y;
  Var z = t.layer_norm(y, p.ln2g, p.ln2b);
  return t.add(y, ffn(t, z, p));
}

/// Cross-attention block: first argument is the query stream (normalized and
/// carrying the residual), second supplies raw keys and values.
inline Var cab(Tape& t, Var query, Var kv, const BlockVars& p, int heads,
               std::vector<Mat>* attn_out = nullptr) {
  require_finite(t.val(query), "cab query");
  require_finite(t.val(kv), "cab key/value");
  if (t.val(query).cols() != t.val(kv).cols())
    throw ShapeError("cab: query and key/value widths differ");
  Var h = t.layer_norm(query, p.ln1g, p.ln1b);
  Var y = t.add(query, mha(t, h, kv, p, heads, attn_out));
  if (!p.has_ffn) return y;
  Var z = t.layer_norm(y, p.ln2g, p.ln2b);
  return t.add(y, ffn(t, z, p));
}

/// Two linear layers with a ReLU between; the preference-path perceptron.
inline Var mlp(Tape& t, Var x, const MlpVars& p) {
  require_finite(t.val(x), "mlp input");
  return linear(t, t.relu(linear(t, x, p.w1, p.b1)), p.w2, p.b2);
}

/// Columnwise sum over the sequence axis, S x D -> 1 x D.
inline Var pool_sum(Tape& t, Var x) { return t.sum_rows(x); }

/// Columnwise maximum over the sequence axis, ties to the lowest row index.
inline Var reduce_max_seq(Tape& t, Var x) { return t.max_rows(x); }

}  // namespace avm

#endif  // AVM_KERNELS_HPP
