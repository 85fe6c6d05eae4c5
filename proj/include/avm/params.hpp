#ifndef AVM_PARAMS_HPP
#define AVM_PARAMS_HPP

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "avm/common.hpp"
#include "avm/config.hpp"
#include "avm/types.hpp"

namespace avm {

// Canonical parameter-group labels. Every tensor belongs to exactly one.
namespace groups {
inline constexpr const char* kProjection = "projection";
inline constexpr const char* kFocus = "focus";
inline constexpr const char* kFusion = "fusion";
inline constexpr const char* kPreference = "preference";
inline constexpr const char* kDecoderMM = "decoder_multimodal";
inline constexpr const char* kDecoderAudio = "decoder_audio";
inline constexpr const char* kDecoderVisual = "decoder_visual";
}  // namespace groups

/// Named trainable tensors with matching gradient accumulators. Insertion
/// order is fixed by the architecture walk, which keeps initialization and
/// optimizer traversal deterministic.
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    std::string group;
    Mat value;
    Mat grad;
  };

  int add(const std::string& name, const std::string& group, Mat value) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    Entry e;
    e.name = name;
    e.group = group;
    e.grad = Mat::Zero(value.rows(), value.cols());
    e.value = std::move(value);
    entries_.push_back(std::move(e));
    int id = static_cast<int>(entries_.size()) - 1;
    index_[name] = id;
    return id;
  }

  bool has(const std::string& name) const { return index_.count(name) > 0; }

  Mat& value(const std::string& name) { return entries_[at(name)].value; }
  const Mat& value(const std::string& name) const { return entries_[at(name)].value; }
  Mat& grad(const std::string& name) { return entries_[at(name)].grad; }
  const Mat& grad(const std::string& name) const { return entries_[at(name)].grad; }
  const std::string& group_of(const std::string& name) const { return entries_[at(name)].group; }

  std::size_t tensor_count() const { return entries_.size(); }
  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += static_cast<std::size_t>(e.value.size());
    return n;
  }

  void zero_grads() {
    for (auto& e : entries_) e.grad.setZero();
  }

  std::vector<std::string> group_names() const {
    std::vector<std::string> out;
    for (const auto& e : entries_)
      if (std::find(out.begin(), out.end(), e.group) == out.end()) out.push_back(e.group);
    return out;
  }

  bool same_shapes(const ParameterStore& other) const {
    if (entries_.size() != other.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const auto& a = entries_[i];
      const auto& b = other.entries_[i];
      if (a.name != b.name || a.value.rows() != b.value.rows() ||
          a.value.cols() != b.value.cols())
        return false;
    }
    return true;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, int> index_;

  int at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }
};

namespace detail {

inline void add_linear(ParameterStore& ps, Rng& rng, const std::string& prefix,
                       const std::string& group, int in_dim, int out_dim) {
  ps.add(prefix + ".w", group, randn(rng, in_dim, out_dim, 1.0 / std::sqrt(double(in_dim))));
  ps.add(prefix + ".b", group, Mat::Zero(1, out_dim));
}

inline void add_attention_block(ParameterStore& ps, Rng& rng, const std::string& prefix,
                                const std::string& group, const ModelConfig& cfg) {
  const int d = cfg.d;
  const double s = 1.0 / std::sqrt(double(d));
  // no key bias: softmax cancels any per-query constant, it can never train
  ps.add(prefix + ".wq", group, randn(rng, d, d, s));
  ps.add(prefix + ".bq", group, Mat::Zero(1, d));
  ps.add(prefix + ".wk", group, randn(rng, d, d, s));
  ps.add(prefix + ".wv", group, randn(rng, d, d, s));
  ps.add(prefix + ".bv", group, Mat::Zero(1, d));
  ps.add(prefix + ".wo", group, randn(rng, d, d, s));
  ps.add(prefix + ".bo", group, Mat::Zero(1, d));
  ps.add(prefix + ".ln1.g", group, Mat::Ones(1, d));
  ps.add(prefix + ".ln1.b", group, Mat::Zero(1, d));
  if (cfg.include_ffn) {
    const int f = cfg.ffn_dim();
    ps.add(prefix + ".ln2.g", group, Mat::Ones(1, d));
    ps.add(prefix + ".ln2.b", group, Mat::Zero(1, d));
    ps.add(prefix + ".ffn.w1", group, randn(rng, d, f, 1.0 / std::sqrt(double(d))));
    ps.add(prefix + ".ffn.b1", group, Mat::Zero(1, f));
    ps.add(prefix + ".ffn.w2", group, randn(rng, f, d, 1.0 / std::sqrt(double(f))));
    ps.add(prefix + ".ffn.b2", group, Mat::Zero(1, d));
  }
}

inline void add_mlp(ParameterStore& ps, Rng& rng, const std::string& prefix,
                    const std::string& group, const ModelConfig& cfg) {
  const int d = cfg.d;
  const int f = cfg.ffn_dim();
  ps.add(prefix + ".w1", group, randn(rng, d, f, 1.0 / std::sqrt(double(d))));
  ps.add(prefix + ".b1", group, Mat::Zero(1, f));
  ps.add(prefix + ".w2", group, randn(rng, f, d, 1.0 / std::sqrt(double(f))));
  ps.add(prefix + ".b2", group, Mat::Zero(1, d));
}

}  // namespace detail

/// Resolved bias tensor name for (modality, step, slot) under the sharing and
/// tying flags. slot is "inner" or "outer".
inline std::string bias_name(const ModelConfig& cfg, Modality m, int step,
                             const std::string& slot) {
  std::string base = std::string("focus.") + to_string(m) + ".bias";
  if (!cfg.bias_shared) base += ".s" + std::to_string(step);
  if (!cfg.bias_tied) base += "." + slot;
  return base;
}

/// Attention-block prefix for (modality, step, block) under attn_shared.
/// block is "sab1", "sab2" or "cab".
inline std::string focus_block_prefix(const ModelConfig& cfg, Modality m, int step,
                                      const std::string& block) {
  std::string base = std::string("focus.") + to_string(m);
  if (!cfg.attn_shared) base += ".s" + std::to_string(step);
  return base + "." + block;
}

/// Allocates every trainable tensor of the architecture, drawn from one
/// seeded stream in a fixed walk order. Templates and biases are N(0, 0.02);
/// linear weights use fan-in scaled variance; norm gains start at one.
inline ParameterStore init_parameters(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParameterStore ps;
  Rng rng(mix_seed(seed, 0x7061726d73ULL));  // "params"

  detail::add_linear(ps, rng, "proj.audio", groups::kProjection, cfg.audio_in(), cfg.d);
  detail::add_linear(ps, rng, "proj.visual", groups::kProjection, cfg.visual_in(), cfg.d);
  detail::add_linear(ps, rng, "proj.word", groups::kProjection, cfg.text_in(), cfg.d);
  detail::add_linear(ps, rng, "proj.sentence", groups::kProjection, cfg.text_in(), cfg.d);

  for (Modality m : {Modality::audio, Modality::visual}) {
    const std::string mod = to_string(m);
    ps.add("focus." + mod + ".template", groups::kFocus, randn(rng, cfg.m, cfg.d, 0.02));
    const int bias_steps = cfg.bias_shared ? 1 : cfg.t_max;
    for (int k = 0; k < bias_steps; ++k) {
      if (cfg.bias_tied) {
        ps.add(bias_name(cfg, m, k, "inner"), groups::kFocus, randn(rng, cfg.m, cfg.d, 0.02));
      } else {
        ps.add(bias_name(cfg, m, k, "inner"), groups::kFocus, randn(rng, cfg.m, cfg.d, 0.02));
        ps.add(bias_name(cfg, m, k, "outer"), groups::kFocus, randn(rng, cfg.m, cfg.d, 0.02));
      }
    }
    const int attn_steps = cfg.attn_shared ? 1 : cfg.t_max;
    for (int k = 0; k < attn_steps; ++k)
      for (const char* blk : {"sab1", "sab2", "cab"})
        detail::add_attention_block(ps, rng, focus_block_prefix(cfg, m, k, blk),
                                    groups::kFocus, cfg);
  }

  detail::add_attention_block(ps, rng, "fusion.context", groups::kFusion, cfg);
  detail::add_linear(ps, rng, "fusion.proj.audio", groups::kFusion, cfg.d, cfg.d);
  detail::add_linear(ps, rng, "fusion.proj.visual", groups::kFusion, cfg.d, cfg.d);
  detail::add_attention_block(ps, rng, "fusion.enhance.audio", groups::kFusion, cfg);
  detail::add_attention_block(ps, rng, "fusion.enhance.visual", groups::kFusion, cfg);
  detail::add_linear(ps, rng, "fusion.out", groups::kFusion, cfg.d, cfg.d);

  for (Modality m : {Modality::audio, Modality::visual}) {
    const std::string mod = to_string(m);
    detail::add_attention_block(ps, rng, "pref." + mod + ".sab", groups::kPreference, cfg);
    detail::add_attention_block(ps, rng, "pref." + mod + ".cab", groups::kPreference, cfg);
    detail::add_mlp(ps, rng, "pref." + mod + ".mlp", groups::kPreference, cfg);
  }

  // each decoder closes its pre-norm block stack with a final normalization
  detail::add_attention_block(ps, rng, "dec.mm.block1", groups::kDecoderMM, cfg);
  detail::add_attention_block(ps, rng, "dec.mm.block2", groups::kDecoderMM, cfg);
  ps.add("dec.mm.ln.g", groups::kDecoderMM, Mat::Ones(1, cfg.d));
  ps.add("dec.mm.ln.b", groups::kDecoderMM, Mat::Zero(1, cfg.d));
  detail::add_linear(ps, rng, "dec.mm.out", groups::kDecoderMM, cfg.d, cfg.c);

  detail::add_attention_block(ps, rng, "dec.audio.block", groups::kDecoderAudio, cfg);
  ps.add("dec.audio.ln.g", groups::kDecoderAudio, Mat::Ones(1, cfg.d));
  ps.add("dec.audio.ln.b", groups::kDecoderAudio, Mat::Zero(1, cfg.d));
  detail::add_linear(ps, rng, "dec.audio.out", groups::kDecoderAudio, cfg.d, cfg.c);

  detail::add_attention_block(ps, rng, "dec.visual.block", groups::kDecoderVisual, cfg);
  ps.add("dec.visual.ln.g", groups::kDecoderVisual, Mat::Ones(1, cfg.d));
  ps.add("dec.visual.ln.b", groups::kDecoderVisual, Mat::Zero(1, cfg.d));
  detail::add_linear(ps, rng, "dec.visual.out", groups::kDecoderVisual, cfg.d, cfg.c);

  return ps;
}

}  // namespace avm

#endif  // AVM_PARAMS_HPP
