#ifndef AVM_CONFIG_HPP
#define AVM_CONFIG_HPP

#include <nlohmann/json.hpp>

#include <cstdint>
#include <fstream>
#include <string>

#include "avm/common.hpp"

namespace avm {

using Json = nlohmann::ordered_json;

/// Which raw stream comes first when the fusion context is concatenated.
enum class ContextOrder { audio_first, visual_first };

/// Global model + training configuration. Serialized as a flat JSON object;
/// unknown keys are rejected on load.
struct ModelConfig {
  // model dimensions
  int d = 512;          // shared feature width after input projection
  int m = 8;            // template length (rows per CLS bank)
  int t_max = 60;       // maximum segment count
  int l_max = 16;       // maximum question tokens
  int c = 42;           // answer vocabulary size
  int h = 8;            // attention heads; d must divide evenly
  int audio_in_dim = 0;    // raw stream widths before projection; 0 = use d
  int visual_in_dim = 0;
  int text_in_dim = 0;

  // objectives
  double tau = 0.1;     // contrastive temperature
  double lambda_qa = 1.0;
  double lambda_vp = 1.0;
  double lambda_ap = 1.0;
  double lambda_c = 1.0;
  bool contrastive_literal = false;  // literal denominator (other samples' positive scores)

  // focus-sampling weight sharing
  bool attn_shared = true;   // attention blocks shared across time steps
  bool bias_shared = false;  // learned biases shared across time steps
  bool bias_tied = false;    // one bias tensor serving both additions in a step
  bool include_ffn = true;   // feed-forward sublayer inside SAB/CAB

  ContextOrder context_order = ContextOrder::audio_first;
  std::string fuse_focus_combine = "pool_broadcast";  // focus-into-context reconciliation

  // optimization
  double lr = 1e-4;
  double lr_decay_factor = 0.1;
  int lr_decay_interval = 8;  // epochs
  int batch_size = 32;
  int epochs = 30;

  std::uint64_t seed = 0;

  int audio_in() const { return audio_in_dim > 0 ? audio_in_dim : d; }
  int visual_in() const { return visual_in_dim > 0 ? visual_in_dim : d; }
  int text_in() const { return text_in_dim > 0 ? text_in_dim : d; }
  int head_dim() const { return d / h; }
  int ffn_dim() const { return 4 * d; }

  void validate() const {
    if (d < 1 || m < 1 || t_max < 1 || l_max < 1 || c < 1 || h < 1)
      throw ConfigError("dimensions D, M, T_max, L_max, C, H must all be >= 1");
    if (d % h != 0) throw ConfigError("D must be divisible by H");
    if (tau <= 0) throw ConfigError("tau must be > 0");
    if (lambda_qa < 0 || lambda_vp < 0 || lambda_ap < 0 || lambda_c < 0)
      throw ConfigError("loss weights must be >= 0");
    if (audio_in_dim < 0 || visual_in_dim < 0 || text_in_dim < 0)
      throw ConfigError("input widths must be >= 0");
    if (lr <= 0 || lr_decay_factor <= 0 || lr_decay_interval < 1)
      throw ConfigError("invalid learning-rate schedule");
    if (batch_size < 1 || epochs < 0) throw ConfigError("invalid batch size or epoch count");
    if (fuse_focus_combine != "pool_broadcast")
      throw ConfigError("unsupported fuse_focus_combine: " + fuse_focus_combine);
  }
};

inline Json to_json(const ModelConfig& c) {
  Json j;
  j["d"] = c.d;
  j["m"] = c.m;
  j["t_max"] = c.t_max;
  j["l_max"] = c.l_max;
  j["c"] = c.c;
  j["h"] = c.h;
  j["audio_in_dim"] = c.audio_in_dim;
  j["visual_in_dim"] = c.visual_in_dim;
  j["text_in_dim"] = c.text_in_dim;
  j["tau"] = c.tau;
  j["lambda_qa"] = c.lambda_qa;
  j["lambda_vp"] = c.lambda_vp;
  j["lambda_ap"] = c.lambda_ap;
  j["lambda_c"] = c.lambda_c;
  j["contrastive_literal"] = c.contrastive_literal;
  j["attn_shared"] = c.attn_shared;
  j["bias_shared"] = c.bias_shared;
  j["bias_tied"] = c.bias_tied;
  j["include_ffn"] = c.include_ffn;
  j["context_order"] = c.context_order == ContextOrder::audio_first ? "audio_first" : "visual_first";
  j["fuse_focus_combine"] = c.fuse_focus_combine;
  j["lr"] = c.lr;
  j["lr_decay_factor"] = c.lr_decay_factor;
  j["lr_decay_interval"] = c.lr_decay_interval;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["seed"] = c.seed;
  return j;
}

inline ModelConfig config_from_json(const Json& j) {
  ModelConfig c;
  ModelConfig defaults;
  auto geti = [&](const char* k, int d) { return j.contains(k) ? j.at(k).get<int>() : d; };
  auto getd = [&](const char* k, double d) { return j.contains(k) ? j.at(k).get<double>() : d; };
  auto getb = [&](const char* k, bool d) { return j.contains(k) ? j.at(k).get<bool>() : d; };

  static const char* known[] = {
      "d", "m", "t_max", "l_max", "c", "h", "audio_in_dim", "visual_in_dim",
      "text_in_dim", "tau", "lambda_qa", "lambda_vp", "lambda_ap", "lambda_c",
      "contrastive_literal", "attn_shared", "bias_shared", "bias_tied",
      "include_ffn", "context_order", "fuse_focus_combine", "lr",
      "lr_decay_factor", "lr_decay_interval", "batch_size", "epochs", "seed"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known)
      if (it.key() == k) { ok = true; break; }
    if (!ok) throw ConfigError("unknown config key: " + it.key());
  }

  c.d = geti("d", defaults.d);
  c.m = geti("m", defaults.m);
  c.t_max = geti("t_max", defaults.t_max);
  c.l_max = geti("l_max", defaults.l_max);
  c.c = geti("c", defaults.c);
  c.h = geti("h", defaults.h);
  c.audio_in_dim = geti("audio_in_dim", defaults.audio_in_dim);
  c.visual_in_dim = geti("visual_in_dim", defaults.visual_in_dim);
  c.text_in_dim = geti("text_in_dim", defaults.text_in_dim);
  c.tau = getd("tau", defaults.tau);
  c.lambda_qa = getd("lambda_qa", defaults.lambda_qa);
  c.lambda_vp = getd("lambda_vp", defaults.lambda_vp);
  c.lambda_ap = getd("lambda_ap", defaults.lambda_ap);
  c.lambda_c = getd("lambda_c", defaults.lambda_c);
  c.contrastive_literal = getb("contrastive_literal", defaults.contrastive_literal);
  c.attn_shared = getb("attn_shared", defaults.attn_shared);
  c.bias_shared = getb("bias_shared", defaults.bias_shared);
  c.bias_tied = getb("bias_tied", defaults.bias_tied);
  c.include_ffn = getb("include_ffn", defaults.include_ffn);
  if (j.contains("context_order")) {
    std::string s = j.at("context_order").get<std::string>();
    if (s == "audio_first")
      c.context_order = ContextOrder::audio_first;
    else if (s == "visual_first")
      c.context_order = ContextOrder::visual_first;
    else
      throw ConfigError("context_order must be audio_first or visual_first");
  }
  if (j.contains("fuse_focus_combine"))
    c.fuse_focus_combine = j.at("fuse_focus_combine").get<std::string>();
  c.lr = getd("lr", defaults.lr);
  c.lr_decay_factor = getd("lr_decay_factor", defaults.lr_decay_factor);
  c.lr_decay_interval = geti("lr_decay_interval", defaults.lr_decay_interval);
  c.batch_size = geti("batch_size", defaults.batch_size);
  c.epochs = geti("epochs", defaults.epochs);
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  c.validate();
  return c;
}

inline ModelConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file: " + path);
  Json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw FormatError("config parse error in " + path + ": " + e.what());
  }
  return config_from_json(j);
}

inline void save_config(const ModelConfig& c, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write config file: " + path);
  out << to_json(c).dump(2) << "\n";
}

}  // namespace avm

#endif  // AVM_CONFIG_HPP
