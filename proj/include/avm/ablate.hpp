#ifndef AVM_ABLATE_HPP
#define AVM_ABLATE_HPP

#include <string>
#include <vector>

#include "avm/train.hpp"

namespace avm {

/// A trainable configuration derived from a base config by one named switch.
struct Variant {
  std::string name;
  ModelConfig cfg;
  PathSwitches sw;
};

inline std::vector<std::string> variant_names() {
  return {"full",      "wo_tdpp",      "wo_gpap",      "wo_dpcl",      "wo_avfc",
          "wo_all",    "loss_qa",      "loss_qa_c",    "loss_qa_c_ap", "loss_qa_c_vp",
          "loss_qa_ap_vp", "loss_all", "share_none",   "share_attn",   "share_bias",
          "share_both"};
}

inline Variant make_variant(const ModelConfig& base, const std::string& name) {
  Variant v{name, base, PathSwitches{}};
  ModelConfig& c = v.cfg;
  if (name == "full" || name == "loss_all") {
  } else if (name == "wo_tdpp") {
    v.sw.tdpp = false;
  } else if (name == "wo_gpap") {
    v.sw.gpap = false;
  } else if (name == "wo_dpcl") {
    c.lambda_c = 0;
  } else if (name == "wo_avfc") {
    v.sw.avfc = false;
  } else if (name == "wo_all") {
    v.sw.tdpp = false;
    v.sw.gpap = false;
    c.lambda_c = 0;
  } else if (name == "loss_qa") {
    c.lambda_vp = c.lambda_ap = c.lambda_c = 0;
  } else if (name == "loss_qa_c") {
    c.lambda_vp = c.lambda_ap = 0;
  } else if (name == "loss_qa_c_ap") {
    c.lambda_vp = 0;
  } else if (name == "loss_qa_c_vp") {
    c.lambda_ap = 0;
  } else if (name == "loss_qa_ap_vp") {
    c.lambda_c = 0;
  } else if (name == "share_none") {
    c.attn_shared = false;
    c.bias_shared = false;
  } else if (name == "share_attn") {
    c.attn_shared = true;
    c.bias_shared = false;
  } else if (name == "share_bias") {
    c.attn_shared = false;
    c.bias_shared = true;
  } else if (name == "share_both") {
    c.attn_shared = true;
    c.bias_shared = true;
  } else {
    std::string valid;
    for (const auto& n : variant_names()) valid += (valid.empty() ? "" : ", ") + n;
    throw ConfigError("unknown ablation variant '" + name + "'; valid: " + valid);
  }
  return v;
}

struct AblationRow {
  std::string variant;
  std::vector<double> accuracy_per_seed;
  double mean_accuracy = 0;
  std::map<std::string, double> mean_accuracy_by_qtype;
};

struct AblationTable {
  std::string suite;
  std::vector<std::uint64_t> seeds;
  std::vector<AblationRow> rows;

  Json to_json() const {
    Json j;
    j["suite"] = suite;
    j["seeds"] = seeds;
    Json rs = Json::array();
    for (const auto& r : rows) {
      Json jr;
      jr["variant"] = r.variant;
      jr["accuracy_per_seed"] = r.accuracy_per_seed;
      jr["mean_accuracy"] = r.mean_accuracy;
      Json q;
      for (const auto& [k, v] : r.mean_accuracy_by_qtype) q[k] = v;
      jr["mean_accuracy_by_qtype"] = q;
      rs.push_back(jr);
    }
    j["rows"] = rs;
    return j;
  }
};

inline std::vector<std::string> ablation_suites() {
  return {"table6", "table7", "table9", "table10", "sweepT"};
}

namespace detail {

inline std::vector<Sample> truncate_segments(const std::vector<Sample>& data, int t) {
  std::vector<Sample> out = data;
  for (auto& s : out) {
    if (s.t() <= t) continue;
    s.audio.data = Mat(s.audio.data.topRows(t));
    s.visual.data = Mat(s.visual.data.topRows(t));
  }
  return out;
}

inline AblationRow train_eval_variant(const Variant& v, const std::vector<Sample>& train_data,
                                      const std::vector<Sample>& test_data,
                                      const std::vector<std::uint64_t>& seeds,
                                      const InferenceConfig& ic, bool verbose) {
  AblationRow row;
  row.variant = v.name;
  std::map<std::string, double> qsum;
  for (std::uint64_t seed : seeds) {
    ModelConfig cfg = v.cfg;
    cfg.seed = seed;
    TrainResult tr = train(cfg, train_data, v.sw, v.name, verbose);
    Metrics m = evaluate(tr.params, cfg, test_data, ic, v.sw);
    row.accuracy_per_seed.push_back(m.accuracy);
    row.mean_accuracy += m.accuracy;
    for (const auto& [k, val] : m.accuracy_by_qtype) qsum[k] += val;
  }
  row.mean_accuracy /= seeds.size();
  for (const auto& [k, val] : qsum) row.mean_accuracy_by_qtype[k] = val / seeds.size();
  return row;
}

}  // namespace detail

/// Trains and scores every variant of one comparison suite with shared seeds.
/// table9 trains the full model once per seed and varies the inference-time
/// combination mode; sweepT truncates the segment axis.
inline AblationTable run_ablation(const ModelConfig& base, const std::vector<Sample>& train_data,
                                  const std::vector<Sample>& test_data, const std::string& suite,
                                  std::vector<std::uint64_t> seeds = {}, bool verbose = false) {
  if (seeds.empty()) seeds = {base.seed};
  AblationTable table;
  table.suite = suite;
  table.seeds = seeds;

  if (suite == "table6") {
    for (const char* name : {"full", "wo_avfc", "wo_dpcl", "wo_gpap", "wo_tdpp", "wo_all"})
      table.rows.push_back(detail::train_eval_variant(make_variant(base, name), train_data,
                                                      test_data, seeds, {}, verbose));
  } else if (suite == "table7") {
    for (const char* name : {"share_none", "share_attn", "share_bias", "share_both"})
      table.rows.push_back(detail::train_eval_variant(make_variant(base, name), train_data,
                                                      test_data, seeds, {}, verbose));
  } else if (suite == "table9") {
    for (CombineMode mode : {CombineMode::wadd, CombineMode::mul, CombineMode::add}) {
      AblationRow row;
      row.variant = std::string("combine_") + to_string(mode);
      std::map<std::string, double> qsum;
      for (std::uint64_t seed : seeds) {
        ModelConfig cfg = base;
        cfg.seed = seed;
        TrainResult tr = train(cfg, train_data, {}, "full", verbose);
        InferenceConfig ic;
        ic.combine_mode = mode;
        Metrics m = evaluate(tr.params, cfg, test_data, ic);
        row.accuracy_per_seed.push_back(m.accuracy);
        row.mean_accuracy += m.accuracy;
        for (const auto& [k, val] : m.accuracy_by_qtype) qsum[k] += val;
      }
      row.mean_accuracy /= seeds.size();
      for (const auto& [k, val] : qsum) row.mean_accuracy_by_qtype[k] = val / seeds.size();
      table.rows.push_back(row);
    }
  } else if (suite == "table10") {
    for (const char* name : {"loss_qa", "loss_qa_c", "loss_qa_c_ap", "loss_qa_c_vp",
                             "loss_qa_ap_vp", "loss_all"})
      table.rows.push_back(detail::train_eval_variant(make_variant(base, name), train_data,
                                                      test_data, seeds, {}, verbose));
  } else if (suite == "sweepT") {
    const int t_full = train_data.empty() ? 0 : train_data.front().t();
    for (int t : {2, 4, 8, 12, 16}) {
      if (t > t_full) continue;
      Variant v = make_variant(base, "full");
      v.name = "T=" + std::to_string(t);
      table.rows.push_back(detail::train_eval_variant(
          v, detail::truncate_segments(train_data, t), detail::truncate_segments(test_data, t),
          seeds, {}, verbose));
    }
  } else {
    std::string valid;
    for (const auto& s : ablation_suites()) valid += (valid.empty() ? "" : ", ") + s;
    throw ConfigError("unknown ablation suite '" + suite + "'; valid: " + valid);
  }
  return table;
}

}  // namespace avm

#endif  // AVM_ABLATE_HPP
