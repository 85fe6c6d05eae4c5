#ifndef AVM_TRAIN_HPP
#define AVM_TRAIN_HPP

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "avm/archive.hpp"
#include "avm/data.hpp"
#include "avm/model.hpp"

namespace avm {

/// Adam moments aligned with the store's tensor order, plus the step-decay
/// learning-rate schedule.
struct OptimizerState {
  std::vector<Mat> m, v;
  long long step = 0;
  double base_lr = 1e-4;
  double decay_factor = 0.1;
  int decay_interval = 8;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  static OptimizerState init(const ParameterStore& ps, const ModelConfig& cfg) {
    OptimizerState o;
    o.base_lr = cfg.lr;
    o.decay_factor = cfg.lr_decay_factor;
    o.decay_interval = cfg.lr_decay_interval;
    for (const auto& e : ps.entries()) {
      o.m.push_back(Mat::Zero(e.value.rows(), e.value.cols()));
      o.v.push_back(Mat::Zero(e.value.rows(), e.value.cols()));
    }
    return o;
  }

  double lr_at_epoch(int epoch) const {
    return base_lr * std::pow(decay_factor, epoch / decay_interval);
  }

  void apply(ParameterStore& ps, double lr) {
    ++step;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    auto& entries = ps.entries();
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const Mat& g = entries[i].grad;
      m[i] = beta1 * m[i] + (1.0 - beta1) * g;
      v[i] = beta2 * v[i] + (1.0 - beta2) * g.cwiseProduct(g);
      Mat mhat = m[i] / bc1;
      Mat vhat = v[i] / bc2;
      entries[i].value -= lr * mhat.cwiseQuotient(vhat.cwiseSqrt().array().matrix() +
                                                  Mat::Constant(g.rows(), g.cols(), eps));
    }
  }
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0;
  LossBreakdown loss;  // mean over batches, weighted by batch size
  double train_accuracy = 0;
  std::map<std::string, double> train_accuracy_by_qtype;
};

struct RunManifest {
  Json config;
  std::uint64_t seed = 0;
  std::string data_source;
  std::uint64_t data_hash = 0;
  int n_train = 0;
  Json ablation;  // path switches and variant label
  std::vector<EpochRecord> epochs;
  double wall_clock_sec = 0;  // excluded from reproducibility comparisons

  Json to_json() const {
    Json j;
    j["config"] = config;
    j["seed"] = seed;
    j["data_source"] = data_source;
    j["data_hash"] = data_hash;
    j["n_train"] = n_train;
    j["ablation"] = ablation;
    Json eps = Json::array();
    for (const auto& e : epochs) {
      Json je;
      je["epoch"] = e.epoch;
      je["lr"] = e.lr;
      je["loss"] = Json{{"qa", e.loss.l_qa}, {"vp", e.loss.l_vp}, {"ap", e.loss.l_ap},
                        {"c", e.loss.l_c}, {"total", e.loss.total}};
      je["train_accuracy"] = e.train_accuracy;
      Json acc;
      for (const auto& [k, v] : e.train_accuracy_by_qtype) acc[k] = v;
      je["train_accuracy_by_qtype"] = acc;
      eps.push_back(je);
    }
    j["epochs"] = eps;
    j["wall_clock_sec"] = wall_clock_sec;
    return j;
  }
};

namespace detail {
inline Json switches_json(const PathSwitches& sw, const std::string& label) {
  Json j;
  j["variant"] = label;
  j["tdpp"] = sw.tdpp;
  j["gpap"] = sw.gpap;
  j["avfc"] = sw.avfc;
  return j;
}
}  // namespace detail

/// Runs epochs [first_epoch, first_epoch + n_epochs) in place. Batch order is
/// reshuffled per epoch from a stream keyed by (seed, epoch), so a restored
/// checkpoint continues exactly like the uninterrupted run.
inline void train_epochs(const ModelConfig& cfg, const std::vector<Sample>& data,
                         ParameterStore& ps, OptimizerState& opt, int first_epoch,
                         int n_epochs, const PathSwitches& sw = {},
                         RunManifest* manifest = nullptr, bool verbose = false) {
  if (data.empty()) throw ConfigError("train: empty dataset");
  std::vector<int> order(data.size());

  for (int epoch = first_epoch; epoch < first_epoch + n_epochs; ++epoch) {
    const double lr = opt.lr_at_epoch(epoch);
    // batch order is a pure function of (seed, epoch): restart from identity
    // so a restored checkpoint continues exactly like the uninterrupted run
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(mix_seed(cfg.seed, 0x4550ULL + static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    LossBreakdown sum{};
    int seen = 0, correct = 0;
    std::map<std::string, std::pair<int, int>> by_qtype;

    for (std::size_t at = 0; at < order.size(); at += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), at + cfg.batch_size);
      std::vector<const Sample*> batch;
      for (std::size_t i = at; i < end; ++i) batch.push_back(&data[order[i]]);
      const int bn = static_cast<int>(batch.size());
      const int batch_index = static_cast<int>(at / cfg.batch_size);

      ps.zero_grads();
      BatchOutputs out;
      try {
        out = run_batch(ps, cfg, batch, sw, true);
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + " batch " +
                           std::to_string(batch_index) + ": " + e.what());
      }
      auto check = [&](double val, const char* part) {
        if (!std::isfinite(val))
          throw NumericError("non-finite " + std::string(part) + " in epoch " +
                             std::to_string(epoch) + " batch " + std::to_string(batch_index));
      };
      check(out.loss.l_qa, "l_qa");
      check(out.loss.l_vp, "l_vp");
      check(out.loss.l_ap, "l_ap");
      check(out.loss.l_c, "l_c");
      check(out.loss.total, "total loss");

      opt.apply(ps, lr);

      sum.l_qa += out.loss.l_qa * bn;
      sum.l_vp += out.loss.l_vp * bn;
      sum.l_ap += out.loss.l_ap * bn;
      sum.l_c += out.loss.l_c * bn;
      sum.total += out.loss.total * bn;
      for (int i = 0; i < bn; ++i) {
        const Sample& s = *batch[i];
        bool ok = out.predicted[i] == s.answer;
        ++seen;
        correct += ok;
        auto& q = by_qtype[to_string(s.qtype)];
        ++q.first;
        q.second += ok;
      }
    }

    if (manifest) {
      EpochRecord rec;
      rec.epoch = epoch;
      rec.lr = lr;
      rec.loss.l_qa = sum.l_qa / seen;
      rec.loss.l_vp = sum.l_vp / seen;
      rec.loss.l_ap = sum.l_ap / seen;
      rec.loss.l_c = sum.l_c / seen;
      rec.loss.total = sum.total / seen;
      rec.train_accuracy = static_cast<double>(correct) / seen;
      for (const auto& [k, pc] : by_qtype)
        rec.train_accuracy_by_qtype[k] = static_cast<double>(pc.second) / pc.first;
      manifest->epochs.push_back(rec);
    }
    if (verbose)
      std::fprintf(stderr, "epoch %d lr %.3g loss %.4f acc %.3f\n", epoch, lr,
                   sum.total / seen, static_cast<double>(correct) / seen);
  }
}

struct TrainResult {
  ParameterStore params;
  OptimizerState opt;
  RunManifest manifest;
};

inline TrainResult train(const ModelConfig& cfg, const std::vector<Sample>& data,
                         const PathSwitches& sw = {}, const std::string& variant = "full",
                         bool verbose = false) {
  cfg.validate();
  auto t0 = std::chrono::steady_clock::now();
  TrainResult r;
  r.params = init_parameters(cfg, cfg.seed);
  r.opt = OptimizerState::init(r.params, cfg);
  r.manifest.config = avm::to_json(cfg);
  r.manifest.seed = cfg.seed;
  r.manifest.data_source = "in-memory";
  r.manifest.data_hash = dataset_hash(data);
  r.manifest.n_train = static_cast<int>(data.size());
  r.manifest.ablation = detail::switches_json(sw, variant);
  train_epochs(cfg, data, r.params, r.opt, 0, cfg.epochs, sw, &r.manifest, verbose);
  r.manifest.wall_clock_sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

// ---------------------------------------------------------------------------
// evaluation

struct Metrics {
  int n = 0;
  double accuracy = 0;
  std::map<std::string, double> accuracy_by_qtype;
  std::map<std::string, double> accuracy_by_subtype;
  std::map<std::string, double> per_decoder;  // each decoder scored alone

  Json to_json() const {
    Json j;
    j["n"] = n;
    j["accuracy"] = accuracy;
    Json q, st, pd;
    for (const auto& [k, val] : accuracy_by_qtype) q[k] = val;
    for (const auto& [k, val] : accuracy_by_subtype) st[k] = val;
    for (const auto& [k, val] : per_decoder) pd[k] = val;
    j["accuracy_by_qtype"] = q;
    j["accuracy_by_subtype"] = st;
    j["per_decoder"] = pd;
    return j;
  }
};

inline Metrics evaluate(ParameterStore& ps, const ModelConfig& cfg,
                        const std::vector<Sample>& data, const InferenceConfig& ic = {},
                        const PathSwitches& sw = {}) {
  if (data.empty()) throw ConfigError("evaluate: empty dataset");
  Metrics m;
  m.n = static_cast<int>(data.size());
  std::map<std::string, std::pair<int, int>> by_qtype, by_subtype;
  int correct = 0, qa_ok = 0, ap_ok = 0, vp_ok = 0;
  auto argmax = [](const Eigen::RowVectorXd& p) {
    int best = 0;
    for (int i = 1; i < p.size(); ++i)
      if (p(i) > p(best)) best = i;
    return best;
  };
  for (const Sample& s : data) {
    SampleEval ev = eval_sample(ps, cfg, s, ic, sw);
    bool ok = ev.result.answer == s.answer;
    correct += ok;
    qa_ok += argmax(ev.mm.probs.probs) == s.answer;
    if (ev.has_preference) {
      ap_ok += argmax(ev.audio.probs.probs) == s.answer;
      vp_ok += argmax(ev.visual.probs.probs) == s.answer;
    }
    auto& q = by_qtype[to_string(s.qtype)];
    ++q.first;
    q.second += ok;
    auto& st = by_subtype[to_string(s.subtype)];
    ++st.first;
    st.second += ok;
  }
  m.accuracy = static_cast<double>(correct) / m.n;
  for (const auto& [k, pc] : by_qtype)
    m.accuracy_by_qtype[k] = static_cast<double>(pc.second) / pc.first;
  for (const auto& [k, pc] : by_subtype)
    m.accuracy_by_subtype[k] = static_cast<double>(pc.second) / pc.first;
  m.per_decoder["qa"] = static_cast<double>(qa_ok) / m.n;
  if (sw.gpap) {
    m.per_decoder["ap"] = static_cast<double>(ap_ok) / m.n;
    m.per_decoder["vp"] = static_cast<double>(vp_ok) / m.n;
  }
  return m;
}

// ---------------------------------------------------------------------------
// focus-trajectory probe

struct ProbePoint {
  int k = 0;
  double accuracy = 0;
};

/// For each scan step k, substitutes the step-k template banks for the focus
/// features and reruns the remaining pipeline. The final point reproduces
/// standard evaluation by construction. Requires uniform T across the data.
inline std::vector<ProbePoint> probe_focus_trajectory(ParameterStore& ps,
                                                      const ModelConfig& cfg,
                                                      const std::vector<Sample>& data,
                                                      const InferenceConfig& ic = {},
                                                      bool tracing_enabled = true) {
  if (!tracing_enabled) throw ConfigError("probe: tracing disabled");
  if (data.empty()) throw ConfigError("probe: empty dataset");
  const int t = data.front().t();
  for (const auto& s : data)
    if (s.t() != t) throw ConfigError("probe: segment counts differ across dataset");

  std::vector<int> correct(t, 0);
  for (const Sample& s : data) {
    TraceRecord trace;
    trace.enabled = true;
    eval_sample(ps, cfg, s, ic, PathSwitches{}, &trace);
    for (int k = 0; k < t; ++k) {
      FocusFeatures f{trace.audio_templates[k], trace.visual_templates[k]};
      SampleEval ev = eval_sample(ps, cfg, s, ic, PathSwitches{}, nullptr, &f);
      correct[k] += ev.result.answer == s.answer;
    }
  }
  std::vector<ProbePoint> out;
  for (int k = 0; k < t; ++k)
    out.push_back({k, static_cast<double>(correct[k]) / data.size()});
  return out;
}

// ---------------------------------------------------------------------------
// checkpoints

inline void save_checkpoint(const ParameterStore& ps, const OptimizerState& opt,
                            const ModelConfig& cfg, int next_epoch, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir + "/params");
  fs::create_directories(dir + "/opt_m");
  fs::create_directories(dir + "/opt_v");
  const auto& entries = ps.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    avmf::write_tensor(dir + "/params/" + entries[i].name + ".avmf", entries[i].value,
                       avmf::kDtypeF64);
    avmf::write_tensor(dir + "/opt_m/" + entries[i].name + ".avmf", opt.m[i], avmf::kDtypeF64);
    avmf::write_tensor(dir + "/opt_v/" + entries[i].name + ".avmf", opt.v[i], avmf::kDtypeF64);
  }
  Json j;
  j["format"] = "AVM-CKPT";
  j["version"] = 1;
  j["config"] = to_json(cfg);
  j["next_epoch"] = next_epoch;
  j["adam_step"] = opt.step;
  std::ofstream out(dir + "/state.json");
  if (!out) throw Error("cannot write checkpoint state: " + dir);
  out << j.dump(2) << "\n";
}

struct Checkpoint {
  ModelConfig cfg;
  ParameterStore params;
  OptimizerState opt;
  int next_epoch = 0;
};

/// Restores a checkpoint. When expect is given, its architecture must match
/// the stored one tensor-for-tensor; nothing is returned partially loaded.
inline Checkpoint load_checkpoint(const std::string& dir, const ModelConfig* expect = nullptr) {
  std::ifstream in(dir + "/state.json");
  if (!in) throw FormatError("missing checkpoint state.json in " + dir);
  Json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw FormatError(std::string("checkpoint state parse error: ") + e.what());
  }
  if (!j.contains("format") || j.at("format") != "AVM-CKPT")
    throw FormatError("not a checkpoint directory: " + dir);
  if (j.at("version").get<int>() != 1) throw FormatError("unsupported checkpoint version");

  Checkpoint ck;
  ck.cfg = config_from_json(j.at("config"));
  ck.next_epoch = j.at("next_epoch").get<int>();
  ck.params = init_parameters(ck.cfg, ck.cfg.seed);
  ck.opt = OptimizerState::init(ck.params, ck.cfg);
  ck.opt.step = j.at("adam_step").get<long long>();

  if (expect) {
    ParameterStore want = init_parameters(*expect, expect->seed);
    if (!want.same_shapes(ck.params))
      throw ShapeError("checkpoint architecture does not match the requested config");
  }

  auto& entries = ck.params.entries();
  std::vector<Mat> vals(entries.size()), ms(entries.size()), vs(entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const std::string& name = entries[i].name;
    vals[i] = avmf::read_tensor(dir + "/params/" + name + ".avmf");
    ms[i] = avmf::read_tensor(dir + "/opt_m/" + name + ".avmf");
    vs[i] = avmf::read_tensor(dir + "/opt_v/" + name + ".avmf");
    auto bad = [&](const Mat& m) {
      return m.rows() != entries[i].value.rows() || m.cols() != entries[i].value.cols();
    };
    if (bad(vals[i]) || bad(ms[i]) || bad(vs[i]))
      throw ShapeError("checkpoint tensor " + name + " has mismatched shape");
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    entries[i].value = std::move(vals[i]);
    ck.opt.m[i] = std::move(ms[i]);
    ck.opt.v[i] = std::move(vs[i]);
  }
  return ck;
}

inline void write_manifest(const RunManifest& m, const std::string& run_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(run_dir);
  std::ofstream out(run_dir + "/manifest.json");
  if (!out) throw Error("cannot write manifest: " + run_dir);
  out << m.to_json().dump(2) << "\n";
  std::ofstream jsonl(run_dir + "/metrics.jsonl");
  for (const auto& e : m.epochs) {
    Json je;
    je["epoch"] = e.epoch;
    je["lr"] = e.lr;
    je["l_qa"] = e.loss.l_qa;
    je["l_vp"] = e.loss.l_vp;
    je["l_ap"] = e.loss.l_ap;
    je["l_c"] = e.loss.l_c;
    je["total"] = e.loss.total;
    je["train_accuracy"] = e.train_accuracy;
    jsonl << je.dump() << "\n";
  }
}

}  // namespace avm

#endif  // AVM_TRAIN_HPP
