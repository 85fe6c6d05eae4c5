// Command-line front end: synthetic data generation, training, evaluation,
// ablation suites, the focus-trajectory probe, gradient verification and
// artifact inspection. Structured output goes to stdout as JSON, logs to
// stderr. Exit codes: 0 success, 1 domain error, 2 usage error.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "avm/ablate.hpp"
#include "avm/archive.hpp"
#include "avm/gradcheck.hpp"
#include "avm/model.hpp"
#include "avm/train.hpp"

namespace fs = std::filesystem;
using avm::Json;

namespace {

std::uint64_t env_seed_override(std::uint64_t fallback) {
  const char* env = std::getenv("AVM_SEED");
  if (!env || !*env) return fallback;
  return std::strtoull(env, nullptr, 10);
}

avm::ModelConfig load_config_checked(const std::string& path) {
  avm::ModelConfig cfg = avm::load_config(path);
  cfg.seed = env_seed_override(cfg.seed);
  return cfg;
}

std::vector<avm::Sample> load_data(const std::string& data_dir, const std::string& spec_path,
                                   int n) {
  if (!data_dir.empty()) {
    if (!fs::exists(data_dir)) throw avm::Error("data directory not found: " + data_dir);
    return avm::read_archive(data_dir);
  }
  if (spec_path.empty()) throw avm::Error("need --data or --spec");
  if (!fs::exists(spec_path)) throw avm::Error("task spec not found: " + spec_path);
  avm::TaskSpec spec = avm::load_task_spec(spec_path);
  spec.seed = env_seed_override(spec.seed);
  return avm::make_dataset(spec, n);
}

avm::InferenceConfig parse_inference(const std::vector<std::string>& disable,
                                     const std::string& combine) {
  avm::InferenceConfig ic;
  for (const auto& d : disable) {
    if (d == "qa")
      ic.enable_qa = false;
    else if (d == "ap")
      ic.enable_ap = false;
    else if (d == "vp")
      ic.enable_vp = false;
    else
      throw avm::ConfigError("--disable expects qa, ap or vp, got '" + d + "'");
  }
  ic.combine_mode = avm::combine_from_string(combine);
  return ic;
}

std::vector<std::uint64_t> parse_seeds(const std::string& csv) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) out.push_back(std::strtoull(tok.c_str(), nullptr, 10));
  return out;
}

int cmd_gen(const std::string& spec_path, const std::string& out_dir, int n) {
  avm::TaskSpec spec = avm::load_task_spec(spec_path);
  spec.seed = env_seed_override(spec.seed);
  std::vector<avm::Sample> samples = avm::make_dataset(spec, n);
  avm::write_archive(samples, out_dir);
  Json j;
  j["written"] = n;
  j["dir"] = out_dir;
  j["data_hash"] = avm::dataset_hash(samples);
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& spec_path, int n, const std::string& out_dir,
              const std::string& variant_name, bool verbose) {
  avm::ModelConfig base = load_config_checked(config_path);
  avm::Variant variant = avm::make_variant(base, variant_name);
  variant.cfg.seed = base.seed;
  std::vector<avm::Sample> data = load_data(data_dir, spec_path, n);

  avm::TrainResult r = avm::train(variant.cfg, data, variant.sw, variant.name, verbose);
  if (!out_dir.empty()) {
    avm::write_manifest(r.manifest, out_dir);
    avm::save_checkpoint(r.params, r.opt, variant.cfg, variant.cfg.epochs,
                         out_dir + "/checkpoint");
  }
  Json j = r.manifest.to_json();
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_eval(const std::string& run_dir, const std::string& data_dir,
             const std::string& spec_path, int n, const std::vector<std::string>& disable,
             const std::string& combine, const std::string& attn_path, int attn_limit) {
  avm::Checkpoint ck = avm::load_checkpoint(run_dir + "/checkpoint");
  std::vector<avm::Sample> data = load_data(data_dir, spec_path, n);
  avm::InferenceConfig ic = parse_inference(disable, combine);
  avm::Metrics m = avm::evaluate(ck.params, ck.cfg, data, ic);

  if (!attn_path.empty()) {
    Json dump = Json::array();
    const int limit = std::min<int>(attn_limit, static_cast<int>(data.size()));
    for (int i = 0; i < limit; ++i) {
      avm::TraceRecord trace;
      trace.enabled = true;
      avm::eval_sample(ck.params, ck.cfg, data[i], ic, {}, &trace);
      auto mat_json = [](const avm::Mat& mat) {
        Json rows = Json::array();
        for (int r = 0; r < mat.rows(); ++r) {
          Json row = Json::array();
          for (int c = 0; c < mat.cols(); ++c) row.push_back(mat(r, c));
          rows.push_back(row);
        }
        return rows;
      };
      dump.push_back(Json{{"id", data[i].id},
                          {"word_attn_audio", mat_json(trace.word_attn_audio)},
                          {"word_attn_visual", mat_json(trace.word_attn_visual)}});
    }
    std::ofstream out(attn_path);
    if (!out) throw avm::Error("cannot write attention export: " + attn_path);
    out << dump.dump(2) << "\n";
  }

  std::cout << m.to_json().dump(2) << "\n";
  return 0;
}

int cmd_probe(const std::string& run_dir, const std::string& data_dir,
              const std::string& spec_path, int n, const std::vector<std::string>& disable,
              const std::string& combine) {
  avm::Checkpoint ck = avm::load_checkpoint(run_dir + "/checkpoint");
  std::vector<avm::Sample> data = load_data(data_dir, spec_path, n);
  avm::InferenceConfig ic = parse_inference(disable, combine);
  auto series = avm::probe_focus_trajectory(ck.params, ck.cfg, data, ic, true);
  Json pts = Json::array();
  for (const auto& p : series) pts.push_back(Json{{"k", p.k}, {"accuracy", p.accuracy}});
  Json j;
  j["steps"] = pts;
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_ablate(const std::string& suite, const std::string& config_path,
               const std::string& spec_path, int n_train, int n_test,
               const std::string& seeds_csv, const std::string& out_dir, bool verbose) {
  avm::ModelConfig cfg = load_config_checked(config_path);
  avm::TaskSpec spec = avm::load_task_spec(spec_path);
  spec.seed = env_seed_override(spec.seed);
  std::vector<avm::Sample> train_data = avm::make_dataset(spec, n_train);
  std::vector<avm::Sample> test_data = avm::make_dataset(spec, n_test, n_train);
  std::vector<std::uint64_t> seeds = parse_seeds(seeds_csv);
  avm::AblationTable table = avm::run_ablation(cfg, train_data, test_data, suite, seeds, verbose);
  Json j = table.to_json();
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    std::ofstream out(out_dir + "/ablation_" + suite + ".json");
    out << j.dump(2) << "\n";
  }
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_gradcheck(const std::string& config_path) {
  avm::ModelConfig cfg = load_config_checked(config_path);
  avm::GradCheckReport report = avm::run_gradcheck(cfg);
  std::cout << report.to_json().dump(2) << "\n";
  return report.pass() ? 0 : 1;
}

int cmd_inspect(const std::string& path) {
  Json j;
  if (fs::exists(path + "/manifest.json")) {
    std::ifstream in(path + "/manifest.json");
    Json m;
    in >> m;
    if (m.contains("format") && m["format"] == "AVM-FEAT") {
      j["kind"] = "feature-archive";
      j["samples"] = m["samples"].size();
      if (!m["samples"].empty()) j["first"] = m["samples"][0];
    } else {
      j["kind"] = "run";
      j["manifest"] = m;
    }
  } else if (fs::exists(path + "/state.json")) {
    std::ifstream in(path + "/state.json");
    Json s;
    in >> s;
    j["kind"] = "checkpoint";
    j["state"] = s;
  } else if (fs::exists(path) && !fs::is_directory(path)) {
    avm::Mat m = avm::avmf::read_tensor(path);
    j["kind"] = "tensor";
    j["rows"] = m.rows();
    j["cols"] = m.cols();
  } else {
    throw avm::Error("nothing inspectable at: " + path);
  }
  std::cout << j.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale dual-path audio-visual question answering lab"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "generate a synthetic feature archive");
  std::string gen_spec, gen_out;
  int gen_n = 256;
  gen->add_option("--spec", gen_spec, "task spec JSON")->required();
  gen->add_option("--out", gen_out, "output archive directory")->required();
  gen->add_option("--n", gen_n, "sample count");

  // train
  auto* tr = app.add_subcommand("train", "train a model");
  std::string tr_config, tr_data, tr_spec, tr_out, tr_variant = "full";
  int tr_n = 256;
  bool tr_verbose = false;
  tr->add_option("--config", tr_config, "model config JSON")->required();
  tr->add_option("--data", tr_data, "feature archive directory");
  tr->add_option("--spec", tr_spec, "task spec JSON (in-memory synthetic data)");
  tr->add_option("--n", tr_n, "synthetic sample count");
  tr->add_option("--out", tr_out, "run directory for manifest and checkpoint");
  tr->add_option("--variant", tr_variant, "ablation variant name");
  tr->add_flag("--verbose", tr_verbose, "per-epoch log on stderr");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a trained run");
  std::string ev_run, ev_data, ev_spec, ev_combine = "add", ev_attn;
  int ev_n = 256, ev_attn_limit = 8;
  std::vector<std::string> ev_disable;
  ev->add_option("--run", ev_run, "run directory")->required();
  ev->add_option("--data", ev_data, "feature archive directory");
  ev->add_option("--spec", ev_spec, "task spec JSON");
  ev->add_option("--n", ev_n, "synthetic sample count");
  ev->add_option("--disable", ev_disable, "disable a decoder at inference: qa, ap or vp");
  ev->add_option("--combine", ev_combine, "distribution combination: add, mul or wadd");
  ev->add_option("--export-attention", ev_attn, "write word-attention heat rows to FILE");
  ev->add_option("--export-attention-limit", ev_attn_limit, "samples to export");

  // ablate
  auto* ab = app.add_subcommand("ablate", "run a comparison suite");
  std::string ab_suite, ab_config, ab_spec, ab_seeds = "", ab_out;
  int ab_n = 512, ab_test_n = 128;
  bool ab_verbose = false;
  ab->add_option("--suite", ab_suite, "table6, table7, table9, table10 or sweepT")->required();
  ab->add_option("--config", ab_config, "model config JSON")->required();
  ab->add_option("--spec", ab_spec, "task spec JSON")->required();
  ab->add_option("--n", ab_n, "training sample count");
  ab->add_option("--test-n", ab_test_n, "held-out sample count");
  ab->add_option("--seeds", ab_seeds, "comma-separated seed list");
  ab->add_option("--out", ab_out, "directory for the table JSON");
  ab->add_flag("--verbose", ab_verbose, "per-epoch log on stderr");

  // probe
  auto* pr = app.add_subcommand("probe", "per-step focus trajectory accuracy");
  std::string pr_run, pr_data, pr_spec, pr_combine = "add";
  int pr_n = 256;
  std::vector<std::string> pr_disable;
  pr->add_option("--run", pr_run, "run directory")->required();
  pr->add_option("--data", pr_data, "feature archive directory");
  pr->add_option("--spec", pr_spec, "task spec JSON");
  pr->add_option("--n", pr_n, "synthetic sample count");
  pr->add_option("--disable", pr_disable, "disable a decoder: qa, ap or vp");
  pr->add_option("--combine", pr_combine, "distribution combination mode");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  std::string gc_config;
  gc->add_option("--config", gc_config, "model config JSON")->required();

  // inspect
  auto* insp = app.add_subcommand("inspect", "summarize an archive, run or checkpoint");
  std::string insp_path;
  insp->add_option("--path", insp_path, "artifact path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // help exits 0
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen(gen_spec, gen_out, gen_n);
    if (tr->parsed())
      return cmd_train(tr_config, tr_data, tr_spec, tr_n, tr_out, tr_variant, tr_verbose);
    if (ev->parsed())
      return cmd_eval(ev_run, ev_data, ev_spec, ev_n, ev_disable, ev_combine, ev_attn,
                      ev_attn_limit);
    if (ab->parsed())
      return cmd_ablate(ab_suite, ab_config, ab_spec, ab_n, ab_test_n, ab_seeds, ab_out,
                        ab_verbose);
    if (pr->parsed()) return cmd_probe(pr_run, pr_data, pr_spec, pr_n, pr_disable, pr_combine);
    if (gc->parsed()) return cmd_gradcheck(gc_config);
    if (insp->parsed()) return cmd_inspect(insp_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
