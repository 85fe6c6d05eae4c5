#ifndef AVM_GRADCHECK_HPP
#define AVM_GRADCHECK_HPP

#include <map>
#include <string>
#include <vector>

#include "avm/data.hpp"
#include "avm/model.hpp"

namespace avm {

/// The scan's cross-attention sees M identical key/value rows (the repeated
/// segment feature), so its attention weights are uniform no matter what the
/// query side does: the query/key projections and the query-stream norm that
/// feeds them can never receive gradient. The dead-parameter detector treats
/// them as structural, not as wiring bugs.
inline bool structurally_inert(const std::string& name) {
  auto ends_with = [&](const char* suffix) {
    std::string s(suffix);
    return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
  };
  return name.rfind("focus.", 0) == 0 && name.find(".cab.") != std::string::npos &&
         (ends_with(".wq") || ends_with(".bq") || ends_with(".wk") ||
          ends_with(".ln1.g") || ends_with(".ln1.b"));
}

struct GradCheckReport {
  struct Group {
    std::string name;
    double max_rel_err = 0;
    std::string worst_tensor;
    int coords_checked = 0;
  };
  std::vector<Group> groups;
  std::vector<std::string> dead_tensors;   // unexpectedly zero gradient
  std::vector<std::string> inert_tensors;  // structurally gradient-free, skipped
  double tolerance = 1e-4;

  bool pass() const {
    if (!dead_tensors.empty()) return false;
    for (const auto& g : groups)
      if (g.max_rel_err > tolerance) return false;
    return true;
  }

  Json to_json() const {
    Json j;
    j["tolerance"] = tolerance;
    j["pass"] = pass();
    Json gs = Json::array();
    for (const auto& g : groups)
      gs.push_back(Json{{"group", g.name},
                        {"max_rel_err", g.max_rel_err},
                        {"worst_tensor", g.worst_tensor},
                        {"coords_checked", g.coords_checked}});
    j["groups"] = gs;
    j["dead_tensors"] = dead_tensors;
    j["structurally_inert"] = inert_tensors;
    return j;
  }
};

namespace detail {
inline TaskSpec gradcheck_task(const ModelConfig& cfg) {
  TaskSpec spec;
  spec.t = cfg.t_max;
  spec.d = cfg.d;
  spec.l = std::min(cfg.l_max, 3);
  spec.c = cfg.c;
  spec.k = std::max(cfg.c, 4);
  spec.noise_sigma = 0.05;
  spec.window_t0 = 0;
  spec.window_t1 = cfg.t_max - 1;
  spec.seed = mix_seed(cfg.seed, 0x67636b);
  spec.subtypes = {QSubtype::counting};
  if (cfg.c >= 3 && spec.window_len() >= 3) spec.subtypes.push_back(QSubtype::localization);
  return spec;
}
}  // namespace detail

/// Central finite differences (64-bit, symmetric step) against the analytic
/// gradients of the full weighted objective on a small synthetic batch. Per
/// tensor, the largest-magnitude gradient coordinates are probed; any tensor
/// with an all-zero gradient is reported dead.
inline GradCheckReport run_gradcheck(const ModelConfig& cfg, int batch_n = 2,
                                     int coords_per_tensor = 4, double fd_step = 1e-5,
                                     const PathSwitches& sw = {}) {
  cfg.validate();
  GradCheckReport report;

  TaskSpec spec = detail::gradcheck_task(cfg);
  std::vector<Sample> data = make_dataset(spec, batch_n);
  std::vector<const Sample*> batch;
  for (const auto& s : data) batch.push_back(&s);

  ParameterStore ps = init_parameters(cfg, cfg.seed);
  ps.zero_grads();
  run_batch(ps, cfg, batch, sw, true);

  auto loss_value = [&]() {
    return run_batch(ps, cfg, batch, sw, false).loss.total;
  };

  std::map<std::string, GradCheckReport::Group> by_group;
  for (auto& entry : ps.entries()) {
    if (structurally_inert(entry.name)) {
      report.inert_tensors.push_back(entry.name);
      continue;
    }
    const Mat analytic = entry.grad;
    if (analytic.cwiseAbs().maxCoeff() == 0.0) {
      report.dead_tensors.push_back(entry.name);
      continue;
    }
    // probe the strongest coordinates
    std::vector<std::pair<double, std::pair<int, int>>> coords;
    for (int r = 0; r < analytic.rows(); ++r)
      for (int c = 0; c < analytic.cols(); ++c)
        coords.push_back({std::abs(analytic(r, c)), {r, c}});
    std::partial_sort(coords.begin(),
                      coords.begin() + std::min<std::size_t>(coords.size(), coords_per_tensor),
                      coords.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    const int n = static_cast<int>(std::min<std::size_t>(coords.size(), coords_per_tensor));

    auto& g = by_group[entry.group];
    g.name = entry.group;
    for (int i = 0; i < n; ++i) {
      auto [r, c] = coords[i].second;
      const double saved = entry.value(r, c);
      entry.value(r, c) = saved + fd_step;
      double up = loss_value();
      entry.value(r, c) = saved - fd_step;
      double down = loss_value();
      entry.value(r, c) = saved;
      const double fd = (up - down) / (2.0 * fd_step);
      const double a = analytic(r, c);
      if (std::abs(a) < 1e-9 && std::abs(fd) < 1e-7) continue;  // both at noise level
      const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-12});
      ++g.coords_checked;
      if (rel > g.max_rel_err) {
        g.max_rel_err = rel;
        g.worst_tensor = entry.name;
      }
    }
  }
  for (auto& [name, g] : by_group) report.groups.push_back(g);
  return report;
}

}  // namespace avm

#endif  // AVM_GRADCHECK_HPP
