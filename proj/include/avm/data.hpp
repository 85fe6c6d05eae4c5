#ifndef AVM_DATA_HPP
#define AVM_DATA_HPP

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "avm/common.hpp"
#include "avm/types.hpp"

namespace avm {

/// Planted-signal AVQA task: discrete codebook "events" inserted into one
/// modality's timeline determine the answer; the other modality carries
/// independent decoy events so the question's modality cue is load-bearing.
struct TaskSpec {
  int t = 16;
  int d = 32;           // native width of every generated stream
  int l = 3;            // question tokens (>= 2: modality cue + subtype cue)
  int c = 5;            // answer vocabulary
  int k = 8;            // codebook size (event types), >= c
  double noise_sigma = 0.0;
  int window_t0 = 0;    // event placement bounds, inclusive
  int window_t1 = 15;
  std::uint64_t seed = 0;
  std::vector<QSubtype> subtypes = {QSubtype::counting, QSubtype::existence,
                                    QSubtype::localization};

  int window_len() const { return window_t1 - window_t0 + 1; }

  void validate() const {
    if (t < 1 || d < 1 || c < 2 || k < 1) throw ConfigError("task spec: bad dimensions");
    if (k < c) throw ConfigError("task spec: codebook size K must be >= C");
    if (l < 2) throw ConfigError("task spec: need L >= 2 for the cue tokens");
    if (noise_sigma < 0) throw ConfigError("task spec: noise_sigma must be >= 0");
    if (window_t0 < 0 || window_t0 > window_t1 || window_t1 >= t)
      throw ConfigError("task spec: window must satisfy 0 <= t0 <= t1 < T");
    if (subtypes.empty()) throw ConfigError("task spec: no question subtypes");
    for (QSubtype q : subtypes) {
      if (q == QSubtype::counting && c - 1 > window_len())
        throw ConfigError("task spec: C-1 events cannot fit the window (counting)");
      if (q == QSubtype::localization && (c < 3 || window_len() < 3))
        throw ConfigError("task spec: localization needs C >= 3 and a window of >= 3 steps");
    }
  }
};

/// Frozen random vectors shared by every sample of a task: K event vectors,
/// a null (background) vector, and the modality/subtype cue vocabulary.
struct Codebook {
  Mat events;        // K x D
  Mat null_vec;      // 1 x D
  Mat cue_modality;  // 2 x D, row order (audio, visual)
  Mat cue_subtype;   // 3 x D, row order (counting, existence, localization)
};

namespace detail {
inline Mat round_f32(Mat m) {
  for (int c = 0; c < m.cols(); ++c)
    for (int r = 0; r < m.rows(); ++r) m(r, c) = static_cast<double>(static_cast<float>(m(r, c)));
  return m;
}
}  // namespace detail

inline Codebook build_codebook(const TaskSpec& spec) {
  Rng rng(mix_seed(spec.seed, 0x636f6465626bULL));  // "codebk"
  const double s = 1.0 / std::sqrt(double(spec.d));
  Codebook cb;
  cb.events = detail::round_f32(randn(rng, spec.k, spec.d, s));
  cb.null_vec = detail::round_f32(randn(rng, 1, spec.d, s));
  cb.cue_modality = detail::round_f32(randn(rng, 2, spec.d, s));
  cb.cue_subtype = detail::round_f32(randn(rng, 3, spec.d, s));
  return cb;
}

/// Everything the label depends on; the answer rule is a pure function of
/// this and never consults the neural model.
struct PlantedConfig {
  QSubtype subtype = QSubtype::counting;
  std::vector<int> event_times;  // absolute, sorted ascending
  int t = 0;
  int window_t0 = 0;
  int window_t1 = 0;
};

inline int oracle_answer(const PlantedConfig& p) {
  switch (p.subtype) {
    case QSubtype::counting:
      return static_cast<int>(p.event_times.size());
    case QSubtype::existence:
      return p.event_times.empty() ? 0 : 1;
    case QSubtype::localization: {
      if (p.event_times.empty()) throw ConfigError("oracle: localization without events");
      int w = p.window_t1 - p.window_t0 + 1;
      int off = p.event_times.front() - p.window_t0;
      return std::min(2, 3 * off / w);
    }
  }
  throw ConfigError("oracle: unknown subtype");
}

namespace detail {

inline std::vector<int> distinct_offsets(Rng& rng, int window, int n) {
  std::vector<int> pool(window);
  for (int i = 0; i < window; ++i) pool[i] = i;
  for (int i = 0; i < n; ++i) {
    int j = i + static_cast<int>(rng() % (pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(n);
  std::sort(pool.begin(), pool.end());
  return pool;
}

inline Mat planted_matrix(Rng& rng, const TaskSpec& spec, const Codebook& cb,
                          const std::vector<int>& times, const std::vector<int>& kinds) {
  Mat m(spec.t, spec.d);
  for (int r = 0; r < spec.t; ++r) m.row(r) = cb.null_vec.row(0);
  for (std::size_t i = 0; i < times.size(); ++i)
    m.row(times[i]) = cb.events.row(kinds[i]);
  if (spec.noise_sigma > 0) m += randn(rng, spec.t, spec.d, spec.noise_sigma);
  return round_f32(m);
}

}  // namespace detail

/// Deterministic sample construction from (spec, index). Target modality and
/// subtype cycle with the index and labels are stratified per subtype stream,
/// so any contiguous index range is balanced; placement, event kinds, decoys
/// and noise come from an index-keyed stream.
inline Sample gen_sample(const TaskSpec& spec, int index) {
  spec.validate();
  const Codebook cb = build_codebook(spec);
  const int ns = static_cast<int>(spec.subtypes.size());
  const Modality m = (index % 2 == 0) ? Modality::audio : Modality::visual;
  const QSubtype q = spec.subtypes[(index / 2) % ns];
  const int counter = index / (2 * ns);

  Rng rng(mix_seed(spec.seed, splitmix64(static_cast<std::uint64_t>(index)) ^ 0x73616d706cULL));
  const int w = spec.window_len();

  PlantedConfig planted;
  planted.subtype = q;
  planted.t = spec.t;
  planted.window_t0 = spec.window_t0;
  planted.window_t1 = spec.window_t1;

  std::vector<int> offsets;
  switch (q) {
    case QSubtype::counting:
      offsets = detail::distinct_offsets(rng, w, counter % spec.c);
      break;
    case QSubtype::existence: {
      if (counter % 2 == 1) {
        int hi = std::min(spec.c - 1, w);
        offsets = detail::distinct_offsets(rng, w, 1 + static_cast<int>(rng() % hi));
      }
      break;
    }
    case QSubtype::localization: {
      // exactly one event: keeps the label a pure function of position, with
      // no residual correlation between event count and window third
      int third = counter % 3;
      std::vector<int> candidates;
      for (int o = 0; o < w; ++o)
        if (std::min(2, 3 * o / w) == third) candidates.push_back(o);
      offsets.push_back(candidates[rng() % candidates.size()]);
      break;
    }
  }

  for (int& o : offsets) o += spec.window_t0;
  planted.event_times = offsets;

  std::vector<int> kinds(offsets.size());
  for (auto& kind : kinds) kind = static_cast<int>(rng() % spec.k);
  Mat target = detail::planted_matrix(rng, spec, cb, offsets, kinds);

  // independent decoys in the other modality, same construction
  Rng decoy_rng(mix_seed(spec.seed,
                         splitmix64(static_cast<std::uint64_t>(index)) ^ 0x6465636f79ULL));
  int n_decoy = static_cast<int>(decoy_rng() % spec.c);
  std::vector<int> decoy_offsets = detail::distinct_offsets(decoy_rng, w, n_decoy);
  for (int& o : decoy_offsets) o += spec.window_t0;
  std::vector<int> decoy_kinds(decoy_offsets.size());
  for (auto& kind : decoy_kinds) kind = static_cast<int>(decoy_rng() % spec.k);
  Mat decoy = detail::planted_matrix(decoy_rng, spec, cb, decoy_offsets, decoy_kinds);

  Sample s;
  s.audio.modality = Modality::audio;
  s.visual.modality = Modality::visual;
  s.audio.data = (m == Modality::audio) ? target : decoy;
  s.visual.data = (m == Modality::visual) ? target : decoy;

  Mat word = Mat::Zero(spec.l, spec.d);
  word.row(0) = cb.cue_modality.row(m == Modality::audio ? 0 : 1);
  word.row(1) = cb.cue_subtype.row(static_cast<int>(q));
  s.question.word = word;
  s.question.sentence = detail::round_f32(word.row(0) + word.row(1));

  s.answer = oracle_answer(planted);
  s.qtype = (m == Modality::audio) ? QType::a_qa : QType::v_qa;
  s.subtype = q;
  char buf[16];
  std::snprintf(buf, sizeof(buf), "s%06d", index);
  s.id = buf;
  return s;
}

inline std::vector<Sample> make_dataset(const TaskSpec& spec, int n, int start_index = 0) {
  std::vector<Sample> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) out.push_back(gen_sample(spec, start_index + i));
  return out;
}

inline Json to_json(const TaskSpec& s) {
  Json j;
  j["t"] = s.t;
  j["d"] = s.d;
  j["l"] = s.l;
  j["c"] = s.c;
  j["k"] = s.k;
  j["noise_sigma"] = s.noise_sigma;
  j["window_t0"] = s.window_t0;
  j["window_t1"] = s.window_t1;
  j["seed"] = s.seed;
  Json arr = Json::array();
  for (QSubtype q : s.subtypes) arr.push_back(to_string(q));
  j["subtypes"] = arr;
  return j;
}

inline TaskSpec task_spec_from_json(const Json& j) {
  static const char* known[] = {"t", "d", "l", "c", "k", "noise_sigma",
                                "window_t0", "window_t1", "seed", "subtypes"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known)
      if (it.key() == k) { ok = true; break; }
    if (!ok) throw ConfigError("unknown task spec key: " + it.key());
  }
  TaskSpec s;
  if (j.contains("t")) s.t = j.at("t").get<int>();
  if (j.contains("d")) s.d = j.at("d").get<int>();
  if (j.contains("l")) s.l = j.at("l").get<int>();
  if (j.contains("c")) s.c = j.at("c").get<int>();
  if (j.contains("k")) s.k = j.at("k").get<int>();
  if (j.contains("noise_sigma")) s.noise_sigma = j.at("noise_sigma").get<double>();
  if (j.contains("window_t0")) s.window_t0 = j.at("window_t0").get<int>();
  s.window_t1 = j.contains("window_t1") ? j.at("window_t1").get<int>() : s.t - 1;
  if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("subtypes")) {
    s.subtypes.clear();
    for (const auto& e : j.at("subtypes")) s.subtypes.push_back(subtype_from_string(e.get<std::string>()));
  }
  s.validate();
  return s;
}

inline TaskSpec load_task_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open task spec: " + path);
  Json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw FormatError("task spec parse error in " + path + ": " + e.what());
  }
  return task_spec_from_json(j);
}

inline std::uint64_t dataset_hash(const std::vector<Sample>& samples) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& s : samples) {
    h = hash_mat(s.audio.data, h);
    h = hash_mat(s.visual.data, h);
    h = hash_mat(s.question.word, h);
    h = hash_mat(s.question.sentence, h);
    h = hash_bytes(&s.answer, sizeof(s.answer), h);
  }
  return h;
}

}  // namespace avm

#endif  // AVM_DATA_HPP
