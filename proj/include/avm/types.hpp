#ifndef AVM_TYPES_HPP
#define AVM_TYPES_HPP

#include <string>
#include <vector>

#include "avm/common.hpp"
#include "avm/config.hpp"

namespace avm {

enum class Modality { audio, visual };

inline const char* to_string(Modality m) { return m == Modality::audio ? "audio" : "visual"; }

/// Question scenario tag: which modality (or both) the question targets.
enum class QType { a_qa, v_qa, av_qa };

inline const char* to_string(QType q) {
  switch (q) {
    case QType::a_qa: return "A-QA";
    case QType::v_qa: return "V-QA";
    default: return "AV-QA";
  }
}

inline QType qtype_from_string(const std::string& s) {
  if (s == "A-QA") return QType::a_qa;
  if (s == "V-QA") return QType::v_qa;
  if (s == "AV-QA") return QType::av_qa;
  throw FormatError("unknown qtype tag: " + s);
}

enum class QSubtype { counting, existence, localization };

inline const char* to_string(QSubtype q) {
  switch (q) {
    case QSubtype::counting: return "counting";
    case QSubtype::existence: return "existence";
    default: return "localization";
  }
}

inline QSubtype subtype_from_string(const std::string& s) {
  if (s == "counting") return QSubtype::counting;
  if (s == "existence") return QSubtype::existence;
  if (s == "localization") return QSubtype::localization;
  throw FormatError("unknown question subtype: " + s);
}

/// One modality's per-segment features, T rows of native width.
struct FeatureSequence {
  Modality modality = Modality::audio;
  Mat data;  // T x width

  int t() const { return static_cast<int>(data.rows()); }
  int width() const { return static_cast<int>(data.cols()); }

  void validate(int t_max) const {
    if (t() < 1 || t() > t_max) throw ShapeError("feature sequence length out of [1, T_max]");
    require_finite(data, "feature sequence");
  }
};

struct QuestionFeatures {
  Mat word;      // L x width
  Mat sentence;  // 1 x width

  int l() const { return static_cast<int>(word.rows()); }

  void validate(int l_max) const {
    if (l() < 1 || l() > l_max) throw ShapeError("question token count out of [1, L_max]");
    if (sentence.rows() != 1 || sentence.cols() != word.cols())
      throw ShapeError("sentence feature must be 1 x word-width");
    require_finite(word, "question word features");
    require_finite(sentence, "question sentence feature");
  }
};

/// One training/evaluation item. Audio and visual share the segment count;
/// the answer index doubles as the preference label.
struct Sample {
  FeatureSequence audio;
  FeatureSequence visual;
  QuestionFeatures question;
  int answer = 0;
  QType qtype = QType::av_qa;
  QSubtype subtype = QSubtype::counting;
  std::string id;

  int t() const { return audio.t(); }

  void validate(const ModelConfig& cfg) const {
    audio.validate(cfg.t_max);
    visual.validate(cfg.t_max);
    if (audio.t() != visual.t()) throw ShapeError("audio/visual segment counts differ");
    question.validate(cfg.l_max);
    if (answer < 0 || answer >= cfg.c) throw ShapeError("answer index out of range");
    if (audio.width() != cfg.audio_in()) throw ShapeError("audio width != configured input width");
    if (visual.width() != cfg.visual_in()) throw ShapeError("visual width != configured input width");
    if (question.word.cols() != cfg.text_in()) throw ShapeError("text width != configured input width");
  }
};

/// The learnable CLS template banks carried through the time scan.
struct TemplateState {
  Mat a_cls;  // M x D
  Mat v_cls;  // M x D
  int step = -1;  // -1 = initial learnable state
};

/// Final scan outputs, one M x D bank per modality.
struct FocusFeatures {
  Mat audio;
  Mat visual;
};

struct PreferenceFeatures {
  Mat audio;   // T x D
  Mat visual;  // T x D
};

struct FusedFeature {
  Mat value;  // 1 x D
};

/// Optional per-forward capture of intermediates, filled only when tracing.
struct TraceRecord {
  bool enabled = false;

  // per-step template snapshots, index k = 0..T-1
  std::vector<Mat> audio_templates;
  std::vector<Mat> visual_templates;
  // per-step focus-sampling intermediates (last entries = step T-1)
  std::vector<Mat> a_tp1, a_tp2, v_tp1, v_tp2;

  Mat f_c;
  Mat o_a_l, o_v_l;
  Mat o_a_g, o_v_g;

  // preference-path cross-attention over question words, head-averaged, T x L
  Mat word_attn_audio;
  Mat word_attn_visual;
};

struct LossBreakdown {
  double l_qa = 0, l_vp = 0, l_ap = 0, l_c = 0, total = 0;
};

struct AnswerDistribution {
  Eigen::RowVectorXd probs;

  void validate() const {
    if ((probs.array() < 0).any()) throw NumericError("negative probability");
    if (std::abs(probs.sum() - 1.0) > 1e-6) throw NumericError("probabilities do not sum to 1");
  }
};

}  // namespace avm

#endif  // AVM_TYPES_HPP
