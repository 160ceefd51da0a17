#include "phonotrack/mm.hpp"

#include <cmath>
#include <cstring>

#include "phonotrack/error.hpp"
#include "phonotrack/io.hpp"

namespace phonotrack::mm {

void SegmentationConfig::validate() const {
  if (!(window_s > 0.0) || !std::isfinite(window_s))
    throw ValidationError("SegmentationConfig.window_s must be > 0");
  if (!(overlap_fraction >= 0.0 && overlap_fraction < 1.0))
    throw ValidationError("SegmentationConfig.overlap_fraction must be in [0, 1)");
  if (!(mismatch_gap_s >= 0.0) || !std::isfinite(mismatch_gap_s))
    throw ValidationError("SegmentationConfig.mismatch_gap_s must be >= 0");
}

nlohmann::json SegmentationConfig::to_json() const {
  return {{"window_s", window_s}, {"overlap_fraction", overlap_fraction}, {"mismatch_gap_s", mismatch_gap_s}};
}

SegmentationConfig SegmentationConfig::from_json(const nlohmann::json& j) {
  SegmentationConfig c;
  c.window_s = j.value("window_s", c.window_s);
  c.overlap_fraction = j.value("overlap_fraction", c.overlap_fraction);
  c.mismatch_gap_s = j.value("mismatch_gap_s", c.mismatch_gap_s);
  return c;
}

Geometry geometry(const SegmentationConfig& cfg, double fs) {
  cfg.validate();
  if (!(fs > 0.0)) throw ValidationError("sampling rate must be > 0");
  Geometry g;
  g.window = static_cast<std::size_t>(std::llround(cfg.window_s * fs));
  g.hop = static_cast<std::size_t>(std::llround((1.0 - cfg.overlap_fraction) * static_cast<double>(g.window)));
  g.gap = static_cast<std::size_t>(std::llround(cfg.mismatch_gap_s * fs));
  if (g.window == 0) throw ValidationError("SegmentationConfig.window_s is shorter than one sample");
  if (g.hop == 0) throw ValidationError("SegmentationConfig.overlap_fraction leaves a hop of zero samples");
  return g;
}

std::size_t expected_count(std::size_t n, const Geometry& g) {
  if (n < g.span()) return 0;
  return (n - g.span()) / g.hop + 1;
}

std::vector<std::size_t> window_starts(std::size_t n, const Geometry& g) {
  std::vector<std::size_t> out;
  for (std::size_t t = 0; t + g.span() <= n; t += g.hop) out.push_back(t);
  return out;
}

std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
  }
  return "?";
}

nn::Sample<float> Example::sample() const {
  return {MatrixView<float>::of(*eeg, matched_offset, window), MatrixView<float>::of(*speech, offset_a(), window),
          MatrixView<float>::of(*speech, offset_b(), window), label};
}

Example Example::swapped() const {
  Example e = *this;
  e.label = label == nn::Label::A ? nn::Label::B : nn::Label::A;
  return e;
}

namespace {

std::shared_ptr<const Matrix<float>> to_float(const Matrix<double>& m) {
  return std::make_shared<const Matrix<float>>(m.rows(), m.cols(), std::vector<float>(m.values().begin(), m.values().end()));
}

bool same_rows(const Matrix<float>& m, std::size_t a, std::size_t b, std::size_t n) {
  return std::memcmp(m.data() + a * m.cols(), m.data() + b * m.cols(), n * m.cols() * sizeof(float)) == 0;
}

std::vector<Example> segment(std::shared_ptr<const Matrix<float>> eeg, std::shared_ptr<const Matrix<float>> speech,
                             const Geometry& g, Provenance base, std::size_t label_offset) {
  std::vector<Example> out;
  std::size_t k = label_offset;
  for (std::size_t t : window_starts(eeg->rows(), g)) {
    Example e;
    e.eeg = eeg;
    e.speech = speech;
    e.window = g.window;
    e.matched_offset = t;
    e.mismatched_offset = t + g.window + g.gap;
    e.label = k++ % 2 == 0 ? nn::Label::A : nn::Label::B;
    e.identical_candidates = same_rows(*speech, e.matched_offset, e.mismatched_offset, g.window);
    e.provenance = base;
    e.provenance.start_sample = base.partition_begin + t;
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace

std::vector<Example> extract_examples(const signal::TimeSeries& eeg, const features::FeatureMatrix& speech,
                                      const SegmentationConfig& cfg, const std::string& recording_id, Split split,
                                      std::size_t label_offset) {
  if (eeg.n_samples() != speech.n_samples())
    throw ValidationError("EEG and speech features differ in length (" + std::to_string(eeg.n_samples()) + " vs " +
                          std::to_string(speech.n_samples()) + " samples)");
  if (std::abs(eeg.fs - speech.fs) > 1e-9 * eeg.fs) throw ValidationError("EEG and speech features differ in sampling rate");
  const Geometry g = geometry(cfg, eeg.fs);
  if (eeg.n_samples() < g.span())
    throw ValidationError("recording " + (recording_id.empty() ? std::string("<unnamed>") : recording_id) + " has " +
                          std::to_string(eeg.n_samples()) + " samples, fewer than window + gap + window = " +
                          std::to_string(g.span()));
  Provenance base{recording_id, 0, eeg.fs, split, 0, eeg.n_samples()};
  return segment(to_float(eeg.data), to_float(speech.data), g, base, label_offset);
}

SplitExamples extract_split_examples(const signal::TimeSeries& eeg, const features::FeatureMatrix& speech,
                                     const SegmentationConfig& cfg, const std::string& recording_id) {
  if (eeg.n_samples() != speech.n_samples())
    throw ValidationError(recording_id + ": EEG and speech features differ in length");
  if (std::abs(eeg.fs - speech.fs) > 1e-9 * eeg.fs) throw ValidationError(recording_id + ": sampling rates differ");
  const Geometry g = geometry(cfg, eeg.fs);
  const auto parts = signal::split_recording(eeg);
  const auto& b = parts.boundaries;
  const auto stats = signal::fit_normalization(parts.train());
  const auto norm = signal::apply_normalization(eeg, stats);

  SplitExamples out;
  auto part = [&](std::size_t lo, std::size_t hi, Split split, std::size_t label_offset) {
    Provenance base{recording_id, 0, eeg.fs, split, lo, hi};
    return segment(to_float(norm.data.slice_rows(lo, hi)), to_float(speech.data.slice_rows(lo, hi)), g, base,
                   label_offset);
  };
  out.train = part(b[0], b[1], Split::train, 0);
  auto tail = part(b[3], b[4], Split::train, out.train.size());
  out.train.insert(out.train.end(), tail.begin(), tail.end());
  out.validation = part(b[1], b[2], Split::validation, 0);
  out.test = part(b[2], b[3], Split::test, 0);
  return out;
}

std::vector<nn::Sample<float>> samples_of(std::span<const Example> examples) {
  std::vector<nn::Sample<float>> out;
  out.reserve(examples.size());
  for (const auto& e : examples) out.push_back(e.sample());
  return out;
}

nn::ModelConfig model_config_for(const nn::ModelConfig& base, std::size_t eeg_channels, std::size_t feature_dims,
                                 std::size_t window_samples) {
  nn::ModelConfig c = base;
  c.eeg_channels = eeg_channels;
  c.feature_dims = feature_dims;
  c.window_samples = window_samples;
  c.validate();
  return c;
}

namespace {

void check_shapes(const nn::ModelConfig& cfg, std::span<const Example> examples, const char* what) {
  for (const auto& e : examples)
    if (e.window != cfg.window_samples || e.eeg->cols() != cfg.eeg_channels || e.speech->cols() != cfg.feature_dims)
      throw ValidationError(std::string(what) + " example from " + e.provenance.recording_id +
                            " does not match the model shape (window " + std::to_string(e.window) + ", channels " +
                            std::to_string(e.eeg->cols()) + ", dims " + std::to_string(e.speech->cols()) + ")");
}

}  // namespace

nn::TrainResult train_subject_independent(const std::map<std::string, SplitExamples>& by_subject,
                                          const nn::ModelConfig& model_cfg, const nn::TrainConfig& train_cfg,
                                          std::uint64_t init_seed) {
  std::vector<Example> train, val;
  for (const auto& [subject, ex] : by_subject) {
    train.insert(train.end(), ex.train.begin(), ex.train.end());
    val.insert(val.end(), ex.validation.begin(), ex.validation.end());
  }
  if (train.empty()) throw ValidationError("subject-independent training set is empty");
  if (val.empty()) throw ValidationError("subject-independent validation set is empty");
  check_shapes(model_cfg, train, "training");
  check_shapes(model_cfg, val, "validation");
  const auto init = nn::init_params<float>(model_cfg, init_seed);
  const auto ts = samples_of(train);
  const auto vs = samples_of(val);
  return nn::train_loop(init, ts, vs, train_cfg);
}

nn::TrainResult finetune(const nn::ModelParams<float>& params, const SplitExamples& subject,
                         const nn::TrainConfig& train_cfg) {
  if (subject.train.empty()) throw ValidationError("fine-tuning training set is empty");
  if (subject.validation.empty()) throw ValidationError("fine-tuning validation set is empty");
  params.cfg.validate();
  if (params.flat.size() != params.cfg.parameter_count()) throw ValidationError("parameters do not match the model configuration");
  check_shapes(params.cfg, subject.train, "fine-tuning");
  const auto ts = samples_of(subject.train);
  const auto vs = samples_of(subject.validation);
  return nn::train_loop(params, ts, vs, train_cfg, /*keep_initial=*/true);
}

std::vector<double> predict(const nn::ModelParams<float>& params, std::span<const Example> examples) {
  std::vector<double> out;
  out.reserve(examples.size());
  for (const auto& e : examples) {
    const auto s = e.sample();
    out.push_back(static_cast<double>(nn::forward(params, s.eeg, s.speech_a, s.speech_b)));
  }
  return out;
}

nn::Label predicted_label(double p_a) { return p_a > 0.5 ? nn::Label::A : nn::Label::B; }

double accuracy_of(std::span<const double> p_a, std::span<const Example> examples) {
  if (examples.empty()) throw ValidationError("accuracy of an empty example set");
  if (p_a.size() != examples.size()) throw ValidationError("prediction count differs from example count");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < examples.size(); ++i) correct += predicted_label(p_a[i]) == examples[i].label;
  return static_cast<double>(correct) / static_cast<double>(examples.size());
}

double evaluate_accuracy(const nn::ModelParams<float>& params, std::span<const Example> examples) {
  const auto p = predict(params, examples);
  return accuracy_of(p, examples);
}

std::string example_manifest(std::span<const Example> examples) {
  std::string out;
  for (const auto& e : examples) {
    nlohmann::json j{{"recording_id", e.provenance.recording_id},
                     {"t_start", static_cast<double>(e.provenance.start_sample) / e.provenance.fs},
                     {"label", e.label == nn::Label::A ? "A" : "B"},
                     {"split", to_string(e.provenance.split)}};
    if (e.identical_candidates) j["identical_candidates"] = true;
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::string accuracy_csv(std::span<const AccuracyRow> rows) {
  std::string out = "subject,scheme,model_stage,window_s,accuracy,n_examples\n";
  for (const auto& r : rows)
    out += r.subject + ',' + r.scheme + ',' + r.model_stage + ',' + io::fmt_double(r.window_s) + ',' +
           io::fmt_double(r.accuracy) + ',' + std::to_string(r.n_examples) + '\n';
  return out;
}

}  // namespace phonotrack::mm
