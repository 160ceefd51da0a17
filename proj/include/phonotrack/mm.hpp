#pragma once

#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "phonotrack/features.hpp"
#include "phonotrack/matrix.hpp"
#include "phonotrack/nn.hpp"
#include "phonotrack/signal.hpp"

// Match-mismatch example construction and the SI / fine-tuning protocols.
namespace phonotrack::mm {

struct SegmentationConfig {
  double window_s = 5.0;
  double overlap_fraction = 0.8;
  double mismatch_gap_s = 1.0;

  void validate() const;
  nlohmann::json to_json() const;
  static SegmentationConfig from_json(const nlohmann::json& j);
};

// Segmentation in samples at a given rate.
struct Geometry {
  std::size_t window = 0;
  std::size_t hop = 0;
  std::size_t gap = 0;
  std::size_t span() const { return 2 * window + gap; }
};

// window = round(window_s*fs), hop = round((1-overlap)*window), gap = round(gap_s*fs).
Geometry geometry(const SegmentationConfig& cfg, double fs);

// Starts t = k*hop with t + 2W + gap <= n.
std::vector<std::size_t> window_starts(std::size_t n_samples, const Geometry& g);

// max(0, floor((n - 2W - gap) / hop) + 1)
std::size_t expected_count(std::size_t n_samples, const Geometry& g);

enum class Split { train, validation, test };
std::string_view to_string(Split s);

struct Provenance {
  std::string recording_id;
  std::size_t start_sample = 0;  // recording-absolute start of the matched window
  double fs = 0.0;
  Split split = Split::train;
  std::size_t partition_begin = 0;  // recording-absolute extent of the source partition
  std::size_t partition_end = 0;
};

// One (EEG, speech A, speech B, label) tuple. Data are shared with the other
// examples of the same partition; offsets are partition-relative.
struct Example {
  std::shared_ptr<const Matrix<float>> eeg;
  std::shared_ptr<const Matrix<float>> speech;
  std::size_t window = 0;
  std::size_t matched_offset = 0;
  std::size_t mismatched_offset = 0;
  nn::Label label = nn::Label::A;
  bool identical_candidates = false;
  Provenance provenance;

  std::size_t offset_a() const { return label == nn::Label::A ? matched_offset : mismatched_offset; }
  std::size_t offset_b() const { return label == nn::Label::A ? mismatched_offset : matched_offset; }
  nn::Sample<float> sample() const;
  // Candidates exchanged and label flipped; the same underlying decision.
  Example swapped() const;
};

// Segments one contiguous partition. Labels alternate A,B,A,... by emission
// index starting from `label_offset`.
std::vector<Example> extract_examples(const signal::TimeSeries& eeg, const features::FeatureMatrix& speech,
                                      const SegmentationConfig& cfg, const std::string& recording_id = "",
                                      Split split = Split::train, std::size_t label_offset = 0);

struct SplitExamples {
  std::vector<Example> train;
  std::vector<Example> validation;
  std::vector<Example> test;
};

// Splits the recording 40/10/10/40, normalizes EEG with training statistics,
// and segments each partition on its own so no window straddles a boundary.
SplitExamples extract_split_examples(const signal::TimeSeries& eeg, const features::FeatureMatrix& speech,
                                     const SegmentationConfig& cfg, const std::string& recording_id);

std::vector<nn::Sample<float>> samples_of(std::span<const Example> examples);

// The model shape implied by the data: channels, feature dims and window.
nn::ModelConfig model_config_for(const nn::ModelConfig& base, std::size_t eeg_channels, std::size_t feature_dims,
                                 std::size_t window_samples);

nn::TrainResult train_subject_independent(const std::map<std::string, SplitExamples>& by_subject,
                                          const nn::ModelConfig& model_cfg, const nn::TrainConfig& train_cfg,
                                          std::uint64_t init_seed);

nn::TrainResult finetune(const nn::ModelParams<float>& params, const SplitExamples& subject,
                         const nn::TrainConfig& train_cfg);

std::vector<double> predict(const nn::ModelParams<float>& params, std::span<const Example> examples);

// Slot A iff p(A) > 0.5; exactly 0.5 predicts B.
nn::Label predicted_label(double p_a);
double accuracy_of(std::span<const double> p_a, std::span<const Example> examples);
double evaluate_accuracy(const nn::ModelParams<float>& params, std::span<const Example> examples);

// One JSON object per line: recording_id, t_start, label, split.
std::string example_manifest(std::span<const Example> examples);

struct AccuracyRow {
  std::string subject;
  std::string scheme;
  std::string model_stage;  // SI or finetuned
  double window_s = 0.0;
  double accuracy = 0.0;
  std::size_t n_examples = 0;
};

std::string accuracy_csv(std::span<const AccuracyRow> rows);

}  // namespace phonotrack::mm
