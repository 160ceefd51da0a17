#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "phonotrack/matrix.hpp"

// Dual-path match-mismatch model.
//
//   EEG    [W x C] -> conv over (all channels x T samples), stride S -> tanh -> dense -> e_t   (frames x U)
//   speech [W x D] -> conv over (T samples), stride S -> tanh -> LSTM(U)             -> h_t   (frames x U)
//   sim_t = cos(e_t, h_t)                                   per frame, for both candidates
//   score = w2 . tanh(W1 sim + b1)                          shared head
//   p(A)  = softmax(score_A, score_B)_A = sigmoid(score_A - score_B)
//
// The speech path and the head are shared between candidates, so swapping the
// candidates maps p to 1 - p for every parameter setting.

namespace phonotrack::nn {

struct ModelConfig {
  std::size_t eeg_channels = 64;
  std::size_t feature_dims = 3;
  std::size_t window_samples = 320;
  std::size_t time_kernel = 9;
  std::size_t time_stride = 3;
  std::size_t eeg_filters = 64;
  std::size_t speech_filters = 48;
  std::size_t lstm_units = 48;
  std::size_t head_hidden = 320;

  // floor((window_samples - time_kernel) / time_stride) + 1
  std::size_t frames() const;
  std::size_t parameter_count() const;
  void validate() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  bool operator==(const ModelConfig&) const = default;
};

struct TensorInfo {
  std::string name;   // e.g. "lstm.w"
  std::string group;  // eeg_conv, eeg_dense, speech_conv, lstm, head
  std::size_t offset = 0;
  std::size_t size = 0;
};

std::vector<TensorInfo> tensor_layout(const ModelConfig& cfg);

// All learnable weights in one flat vector; tensors are contiguous slices.
template <class T>
struct ModelParams {
  ModelConfig cfg;
  std::vector<T> flat;

  std::span<T> tensor(const std::string& name);
  std::span<const T> tensor(const std::string& name) const;

  template <class U>
  ModelParams<U> cast() const {
    return ModelParams<U>{cfg, std::vector<U>(flat.begin(), flat.end())};
  }
};

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases except the LSTM
// forget gate (1), and a zero output layer so a fresh model predicts 0.5.
template <class T>
ModelParams<T> init_params(const ModelConfig& cfg, std::uint64_t seed);

enum class Label { A = 0, B = 1 };

template <class T>
struct Sample {
  MatrixView<T> eeg;
  MatrixView<T> speech_a;
  MatrixView<T> speech_b;
  Label label = Label::A;
};

// Per-frame cosine similarity; rows whose norm product is ~0 give 0.
template <class T>
std::vector<T> cosine_per_frame(MatrixView<T> x, MatrixView<T> y);

// LSTM over the rows of x with gate rows ordered input, forget, cell, output.
// w is (4U) x (K + U) acting on [x_t ; h_{t-1}], b has 4U entries.
template <class T>
Matrix<T> lstm_forward(std::span<const T> w, std::span<const T> b, MatrixView<T> x, std::size_t units);

// p(candidate A is the matched one).
template <class T>
T forward(const ModelParams<T>& params, MatrixView<T> eeg, MatrixView<T> speech_a, MatrixView<T> speech_b);

inline constexpr double kProbabilityClamp = 1e-7;

// Binary cross-entropy with p clamped to [1e-7, 1 - 1e-7].
double loss(double p_a, Label label);

template <class T>
struct Gradient {
  double loss = 0.0;       // mean batch loss
  std::vector<T> grad;     // d(mean loss)/d(flat params)
};

// Exact gradient of the mean batch loss. Throws RuntimeError naming the
// tensor when a gradient is not finite.
template <class T>
Gradient<T> backward(const ModelParams<T>& params, std::span<const Sample<T>> batch);

template <class T>
double mean_loss(const ModelParams<T>& params, std::span<const Sample<T>> batch);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <class T>
struct AdamState {
  std::vector<T> m;
  std::vector<T> v;
  long step = 0;
};

template <class T>
void adam_step(std::span<T> params, std::span<const T> grad, AdamState<T>& state, const AdamConfig& cfg);

struct TrainConfig {
  int max_epochs = 30;
  int patience = 5;
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j, const TrainConfig& defaults);
  static TrainConfig from_json(const nlohmann::json& j);
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;  // 0 = the initial parameters
  double best_val_loss = 0.0;
  bool stopped_early = false;
};

// Early-stopping driver. Runs epochs 1..max_epochs and stops once `patience`
// consecutive epochs fail to improve on the best validation loss. When
// `initial_val_loss` is given, the starting point competes as epoch 0.
TrainHistory run_early_stopping(int max_epochs, int patience, std::optional<double> initial_val_loss,
                                const std::function<EpochRecord(int epoch)>& run_epoch,
                                const std::function<void(int epoch)>& on_new_best);

struct TrainResult {
  ModelParams<float> params;  // best checkpoint
  TrainHistory history;
};

// Mini-batch ADAM with per-epoch shuffling (seeded) and early stopping on the
// validation loss. `keep_initial` lets the starting parameters win if no epoch
// improves on them (used when fine-tuning).
TrainResult train_loop(const ModelParams<float>& init, std::span<const Sample<float>> train,
                       std::span<const Sample<float>> val, const TrainConfig& cfg, bool keep_initial = false);

std::string history_csv(const TrainHistory& h);

struct CheckpointMeta {
  int epoch = 0;
  double val_loss = 0.0;
  std::uint64_t seed = 0;
};

void save_checkpoint(const std::filesystem::path& bin, const ModelParams<float>& params, const CheckpointMeta& meta);
ModelParams<float> load_checkpoint(const std::filesystem::path& bin, CheckpointMeta* meta = nullptr);

struct GradCheckResult {
  std::string group;
  std::size_t checked = 0;
  // max |analytic - numeric| / max |numeric| over the checked coordinates
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

// Central finite differences on the mean batch loss. Checks every coordinate
// when `coords_per_tensor` is 0, otherwise a seeded sample of that many per tensor.
std::vector<GradCheckResult> gradient_check(const ModelParams<double>& params, std::span<const Sample<double>> batch,
                                            double eps = 1e-4, std::size_t coords_per_tensor = 0,
                                            std::uint64_t seed = 0);

}  // namespace phonotrack::nn
