#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "phonotrack/matrix.hpp"

namespace phonotrack::signal {

// Multichannel sampled signal, samples x channels.
struct TimeSeries {
  Matrix<double> data;
  double fs = 0.0;
  std::vector<std::string> channel_names;

  std::size_t n_samples() const { return data.rows(); }
  std::size_t n_channels() const { return data.cols(); }

  // Throws ValidationError when an invariant is broken (non-finite values,
  // duplicate or mismatched channel names, non-positive rate).
  void validate() const;

  TimeSeries slice(std::size_t begin, std::size_t end) const;
  std::size_t channel_index(const std::string& name) const;
};

// Four contiguous partitions over one recording: 40/10/10/40.
struct RecordingSplit {
  TimeSeries train_head;
  TimeSeries validation;
  TimeSeries test;
  TimeSeries train_tail;
  // Partition edges: [0, b1, b2, b3, n]
  std::array<std::size_t, 5> boundaries{};

  // Train head followed by train tail.
  TimeSeries train() const;
};

struct NormalizationStats {
  std::vector<double> mean;
  std::vector<double> std;
};

// One second-order section in direct form II transposed, a0 normalised to 1.
struct Biquad {
  double b0 = 1, b1 = 0, b2 = 0;
  double a1 = 0, a2 = 0;
};

// Butterworth high-pass via bilinear transform with pre-warping. Odd orders end
// with a first-order section (b2 = a2 = 0).
std::vector<Biquad> butterworth_highpass(int order, double cutoff_hz, double fs);

// Forward-backward filtering with odd-reflection padding of `pad` samples and
// steady-state initial conditions at both ends.
std::vector<double> filtfilt(std::span<const Biquad> sections, std::span<const double> x, std::size_t pad);

TimeSeries highpass_zero_phase(const TimeSeries& x, double cutoff_hz, int order);

// Rational approximation target_fs/fs = up/down with relative error <= tolerance.
struct ResampleRatio {
  long up = 1;
  long down = 1;
};
ResampleRatio rational_ratio(double fs, double target_fs, double tolerance = 1e-9, long max_factor = 4096);

// Kaiser-windowed sinc low-pass designed at the intermediate rate fs*up.
// Stopband starts at the lower of the two Nyquist frequencies.
std::vector<double> resample_filter(const ResampleRatio& r, double stopband_db = 80.0);

TimeSeries resample(const TimeSeries& x, double target_fs, double tolerance = 1e-9);

TimeSeries common_average_reference(const TimeSeries& x);

std::array<std::size_t, 5> split_boundaries(std::size_t n_samples);
RecordingSplit split_recording(const TimeSeries& x);

NormalizationStats fit_normalization(const TimeSeries& train);
TimeSeries apply_normalization(const TimeSeries& x, const NormalizationStats& stats);
TimeSeries invert_normalization(const TimeSeries& x, const NormalizationStats& stats);

// Slot for an artifact-removal stage between filtering and re-referencing.
class ArtifactRemover {
 public:
  virtual ~ArtifactRemover() = default;
  virtual std::string name() const = 0;
  virtual TimeSeries apply(const TimeSeries& x) const = 0;
};

class IdentityArtifactRemover final : public ArtifactRemover {
 public:
  std::string name() const override { return "identity"; }
  TimeSeries apply(const TimeSeries& x) const override { return x; }
};

struct PreprocessConfig {
  double highpass_hz = 0.5;
  int filter_order = 4;
  double target_fs = 64.0;
};

// High-pass -> artifact slot -> common average -> resample.
TimeSeries preprocess(const TimeSeries& raw, const PreprocessConfig& cfg, const ArtifactRemover& artifacts);

// Binary float32 + JSON sidecar persistence. `extra` keys are merged into the
// sidecar; read_timeseries returns the full sidecar through `sidecar`.
void write_timeseries(const std::filesystem::path& bin, const TimeSeries& x, const nlohmann::json& extra = {});
TimeSeries read_timeseries(const std::filesystem::path& bin, nlohmann::json* sidecar = nullptr);

}  // namespace phonotrack::signal
