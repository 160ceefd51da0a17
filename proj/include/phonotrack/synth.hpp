#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "phonotrack/features.hpp"
#include "phonotrack/matrix.hpp"
#include "phonotrack/signal.hpp"

// Synthetic subjects with known response kernels, used as the oracle for the
// rest of the toolkit.
namespace phonotrack::synth {

// Gaussian bump; the sign of the amplitude gives the polarity.
struct Bump {
  double latency_ms = 0.0;
  double width_ms = 20.0;
  double amplitude = 1.0;
};

struct SynthConfig {
  double duration_s = 600.0;
  double fs = 64.0;
  double window_ms = 400.0;
  // Representation driving the EEG; VAD is always prepended.
  features::Scheme scheme = features::Scheme::vc;
  // Kernels keyed by feature dimension name; "default" covers the rest.
  std::map<std::string, std::vector<Bump>> kernels = default_kernels();
  std::string mixing = "random";  // identity | random | explicit
  Matrix<double> mixing_matrix;   // dims x channels, used when mixing == "explicit"
  double mixing_perturbation = 0.25;
  std::size_t n_channels = 64;
  std::string noise = "white";  // white | pink
  std::optional<double> snr_db = 0.0;  // nullopt disables noise

  double phone_mean_s = 0.08;
  double phone_sd_s = 0.03;
  double phone_min_s = 0.03;
  double speech_run_mean_s = 2.5;
  double silence_mean_s = 0.4;
  double silence_min_s = 0.1;

  static std::map<std::string, std::vector<Bump>> default_kernels();
  void validate() const;
  nlohmann::json to_json() const;
  static SynthConfig from_json(const nlohmann::json& j);
};

// Alternating silence / speech runs made of CV-like syllables. The phone tier
// tiles [0, duration_s] exactly; a syllable tier groups the phones.
features::AlignmentTrack generate_alignment(const SynthConfig& cfg, const features::PhoneInventory& inv,
                                            std::uint64_t seed);

std::size_t sample_count(const SynthConfig& cfg);

// D x L kernel table sampled at the lag grid of the TRF window.
Matrix<double> kernel_table(const SynthConfig& cfg, const std::vector<std::string>& dim_names);

// D x C mixing for "identity" or "random" (seeded) or the explicit matrix.
Matrix<double> base_mixing(const SynthConfig& cfg, std::size_t n_dims, std::uint64_t seed);
Matrix<double> perturb_mixing(const Matrix<double>& base, double scale, std::uint64_t seed);

std::vector<std::string> channel_names(std::size_t n_channels);

struct GroundTruth {
  Matrix<double> kernels;  // D x L
  Matrix<double> mixing;   // D x C
  Matrix<double> w_true;   // (D*L) x C, rows ordered d*L + l
  signal::TimeSeries clean;
  Matrix<double> noise;    // same shape as clean
  std::vector<double> noise_scale;  // per channel
};

struct SynthEeg {
  signal::TimeSeries eeg;
  GroundTruth truth;
};

// EEG = lagged(features) * W_true + noise, with noise scaled per channel to
// the configured SNR (signal variance over noise power). Channels without
// signal get unit power noise.
SynthEeg generate_eeg(const SynthConfig& cfg, const features::FeatureMatrix& features, std::uint64_t seed,
                      const Matrix<double>* mixing = nullptr);

std::vector<double> white_noise(std::size_t n, std::uint64_t seed);
// 1/f power spectrum, zero mean.
std::vector<double> pink_noise(std::size_t n, std::uint64_t seed);

struct Subject {
  std::string id;
  std::filesystem::path eeg;
  std::filesystem::path alignment;
  std::filesystem::path ground_truth;
};

struct Corpus {
  std::filesystem::path root;
  std::filesystem::path inventory;
  std::vector<Subject> subjects;
  nlohmann::json manifest;
};

// Writes <out>/manifest.json, <out>/inventory.json and per subject
// <id>/eeg.bin (+ sidecar), <id>/alignment.tsv, <id>/ground_truth.json.
Corpus generate_corpus(std::size_t n_subjects, const SynthConfig& cfg, const features::PhoneInventory& inv,
                       std::uint64_t seed, const std::filesystem::path& out_dir);

Corpus load_corpus(const std::filesystem::path& manifest);

// Problems found when re-hashing the listed files; empty when all verify.
std::vector<std::string> verify_corpus(const std::filesystem::path& manifest);

}  // namespace phonotrack::synth
