#include "phonotrack/synth.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <random>

#include <unsupported/Eigen/FFT>

#include "phonotrack/error.hpp"
#include "phonotrack/io.hpp"
#include "phonotrack/trf.hpp"

namespace phonotrack::synth {

namespace fs = std::filesystem;
using features::Interval;
using features::Tier;

std::map<std::string, std::vector<Bump>> SynthConfig::default_kernels() {
  return {
      {"vad", {{60.0, 40.0, 0.5}}},
      {"vowel", {{90.0, 25.0, 1.0}, {200.0, 40.0, -0.6}}},
      {"consonant", {{180.0, 30.0, 0.9}, {350.0, 25.0, -0.5}}},
      {"default", {{120.0, 30.0, 1.0}, {300.0, 40.0, -0.4}}},
  };
}

void SynthConfig::validate() const {
  if (!(duration_s >= 0.0) || !std::isfinite(duration_s)) throw ValidationError("synth.duration_s must be >= 0");
  if (!(fs > 0.0)) throw ValidationError("synth.fs must be > 0");
  if (!(window_ms >= 0.0)) throw ValidationError("synth.window_ms must be >= 0");
  for (const auto& [dim, bumps] : kernels)
    for (const auto& b : bumps) {
      if (!(b.latency_ms >= 0.0 && b.latency_ms < window_ms))
        throw ValidationError("synth.kernels." + dim + ": latency " + io::fmt_double(b.latency_ms) +
                              " ms lies outside the " + io::fmt_double(window_ms) + " ms lag window");
      if (!(b.width_ms > 0.0)) throw ValidationError("synth.kernels." + dim + ": width must be > 0");
      if (!std::isfinite(b.amplitude)) throw ValidationError("synth.kernels." + dim + ": amplitude must be finite");
    }
  if (mixing != "identity" && mixing != "random" && mixing != "explicit")
    throw ValidationError("synth.mixing must be identity, random or explicit");
  if (mixing == "explicit" && mixing_matrix.cols() != n_channels)
    throw ValidationError("synth.mixing_matrix must have n_channels columns");
  if (!(mixing_perturbation >= 0.0)) throw ValidationError("synth.mixing_perturbation must be >= 0");
  if (n_channels == 0) throw ValidationError("synth.n_channels must be > 0");
  if (noise != "white" && noise != "pink") throw ValidationError("synth.noise must be white or pink");
  if (snr_db && !std::isfinite(*snr_db)) throw ValidationError("synth.snr_db must be finite (null disables noise)");
  if (!(phone_mean_s > 0.0 && phone_sd_s >= 0.0 && phone_min_s > 0.0))
    throw ValidationError("synth phone durations must be > 0");
  if (!(speech_run_mean_s > 0.0 && silence_mean_s > 0.0 && silence_min_s > 0.0 && silence_min_s <= silence_mean_s))
    throw ValidationError("synth run and silence durations must be > 0 with silence_min_s <= silence_mean_s");
}

nlohmann::json SynthConfig::to_json() const {
  nlohmann::json k = nlohmann::json::object();
  for (const auto& [dim, bumps] : kernels) {
    auto& arr = k[dim] = nlohmann::json::array();
    for (const auto& b : bumps) arr.push_back({{"latency_ms", b.latency_ms}, {"width_ms", b.width_ms}, {"amplitude", b.amplitude}});
  }
  nlohmann::json j{{"duration_s", duration_s},
                   {"fs", fs},
                   {"window_ms", window_ms},
                   {"scheme", features::to_string(scheme)},
                   {"kernels", k},
                   {"mixing", mixing},
                   {"mixing_perturbation", mixing_perturbation},
                   {"n_channels", n_channels},
                   {"noise", noise},
                   {"snr_db", snr_db ? nlohmann::json(*snr_db) : nlohmann::json(nullptr)},
                   {"phone_mean_s", phone_mean_s},
                   {"phone_sd_s", phone_sd_s},
                   {"phone_min_s", phone_min_s},
                   {"speech_run_mean_s", speech_run_mean_s},
                   {"silence_mean_s", silence_mean_s},
                   {"silence_min_s", silence_min_s}};
  if (mixing == "explicit") {
    auto& rows = j["mixing_matrix"] = nlohmann::json::array();
    for (std::size_t r = 0; r < mixing_matrix.rows(); ++r) {
      const auto row = mixing_matrix.row(r);
      rows.push_back(std::vector<double>(row.begin(), row.end()));
    }
  }
  return j;
}

SynthConfig SynthConfig::from_json(const nlohmann::json& j) {
  SynthConfig c;
  c.duration_s = j.value("duration_s", c.duration_s);
  c.fs = j.value("fs", c.fs);
  c.window_ms = j.value("window_ms", c.window_ms);
  if (j.contains("scheme")) c.scheme = features::scheme_from_string(j.at("scheme").get<std::string>());
  if (j.contains("kernels")) {
    c.kernels.clear();
    for (const auto& [dim, arr] : j.at("kernels").items()) {
      auto& bumps = c.kernels[dim];
      for (const auto& b : arr)
        bumps.push_back({b.at("latency_ms").get<double>(), b.value("width_ms", 20.0), b.value("amplitude", 1.0)});
    }
  }
  c.mixing = j.value("mixing", c.mixing);
  c.mixing_perturbation = j.value("mixing_perturbation", c.mixing_perturbation);
  c.n_channels = j.value("n_channels", c.n_channels);
  if (j.contains("mixing_matrix")) {
    const auto rows = j.at("mixing_matrix").get<std::vector<std::vector<double>>>();
    const std::size_t cols = rows.empty() ? 0 : rows.front().size();
    c.mixing_matrix = Matrix<double>(rows.size(), cols);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r].size() != cols) throw ValidationError("synth.mixing_matrix rows differ in length");
      std::copy(rows[r].begin(), rows[r].end(), c.mixing_matrix.row(r).begin());
    }
  }
  c.noise = j.value("noise", c.noise);
  if (j.contains("snr_db")) {
    if (j.at("snr_db").is_null())
      c.snr_db.reset();
    else
      c.snr_db = j.at("snr_db").get<double>();
  }
  c.phone_mean_s = j.value("phone_mean_s", c.phone_mean_s);
  c.phone_sd_s = j.value("phone_sd_s", c.phone_sd_s);
  c.phone_min_s = j.value("phone_min_s", c.phone_min_s);
  c.speech_run_mean_s = j.value("speech_run_mean_s", c.speech_run_mean_s);
  c.silence_mean_s = j.value("silence_mean_s", c.silence_mean_s);
  c.silence_min_s = j.value("silence_min_s", c.silence_min_s);
  return c;
}

// ---------------------------------------------------------------------------

features::AlignmentTrack generate_alignment(const SynthConfig& cfg, const features::PhoneInventory& inv,
                                            std::uint64_t seed) {
  cfg.validate();
  features::AlignmentTrack track;
  const double end = cfg.duration_s;
  if (end <= 0.0) return track;
  const auto vowels = inv.vowels();
  const auto consonants = inv.consonants();
  if (vowels.empty() || consonants.empty()) throw ValidationError("inventory needs at least one vowel and one consonant");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> phone_dur(cfg.phone_mean_s, cfg.phone_sd_s);
  auto pick = [&](const std::vector<std::string>& v) { return v[static_cast<std::size_t>(unit(rng) * v.size()) % v.size()]; };

  double t = 0.0;
  auto emit = [&](Tier tier, std::string label, double start, double stop) {
    track.intervals.push_back({tier, std::move(label), start, stop});
  };
  // Returns false once the recording end is reached.
  auto add_phone = [&](const std::string& label, double dur) {
    const double stop = t + dur >= end ? end : t + dur;
    emit(Tier::phone, label, t, stop);
    t = stop;
    return t < end;
  };

  bool open = true;
  while (open) {
    const double sil = cfg.silence_min_s + unit(rng) * 2.0 * (cfg.silence_mean_s - cfg.silence_min_s);
    if (!add_phone("sil", sil)) break;
    const double run_end = t + cfg.speech_run_mean_s * (0.5 + unit(rng));
    while (open && t < run_end) {
      std::vector<std::string> syl;
      const double r = unit(rng);
      const int onsets = r < 0.2 ? 0 : (r < 0.8 ? 1 : 2);
      for (int i = 0; i < onsets; ++i) syl.push_back(pick(consonants));
      syl.push_back(pick(vowels));
      if (unit(rng) < 0.5) syl.push_back(pick(consonants));
      const double start = t;
      std::string label;
      for (const auto& ph : syl) {
        label += label.empty() ? ph : "." + ph;
        open = add_phone(ph, std::max(cfg.phone_min_s, phone_dur(rng)));
        if (!open) break;
      }
      emit(Tier::syllable, label, start, t);
    }
  }
  features::normalize_track(track);
  track.warnings.clear();
  return track;
}

std::size_t sample_count(const SynthConfig& cfg) {
  return static_cast<std::size_t>(std::llround(cfg.duration_s * cfg.fs));
}

Matrix<double> kernel_table(const SynthConfig& cfg, const std::vector<std::string>& dim_names) {
  const std::size_t L = trf::lag_count(cfg.window_ms, cfg.fs);
  Matrix<double> k(dim_names.size(), L, 0.0);
  for (std::size_t d = 0; d < dim_names.size(); ++d) {
    auto it = cfg.kernels.find(dim_names[d]);
    if (it == cfg.kernels.end()) it = cfg.kernels.find("default");
    if (it == cfg.kernels.end()) continue;
    for (std::size_t l = 0; l < L; ++l) {
      const double ms = 1000.0 * static_cast<double>(l) / cfg.fs;
      double v = 0.0;
      for (const auto& b : it->second) {
        const double z = (ms - b.latency_ms) / b.width_ms;
        v += b.amplitude * std::exp(-0.5 * z * z);
      }
      k(d, l) = v;
    }
  }
  return k;
}

Matrix<double> base_mixing(const SynthConfig& cfg, std::size_t n_dims, std::uint64_t seed) {
  if (cfg.mixing == "explicit") {
    if (cfg.mixing_matrix.rows() != n_dims || cfg.mixing_matrix.cols() != cfg.n_channels)
      throw ValidationError("synth.mixing_matrix must be " + std::to_string(n_dims) + " x " + std::to_string(cfg.n_channels));
    return cfg.mixing_matrix;
  }
  Matrix<double> m(n_dims, cfg.n_channels, 0.0);
  if (cfg.mixing == "identity") {
    for (std::size_t d = 0; d < std::min(n_dims, cfg.n_channels); ++d) m(d, d) = 1.0;
    return m;
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  for (double& v : m.values()) v = n01(rng);
  return m;
}

Matrix<double> perturb_mixing(const Matrix<double>& base, double scale, std::uint64_t seed) {
  Matrix<double> m = base;
  if (scale == 0.0) return m;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  for (double& v : m.values()) v += scale * n01(rng);
  return m;
}

std::vector<std::string> channel_names(std::size_t n) {
  const auto& bio = trf::biosemi64_channels();
  if (n <= bio.size()) return {bio.begin(), bio.begin() + static_cast<std::ptrdiff_t>(n)};
  std::vector<std::string> out;
  char buf[32];
  for (std::size_t i = 0; i < n; ++i) {
    std::snprintf(buf, sizeof buf, "ch%03zu", i + 1);
    out.emplace_back(buf);
  }
  return out;
}

std::vector<double> white_noise(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  std::vector<double> out(n);
  for (double& v : out) v = n01(rng);
  return out;
}

std::vector<double> pink_noise(std::size_t n, std::uint64_t seed) {
  if (n == 0) return {};
  std::size_t m = 1;
  while (m < n) m <<= 1;
  const auto white = white_noise(m, seed);
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> spec;
  fft.fwd(spec, white);
  spec[0] = 0.0;
  for (std::size_t k = 1; k < m; ++k) spec[k] /= std::sqrt(static_cast<double>(std::min(k, m - k)));
  std::vector<double> shaped;
  fft.inv(shaped, spec);
  shaped.resize(n);
  double mean = 0.0;
  for (double v : shaped) mean += v;
  mean /= static_cast<double>(n);
  for (double& v : shaped) v -= mean;
  return shaped;
}

SynthEeg generate_eeg(const SynthConfig& cfg, const features::FeatureMatrix& feat, std::uint64_t seed,
                      const Matrix<double>* mixing) {
  cfg.validate();
  if (std::abs(feat.fs - cfg.fs) > 1e-9 * cfg.fs) throw ValidationError("features must be sampled at synth.fs");
  const std::size_t D = feat.n_dims(), C = cfg.n_channels, n = feat.n_samples();

  SynthEeg out;
  GroundTruth& gt = out.truth;
  gt.kernels = kernel_table(cfg, feat.dim_names);
  gt.mixing = mixing ? *mixing : base_mixing(cfg, D, io::derive_seed(seed, "mixing"));
  if (gt.mixing.rows() != D || gt.mixing.cols() != C) throw ValidationError("mixing matrix shape does not match dims x channels");
  const std::size_t L = gt.kernels.cols();
  gt.w_true = Matrix<double>(D * L, C, 0.0);
  for (std::size_t d = 0; d < D; ++d)
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t c = 0; c < C; ++c) gt.w_true(d * L + l, c) = gt.kernels(d, l) * gt.mixing(d, c);

  trf::TrfModel model;
  model.weights = gt.w_true;
  model.fs = cfg.fs;
  model.n_dims = D;
  model.n_lags = L;
  model.channel_names = channel_names(C);
  const auto S = trf::build_lagged_matrix(feat.data, feat.fs, cfg.window_ms, feat.dim_names);
  gt.clean = trf::predict_eeg(model, S);

  gt.noise = Matrix<double>(n, C, 0.0);
  gt.noise_scale.assign(C, 0.0);
  if (cfg.snr_db && n > 0) {
    const double ratio = std::pow(10.0, *cfg.snr_db / 10.0);
    for (std::size_t c = 0; c < C; ++c) {
      const std::uint64_t s = io::derive_seed(seed, "noise", c);
      const auto raw = cfg.noise == "pink" ? pink_noise(n, s) : white_noise(n, s);
      // Signal power about the mean: a constant offset is not EEG signal.
      double mean = 0.0, p_sig = 0.0, p_raw = 0.0;
      for (std::size_t t = 0; t < n; ++t) mean += gt.clean.data(t, c);
      mean /= static_cast<double>(n);
      for (std::size_t t = 0; t < n; ++t) {
        const double x = gt.clean.data(t, c) - mean;
        p_sig += x * x;
        p_raw += raw[t] * raw[t];
      }
      p_sig /= static_cast<double>(n);
      p_raw /= static_cast<double>(n);
      const double target = p_sig > 0.0 ? p_sig / ratio : 1.0;
      const double scale = p_raw > 0.0 ? std::sqrt(target / p_raw) : 0.0;
      gt.noise_scale[c] = scale;
      for (std::size_t t = 0; t < n; ++t) gt.noise(t, c) = scale * raw[t];
    }
  }
  out.eeg = gt.clean;
  for (std::size_t i = 0; i < out.eeg.data.size(); ++i) out.eeg.data.values()[i] += gt.noise.values()[i];
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::string subject_id(std::size_t i, std::size_t n) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sub-%0*zu", n > 99 ? 3 : 2, i + 1);
  return buf;
}

nlohmann::json matrix_json(const Matrix<double>& m) {
  auto rows = nlohmann::json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    rows.push_back(std::vector<double>(row.begin(), row.end()));
  }
  return rows;
}

}  // namespace

Corpus generate_corpus(std::size_t n_subjects, const SynthConfig& cfg, const features::PhoneInventory& inv,
                       std::uint64_t seed, const fs::path& out_dir) {
  cfg.validate();
  fs::create_directories(out_dir);
  Corpus corpus;
  corpus.root = out_dir;
  std::vector<fs::path> written;
  const std::size_t n = sample_count(cfg);
  const std::size_t D = 1 + (cfg.scheme == features::Scheme::vad ? 0 : features::scheme_dims(cfg.scheme));
  const Matrix<double> mixing0 = base_mixing(cfg, D, io::derive_seed(seed, "mixing"));

  std::vector<double> lag_times;
  for (std::size_t l = 0; l < trf::lag_count(cfg.window_ms, cfg.fs); ++l) lag_times.push_back(1000.0 * static_cast<double>(l) / cfg.fs);

  auto subjects = nlohmann::json::array();
  if (n_subjects > 0) {
    corpus.inventory = out_dir / "inventory.json";
    io::write_json(corpus.inventory, inv.to_json());
    written.push_back("inventory.json");
  }
  for (std::size_t i = 0; i < n_subjects; ++i) {
    const std::string id = subject_id(i, n_subjects);
    const std::uint64_t s = io::derive_seed(seed, "subject", i);
    const auto track = generate_alignment(cfg, inv, io::derive_seed(s, "alignment"));
    const auto feat = features::encode_representation(track, inv, cfg.scheme, cfg.fs, n);
    const Matrix<double> mixing =
        cfg.mixing == "random" ? perturb_mixing(mixing0, cfg.mixing_perturbation, io::derive_seed(s, "mixing")) : mixing0;
    const auto gen = generate_eeg(cfg, feat, io::derive_seed(s, "eeg"), &mixing);

    const fs::path rel = id;
    Subject sub{id, out_dir / rel / "eeg.bin", out_dir / rel / "alignment.tsv", out_dir / rel / "ground_truth.json"};
    signal::write_timeseries(sub.eeg, gen.eeg, {{"subject", id}, {"synthetic", true}});
    features::write_alignment(sub.alignment, track);
    io::write_json(sub.ground_truth, {{"subject", id},
                                      {"seed", s},
                                      {"scheme", features::to_string(cfg.scheme)},
                                      {"dim_names", feat.dim_names},
                                      {"lag_times_ms", lag_times},
                                      {"kernels", matrix_json(gen.truth.kernels)},
                                      {"mixing", matrix_json(gen.truth.mixing)},
                                      {"noise_scale", gen.truth.noise_scale}});
    for (const char* f : {"eeg.bin", "eeg.json", "alignment.tsv", "ground_truth.json"}) written.push_back(rel / f);
    subjects.push_back({{"id", id},
                        {"eeg", (rel / "eeg.bin").generic_string()},
                        {"alignment", (rel / "alignment.tsv").generic_string()},
                        {"ground_truth", (rel / "ground_truth.json").generic_string()}});
    corpus.subjects.push_back(std::move(sub));
  }

  std::sort(written.begin(), written.end());
  auto files = nlohmann::json::array();
  for (const auto& rel : written)
    files.push_back({{"path", rel.generic_string()},
                     {"sha256", io::sha256_file(out_dir / rel)},
                     {"bytes", fs::file_size(out_dir / rel)}});
  corpus.manifest = {{"format", "phonotrack-corpus"},
                     {"seed", seed},
                     {"n_subjects", n_subjects},
                     {"synth", cfg.to_json()},
                     {"inventory", n_subjects > 0 ? nlohmann::json("inventory.json") : nlohmann::json(nullptr)},
                     {"subjects", subjects},
                     {"files", files}};
  io::write_json(out_dir / "manifest.json", corpus.manifest);
  return corpus;
}

Corpus load_corpus(const fs::path& manifest) {
  Corpus c;
  c.manifest = io::read_json(manifest);
  c.root = manifest.parent_path();
  try {
    const auto& inv = c.manifest.at("inventory");
    if (!inv.is_null()) c.inventory = c.root / inv.get<std::string>();
    for (const auto& s : c.manifest.at("subjects")) {
      Subject sub;
      sub.id = s.at("id").get<std::string>();
      sub.eeg = c.root / s.at("eeg").get<std::string>();
      sub.alignment = c.root / s.at("alignment").get<std::string>();
      if (s.contains("ground_truth")) sub.ground_truth = c.root / s.at("ground_truth").get<std::string>();
      c.subjects.push_back(std::move(sub));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(manifest.string() + ": " + e.what());
  }
  return c;
}

std::vector<std::string> verify_corpus(const fs::path& manifest) {
  std::vector<std::string> problems;
  const auto m = io::read_json(manifest);
  const fs::path root = manifest.parent_path();
  for (const auto& f : m.value("files", nlohmann::json::array())) {
    const fs::path p = root / f.at("path").get<std::string>();
    if (!fs::exists(p)) {
      problems.push_back(f.at("path").get<std::string>() + ": missing");
      continue;
    }
    if (io::sha256_file(p) != f.at("sha256").get<std::string>())
      problems.push_back(f.at("path").get<std::string>() + ": checksum mismatch");
  }
  return problems;
}

}  // namespace phonotrack::synth
