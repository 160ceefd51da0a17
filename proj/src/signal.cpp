#include "phonotrack/signal.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <set>

#include "phonotrack/error.hpp"
#include "phonotrack/io.hpp"
#include "phonotrack/simd.hpp"

namespace phonotrack::signal {

void TimeSeries::validate() const {
  if (!(fs > 0.0) || !std::isfinite(fs)) throw ValidationError("sampling rate must be positive and finite");
  if (data.cols() < 1) throw ValidationError("time series needs at least one channel");
  if (channel_names.size() != data.cols())
    throw ValidationError("channel_names has " + std::to_string(channel_names.size()) + " entries for " +
                          std::to_string(data.cols()) + " channels");
  std::set<std::string> seen;
  for (const auto& name : channel_names)
    if (!seen.insert(name).second) throw ValidationError("duplicate channel name: " + name);
  for (double v : data.values())
    if (!std::isfinite(v)) throw ValidationError("time series contains non-finite values");
}

TimeSeries TimeSeries::slice(std::size_t begin, std::size_t end) const {
  return TimeSeries{data.slice_rows(begin, end), fs, channel_names};
}

std::size_t TimeSeries::channel_index(const std::string& name) const {
  auto it = std::find(channel_names.begin(), channel_names.end(), name);
  if (it == channel_names.end()) throw ValidationError("unknown channel: " + name);
  return static_cast<std::size_t>(it - channel_names.begin());
}

TimeSeries RecordingSplit::train() const {
  TimeSeries out{Matrix<double>(train_head.n_samples() + train_tail.n_samples(), train_head.n_channels()),
                 train_head.fs, train_head.channel_names};
  std::copy(train_head.data.values().begin(), train_head.data.values().end(), out.data.values().begin());
  std::copy(train_tail.data.values().begin(), train_tail.data.values().end(),
            out.data.values().begin() + static_cast<std::ptrdiff_t>(train_head.data.size()));
  return out;
}

// ---------------------------------------------------------------------------
// Butterworth high-pass

std::vector<Biquad> butterworth_highpass(int order, double cutoff_hz, double fs) {
  if (order < 1) throw ValidationError("filter order must be >= 1");
  if (!(cutoff_hz > 0.0) || !(cutoff_hz < fs / 2.0))
    throw ValidationError("high-pass cutoff must lie strictly between 0 and Nyquist");

  using cplx = std::complex<double>;
  const double k = 2.0 * fs;
  const double warped = k * std::tan(std::numbers::pi * cutoff_hz / fs);
  auto digital_pole = [&](int i) {
    const cplx proto = std::polar(1.0, std::numbers::pi * (2.0 * i + order + 1) / (2.0 * order));
    const cplx s = warped / proto;
    return (k + s) / (k - s);
  };

  std::vector<Biquad> sections;
  for (int i = 0; i < order / 2; ++i) {
    const cplx z = digital_pole(i);
    Biquad q;
    q.a1 = -2.0 * z.real();
    q.a2 = std::norm(z);
    const double g = (1.0 - q.a1 + q.a2) / 4.0;
    q.b0 = g;
    q.b1 = -2.0 * g;
    q.b2 = g;
    sections.push_back(q);
  }
  if (order % 2 == 1) {
    const double z = digital_pole(order / 2).real();
    Biquad q;
    q.a1 = -z;
    const double g = (1.0 + z) / 2.0;
    q.b0 = g;
    q.b1 = -g;
    sections.push_back(q);
  }
  return sections;
}

namespace {

struct SectionState {
  double s1 = 0, s2 = 0;
};

// Steady-state states for a unit constant input through the cascade.
std::vector<SectionState> steady_state(std::span<const Biquad> sections) {
  std::vector<SectionState> zi(sections.size());
  double u = 1.0;
  for (std::size_t i = 0; i < sections.size(); ++i) {
    const Biquad& q = sections[i];
    const double y = u * (q.b0 + q.b1 + q.b2) / (1.0 + q.a1 + q.a2);
    zi[i].s2 = q.b2 * u - q.a2 * y;
    zi[i].s1 = q.b1 * u - q.a1 * y + zi[i].s2;
    u = y;
  }
  return zi;
}

void run_cascade(std::span<const Biquad> sections, std::span<const SectionState> zi, double scale,
                 std::vector<double>& x) {
  for (std::size_t i = 0; i < sections.size(); ++i) {
    const Biquad& q = sections[i];
    double s1 = zi[i].s1 * scale, s2 = zi[i].s2 * scale;
    for (double& v : x) {
      const double in = v;
      const double y = q.b0 * in + s1;
      s1 = q.b1 * in - q.a1 * y + s2;
      s2 = q.b2 * in - q.a2 * y;
      v = y;
    }
  }
}

}  // namespace

std::vector<double> filtfilt(std::span<const Biquad> sections, std::span<const double> x, std::size_t pad) {
  const std::size_t n = x.size();
  if (n < 2) return std::vector<double>(x.begin(), x.end());
  pad = std::min(pad, n - 1);

  std::vector<double> ext(n + 2 * pad);
  for (std::size_t i = 0; i < pad; ++i) ext[i] = 2.0 * x[0] - x[pad - i];
  std::copy(x.begin(), x.end(), ext.begin() + static_cast<std::ptrdiff_t>(pad));
  for (std::size_t j = 0; j < pad; ++j) ext[pad + n + j] = 2.0 * x[n - 1] - x[n - 2 - j];

  const auto zi = steady_state(sections);
  run_cascade(sections, zi, ext.front(), ext);
  std::reverse(ext.begin(), ext.end());
  run_cascade(sections, zi, ext.front(), ext);
  std::reverse(ext.begin(), ext.end());
  return std::vector<double>(ext.begin() + static_cast<std::ptrdiff_t>(pad),
                             ext.begin() + static_cast<std::ptrdiff_t>(pad + n));
}

TimeSeries highpass_zero_phase(const TimeSeries& x, double cutoff_hz, int order) {
  x.validate();
  const auto sections = butterworth_highpass(order, cutoff_hz, x.fs);
  const std::size_t pad = 3 * static_cast<std::size_t>(order);
  TimeSeries out{Matrix<double>(x.n_samples(), x.n_channels()), x.fs, x.channel_names};
  for (std::size_t c = 0; c < x.n_channels(); ++c) {
    const auto col = x.data.col(c);
    const auto y = filtfilt(sections, col, pad);
    for (std::size_t t = 0; t < y.size(); ++t) out.data(t, c) = y[t];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rational resampling

ResampleRatio rational_ratio(double fs, double target_fs, double tolerance, long max_factor) {
  if (!(fs > 0.0) || !(target_fs > 0.0)) throw ValidationError("sampling rates must be positive");
  const double r = target_fs / fs;
  // Continued-fraction convergents h/k of r.
  long h_prev = 1, h_prev2 = 0, k_prev = 0, k_prev2 = 1;
  double rem = r;
  for (int iter = 0; iter < 64; ++iter) {
    const double a = std::floor(rem);
    const long ai = static_cast<long>(a);
    const long h = ai * h_prev + h_prev2;
    const long k = ai * k_prev + k_prev2;
    if (h > max_factor || k > max_factor) break;
    if (k > 0 && h > 0 && std::abs(static_cast<double>(h) / static_cast<double>(k) - r) <= tolerance * r)
      return {h, k};
    h_prev2 = h_prev;
    h_prev = h;
    k_prev2 = k_prev;
    k_prev = k;
    const double frac = rem - a;
    if (frac <= 0.0) break;
    rem = 1.0 / frac;
  }
  throw ValidationError("resampling ratio " + io::fmt_double(target_fs) + "/" + io::fmt_double(fs) +
                        " has no rational approximation within tolerance");
}

std::vector<double> resample_filter(const ResampleRatio& r, double stopband_db) {
  const double stop = 0.5 / static_cast<double>(std::max(r.up, r.down));  // cycles per intermediate sample
  const double transition = 0.2 * stop;
  const double cutoff = stop - transition / 2.0;
  const double beta = stopband_db > 50.0 ? 0.1102 * (stopband_db - 8.7)
                                          : 0.5842 * std::pow(stopband_db - 21.0, 0.4) + 0.07886 * (stopband_db - 21.0);
  std::size_t taps = static_cast<std::size_t>(std::ceil((stopband_db - 7.95) / (14.36 * transition))) + 1;
  if (taps % 2 == 0) ++taps;

  const double centre = static_cast<double>(taps - 1) / 2.0;
  const double i0_beta = std::cyl_bessel_i(0.0, beta);
  std::vector<double> h(taps);
  double sum = 0.0;
  for (std::size_t n = 0; n < taps; ++n) {
    const double t = static_cast<double>(n) - centre;
    const double arg = 2.0 * cutoff * t;
    const double sinc = t == 0.0 ? 1.0 : std::sin(std::numbers::pi * arg) / (std::numbers::pi * arg);
    const double ratio = t / centre;
    const double w = std::cyl_bessel_i(0.0, beta * std::sqrt(std::max(0.0, 1.0 - ratio * ratio))) / i0_beta;
    h[n] = 2.0 * cutoff * sinc * w;
    sum += h[n];
  }
  for (double& v : h) v *= static_cast<double>(r.up) / sum;
  return h;
}

TimeSeries resample(const TimeSeries& x, double target_fs, double tolerance) {
  x.validate();
  const ResampleRatio r = rational_ratio(x.fs, target_fs, tolerance);
  if (r.up == 1 && r.down == 1) return x;

  const auto h = resample_filter(r);
  const long taps = static_cast<long>(h.size());
  const long centre = (taps - 1) / 2;
  const long n_in = static_cast<long>(x.n_samples());
  const long n_out = (2 * n_in * r.up + r.down) / (2 * r.down);
  const std::size_t channels = x.n_channels();

  TimeSeries out{Matrix<double>(static_cast<std::size_t>(n_out), channels), target_fs, x.channel_names};
  for (long m = 0; m < n_out; ++m) {
    const long j = m * r.down + centre;
    const long k_hi = std::min(n_in - 1, j / r.up);
    long k_lo = j - (taps - 1);
    k_lo = k_lo <= 0 ? 0 : (k_lo + r.up - 1) / r.up;
    double* dst = out.data.row(static_cast<std::size_t>(m)).data();
    for (long k = k_lo; k <= k_hi; ++k)
      simd::axpy(h[static_cast<std::size_t>(j - k * r.up)], x.data.row(static_cast<std::size_t>(k)).data(), dst,
                 channels);
  }
  return out;
}

// ---------------------------------------------------------------------------

TimeSeries common_average_reference(const TimeSeries& x) {
  x.validate();
  TimeSeries out = x;
  const double inv = 1.0 / static_cast<double>(x.n_channels());
  for (std::size_t t = 0; t < out.n_samples(); ++t) {
    auto row = out.data.row(t);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean *= inv;
    for (double& v : row) v -= mean;
  }
  return out;
}

std::array<std::size_t, 5> split_boundaries(std::size_t n) {
  if (n < 10) throw ValidationError("recording of " + std::to_string(n) + " samples is too short to split (need >= 10)");
  const std::size_t head = 4 * n / 10;
  const std::size_t tenth = n / 10;
  return {0, head, head + tenth, head + 2 * tenth, n};
}

RecordingSplit split_recording(const TimeSeries& x) {
  const auto b = split_boundaries(x.n_samples());
  return RecordingSplit{x.slice(b[0], b[1]), x.slice(b[1], b[2]), x.slice(b[2], b[3]), x.slice(b[3], b[4]), b};
}

NormalizationStats fit_normalization(const TimeSeries& train) {
  if (train.n_samples() == 0) throw ValidationError("cannot fit normalization on an empty training segment");
  const std::size_t c = train.n_channels();
  const double n = static_cast<double>(train.n_samples());
  NormalizationStats s{std::vector<double>(c, 0.0), std::vector<double>(c, 0.0)};
  for (std::size_t t = 0; t < train.n_samples(); ++t)
    for (std::size_t j = 0; j < c; ++j) s.mean[j] += train.data(t, j);
  for (double& m : s.mean) m /= n;
  for (std::size_t t = 0; t < train.n_samples(); ++t)
    for (std::size_t j = 0; j < c; ++j) {
      const double d = train.data(t, j) - s.mean[j];
      s.std[j] += d * d;
    }
  for (std::size_t j = 0; j < c; ++j) {
    s.std[j] = std::sqrt(s.std[j] / n);
    if (!(s.std[j] > 1e-12 * std::max(1.0, std::abs(s.mean[j]))))
      throw ValidationError("zero-variance channel in training data: " +
                            (j < train.channel_names.size() ? train.channel_names[j] : std::to_string(j)));
  }
  return s;
}

TimeSeries apply_normalization(const TimeSeries& x, const NormalizationStats& stats) {
  if (stats.mean.size() != x.n_channels()) throw ValidationError("normalization stats do not match channel count");
  TimeSeries out = x;
  for (std::size_t t = 0; t < out.n_samples(); ++t)
    for (std::size_t j = 0; j < out.n_channels(); ++j) out.data(t, j) = (out.data(t, j) - stats.mean[j]) / stats.std[j];
  return out;
}

TimeSeries invert_normalization(const TimeSeries& x, const NormalizationStats& stats) {
  if (stats.mean.size() != x.n_channels()) throw ValidationError("normalization stats do not match channel count");
  TimeSeries out = x;
  for (std::size_t t = 0; t < out.n_samples(); ++t)
    for (std::size_t j = 0; j < out.n_channels(); ++j) out.data(t, j) = out.data(t, j) * stats.std[j] + stats.mean[j];
  return out;
}

TimeSeries preprocess(const TimeSeries& raw, const PreprocessConfig& cfg, const ArtifactRemover& artifacts) {
  TimeSeries x = highpass_zero_phase(raw, cfg.highpass_hz, cfg.filter_order);
  x = artifacts.apply(x);
  x = common_average_reference(x);
  if (cfg.target_fs != x.fs) x = resample(x, cfg.target_fs);
  return x;
}

// ---------------------------------------------------------------------------

void write_timeseries(const std::filesystem::path& bin, const TimeSeries& x, const nlohmann::json& extra) {
  nlohmann::json side = nlohmann::json::object();
  if (extra.is_object()) side = extra;
  side["fs"] = x.fs;
  side["n_channels"] = x.n_channels();
  side["channel_names"] = x.channel_names;
  side["n_samples"] = x.n_samples();
  io::write_f32(bin, x.data);
  io::write_json(io::sidecar_path(bin), side);
}

TimeSeries read_timeseries(const std::filesystem::path& bin, nlohmann::json* sidecar) {
  const auto side = io::read_json(io::sidecar_path(bin));
  TimeSeries x;
  try {
    x.fs = side.at("fs").get<double>();
    const auto channels = side.at("n_channels").get<std::size_t>();
    const auto samples = side.at("n_samples").get<std::size_t>();
    x.channel_names = side.at("channel_names").get<std::vector<std::string>>();
    x.data = io::read_f32(bin, samples, channels);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(io::sidecar_path(bin).string() + ": " + e.what());
  }
  x.validate();
  if (sidecar) *sidecar = side;
  return x;
}

}  // namespace phonotrack::signal
