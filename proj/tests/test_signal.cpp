#include <doctest.h>

#include <cmath>
#include <complex>
#include <numbers>
#include <numeric>

#include "phonotrack/error.hpp"
#include "phonotrack/signal.hpp"
#include "support.hpp"

using namespace phonotrack;
using namespace phonotrack::signal;

namespace {

// Single-pass magnitude response of the filter cascade at frequency f.
double magnitude(const std::vector<Biquad>& sos, double f, double fs) {
  const double w = 2 * std::numbers::pi * f / fs;
  std::complex<double> z1 = std::polar(1.0, -w), z2 = z1 * z1, h = 1.0;
  for (const auto& s : sos) h *= (s.b0 + s.b1 * z1 + s.b2 * z2) / (1.0 + s.a1 * z1 + s.a2 * z2);
  return std::abs(h);
}

std::vector<double> sine(std::size_t n, double f, double fs, double amp = 1.0) {
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = amp * std::sin(2 * std::numbers::pi * f * i / fs);
  return x;
}

}  // namespace

TEST_CASE("butterworth magnitude matches the analytic response") {
  for (int order : {1, 2, 3, 4, 5}) {
    const double fs = 64, fc = 0.5;
    const auto sos = butterworth_highpass(order, fc, fs);
    CHECK(sos.size() == static_cast<std::size_t>((order + 1) / 2));
    for (double f : {0.1, 0.25, 0.5, 1.0, 2.0, 10.0, 31.0}) {
      // Bilinear-transformed Butterworth high-pass.
      const double ratio = std::tan(std::numbers::pi * fc / fs) / std::tan(std::numbers::pi * f / fs);
      const double expected = 1.0 / std::sqrt(1.0 + std::pow(ratio, 2 * order));
      CAPTURE(order);
      CAPTURE(f);
      CHECK(magnitude(sos, f, fs) == doctest::Approx(expected).epsilon(1e-9));
    }
    CHECK(magnitude(sos, 0.0, fs) < 1e-12);
  }
}

TEST_CASE("highpass rejects bad cutoffs and orders") {
  CHECK_THROWS_AS(butterworth_highpass(4, 32.0, 64.0), ValidationError);
  CHECK_THROWS_AS(butterworth_highpass(4, 0.0, 64.0), ValidationError);
  CHECK_THROWS_AS(butterworth_highpass(0, 0.5, 64.0), ValidationError);
}

TEST_CASE("zero-phase high-pass: 10 Hz sine keeps amplitude and phase") {
  const double fs = 64;
  const std::size_t n = 64 * 60;
  auto x = testing::series(n, 1, fs, sine(n, 10, fs));
  const auto y = highpass_zero_phase(x, 0.5, 4);
  REQUIRE(y.n_samples() == n);
  CHECK(y.fs == fs);

  // Steady state: ignore 10 s at each end.
  const std::size_t lo = 640, hi = n - 640;
  double peak = 0;
  for (std::size_t i = lo; i < hi; ++i) peak = std::max(peak, std::abs(y.data(i, 0)));
  const double ratio = std::tan(std::numbers::pi * 0.5 / fs) / std::tan(std::numbers::pi * 10 / fs);
  const double expected = 1.0 / (1.0 + std::pow(ratio, 8));  // squared single-pass magnitude
  CHECK(peak == doctest::Approx(expected).epsilon(0.01));
  CHECK(std::abs(peak - 1.0) < 0.01);

  // Cross-correlation peak at lag 0.
  int best_lag = 99;
  double best = -1e300;
  for (int lag = -5; lag <= 5; ++lag) {
    double acc = 0;
    for (std::size_t i = lo; i < hi; ++i) acc += x.data(i, 0) * y.data(static_cast<std::size_t>(static_cast<long>(i) + lag), 0);
    if (acc > best) best = acc, best_lag = lag;
  }
  CHECK(best_lag == 0);
}

TEST_CASE("zero-phase high-pass removes DC and maps zero to zero") {
  const double fs = 64;
  const std::size_t n = 64 * 120;
  const auto y = highpass_zero_phase(testing::series(n, 2, fs, std::vector<double>(2 * n, 5.0)), 0.5, 4);
  for (std::size_t i = 0; i < n; ++i) {
    CHECK(std::abs(y.data(i, 0)) < 1e-6);
    CHECK(std::abs(y.data(i, 1)) < 1e-6);
  }
  const auto z = highpass_zero_phase(testing::series(n, 3, fs), 0.5, 4);
  for (double v : z.data.values()) CHECK(v == 0.0);
}

TEST_CASE("filtfilt is linear") {
  const auto sos = butterworth_highpass(4, 1.0, 64.0);
  const auto a = testing::random_series(500, 1, 64, 1).data.values();
  const auto b = testing::random_series(500, 1, 64, 2).data.values();
  std::vector<double> ab(500);
  for (std::size_t i = 0; i < 500; ++i) ab[i] = 2 * a[i] - 3 * b[i];
  const auto ya = filtfilt(sos, a, 12), yb = filtfilt(sos, b, 12), yab = filtfilt(sos, ab, 12);
  for (std::size_t i = 0; i < 500; ++i) CHECK(yab[i] == doctest::Approx(2 * ya[i] - 3 * yb[i]).epsilon(1e-9).scale(1));
}

TEST_CASE("resample: sample counts") {
  CHECK(resample(testing::series(1000, 1, 1024), 64).n_samples() == 63);
  CHECK(resample(testing::series(1024, 1, 1024), 64).n_samples() == 64);
  CHECK(resample(testing::series(100, 1, 64), 64).n_samples() == 100);
  const auto r = rational_ratio(1024, 64);
  CHECK(r.up == 1);
  CHECK(r.down == 16);
  const auto q = rational_ratio(8192, 1024);
  CHECK(q.down / q.up == 8);
}

TEST_CASE("resample: constant and sine") {
  const double fs = 1024, target = 64;
  const std::size_t n = 1024 * 20;
  const auto c = resample(testing::series(n, 1, fs, std::vector<double>(n, 3.0)), target);
  CHECK(c.fs == target);
  for (std::size_t i = 64; i + 64 < c.n_samples(); ++i) CHECK(std::abs(c.data(i, 0) - 3.0) < 1e-3);

  const auto s = resample(testing::series(n, 1, fs, sine(n, 5, fs)), target);
  const auto ref = sine(s.n_samples(), 5, target);
  double peak = 0, dot = 0, nx = 0, ny = 0;
  for (std::size_t i = 64; i + 64 < s.n_samples(); ++i) {
    peak = std::max(peak, std::abs(s.data(i, 0)));
    dot += s.data(i, 0) * ref[i], nx += s.data(i, 0) * s.data(i, 0), ny += ref[i] * ref[i];
  }
  CHECK(std::abs(peak - 1.0) < 0.01);
  CHECK(dot / std::sqrt(nx * ny) > 0.9999);
}

TEST_CASE("resample attenuates content above the target Nyquist") {
  const double fs = 1024, target = 64;
  const std::size_t n = 1024 * 20;
  // 40 Hz lies above 32 Hz and would alias to 24 Hz.
  const auto s = resample(testing::series(n, 1, fs, sine(n, 40, fs)), target);
  double peak = 0;
  for (std::size_t i = 64; i + 64 < s.n_samples(); ++i) peak = std::max(peak, std::abs(s.data(i, 0)));
  CHECK(20 * std::log10(peak + 1e-300) < -60.0);
}

TEST_CASE("resample rejects ratios without a small rational form") {
  CHECK_THROWS_AS(rational_ratio(1000.0, std::numbers::pi * 100, 1e-12, 64), ValidationError);
}

TEST_CASE("common average reference") {
  const auto y = common_average_reference(testing::series(1, 2, 64, {1, 3}));
  CHECK(y.data(0, 0) == -1.0);
  CHECK(y.data(0, 1) == 1.0);

  const auto single = common_average_reference(testing::random_series(50, 1, 64, 3));
  for (double v : single.data.values()) CHECK(v == 0.0);

  const auto x = testing::random_series(200, 64, 64, 4);
  const auto z = common_average_reference(x);
  for (std::size_t t = 0; t < z.n_samples(); ++t) {
    double mean = 0, scale = 0;
    for (double v : z.data.row(t)) mean += v;
    for (double v : x.data.row(t)) scale = std::max(scale, std::abs(v));
    CHECK(std::abs(mean / 64) <= 1e-12 * scale);
  }
  // Idempotent.
  const auto zz = common_average_reference(z);
  for (std::size_t i = 0; i < z.data.size(); ++i) CHECK(zz.data.values()[i] == doctest::Approx(z.data.values()[i]).epsilon(1e-12));
}

TEST_CASE("split: 40/10/10/40") {
  const auto b = split_boundaries(15000);
  CHECK(b == std::array<std::size_t, 5>{0, 6000, 7500, 9000, 15000});
  CHECK(split_boundaries(10) == std::array<std::size_t, 5>{0, 4, 5, 6, 10});

  const auto x = testing::random_series(15000, 2, 64, 5);
  const auto s = split_recording(x);
  CHECK(s.train_head.n_samples() == 6000);
  CHECK(s.validation.n_samples() == 1500);
  CHECK(s.test.n_samples() == 1500);
  CHECK(s.train_tail.n_samples() == 6000);
  CHECK(s.validation.data(0, 1) == x.data(6000, 1));
  CHECK(s.train_tail.data(0, 0) == x.data(9000, 0));
  const auto train = s.train();
  CHECK(train.n_samples() == 12000);
  CHECK(train.data(6000, 0) == x.data(9000, 0));

  CHECK_THROWS_AS(split_recording(testing::series(9, 1, 64)), ValidationError);
}

TEST_CASE("split: contiguous and exhaustive for any length") {
  for (std::size_t n : {10, 11, 19, 99, 9999, 10001, 38400}) {
    const auto b = split_boundaries(n);
    CAPTURE(n);
    CHECK(b[0] == 0);
    CHECK(b[4] == n);
    std::size_t total = 0;
    for (int i = 0; i < 4; ++i) {
      CHECK(b[i] < b[i + 1]);
      total += b[i + 1] - b[i];
    }
    CHECK(total == n);
    CHECK(b[1] - b[0] == 4 * n / 10);
    CHECK(b[2] - b[1] == n / 10);
    CHECK(b[3] - b[2] == n / 10);
  }
}

TEST_CASE("normalization") {
  const auto train = testing::series(2, 1, 64, {1, 3});
  const auto stats = fit_normalization(train);
  CHECK(stats.mean[0] == 2.0);
  CHECK(stats.std[0] == 1.0);
  const auto z = apply_normalization(train, stats);
  CHECK(z.data(0, 0) == -1.0);
  CHECK(z.data(1, 0) == 1.0);
  CHECK(apply_normalization(testing::series(1, 1, 64, {5}), stats).data(0, 0) == 3.0);

  const auto x = testing::random_series(1000, 8, 64, 6);
  auto shifted = x;
  for (auto& v : shifted.data.values()) v = 3 * v + 7;
  const auto st = fit_normalization(shifted);
  const auto n = apply_normalization(shifted, st);
  for (std::size_t c = 0; c < 8; ++c) {
    const auto col = n.data.col(c);
    const double mean = std::accumulate(col.begin(), col.end(), 0.0) / col.size();
    double var = 0;
    for (double v : col) var += (v - mean) * (v - mean);
    CHECK(std::abs(mean) <= 1e-10);
    CHECK(std::abs(std::sqrt(var / col.size()) - 1.0) <= 1e-10);
  }
  const auto back = invert_normalization(n, st);
  for (std::size_t i = 0; i < back.data.size(); ++i)
    CHECK(back.data.values()[i] == doctest::Approx(shifted.data.values()[i]).epsilon(1e-12));

  CHECK_THROWS_AS(fit_normalization(testing::series(5, 1, 64, {2, 2, 2, 2, 2})), ValidationError);
}

TEST_CASE("time series invariants") {
  auto x = testing::series(3, 2, 64);
  CHECK_NOTHROW(x.validate());
  x.channel_names[1] = x.channel_names[0];
  CHECK_THROWS_AS(x.validate(), ValidationError);
  auto y = testing::series(3, 1, 64);
  y.data(1, 0) = std::nan("");
  CHECK_THROWS_AS(y.validate(), ValidationError);
  auto z = testing::series(3, 1, 0.0);
  CHECK_THROWS_AS(z.validate(), ValidationError);
}

TEST_CASE("preprocess chain and persistence") {
  const double fs = 256;
  auto raw = testing::random_series(256 * 30, 4, fs, 7);
  for (std::size_t t = 0; t < raw.n_samples(); ++t)
    for (std::size_t c = 0; c < 4; ++c) raw.data(t, c) += 10.0;  // DC offset
  const auto y = preprocess(raw, PreprocessConfig{0.5, 4, 64}, IdentityArtifactRemover{});
  CHECK(y.fs == 64);
  CHECK(y.n_samples() == 64 * 30);
  for (std::size_t t = 0; t < y.n_samples(); ++t) {
    double m = 0;
    for (double v : y.data.row(t)) m += v;
    CHECK(std::abs(m) < 1e-9);
  }

  const auto dir = testing::scratch("signal_io");
  write_timeseries(dir / "x.bin", y, {{"subject", "s1"}});
  nlohmann::json side;
  const auto back = read_timeseries(dir / "x.bin", &side);
  CHECK(side.at("subject") == "s1");
  CHECK(back.fs == 64);
  CHECK(back.channel_names == y.channel_names);
  for (std::size_t i = 0; i < y.data.size(); ++i)
    CHECK(back.data.values()[i] == static_cast<double>(static_cast<float>(y.data.values()[i])));
}
