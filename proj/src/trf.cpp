#include "phonotrack/trf.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "phonotrack/error.hpp"
#include "phonotrack/io.hpp"
#include "phonotrack/simd.hpp"

namespace phonotrack::trf {

std::vector<double> LaggedDesignMatrix::lag_times_ms() const {
  std::vector<double> out(n_lags);
  for (std::size_t l = 0; l < n_lags; ++l) out[l] = 1000.0 * static_cast<double>(l) / fs;
  return out;
}

LaggedDesignMatrix LaggedDesignMatrix::rows(std::size_t begin, std::size_t end) const {
  return LaggedDesignMatrix{data.slice_rows(begin, end), n_dims, n_lags, fs, dim_names};
}

std::size_t lag_count(double window_ms, double fs) {
  if (!(window_ms >= 0.0)) throw ValidationError("integration window must be >= 0 ms");
  return static_cast<std::size_t>(std::floor(window_ms * fs / 1000.0 + 1e-9)) + 1;
}

LaggedDesignMatrix build_lagged_matrix(const Matrix<double>& features, double fs, double window_ms,
                                       std::vector<std::string> dim_names) {
  const std::size_t L = lag_count(window_ms, fs);
  const std::size_t T = features.rows(), D = features.cols();
  if (dim_names.empty())
    for (std::size_t d = 0; d < D; ++d) dim_names.push_back("dim" + std::to_string(d));
  LaggedDesignMatrix S{Matrix<double>(T, D * L, 0.0), D, L, fs, std::move(dim_names)};
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t d = 0; d < D; ++d)
      for (std::size_t l = 0; l < L && l <= t; ++l) S.data(t, d * L + l) = features(t - l, d);
  return S;
}

LaggedDesignMatrix build_lagged_matrix(const features::FeatureMatrix& f, double window_ms) {
  return build_lagged_matrix(f.data, f.fs, window_ms, f.dim_names);
}

LaggedDesignMatrix concat(const LaggedDesignMatrix& a, const LaggedDesignMatrix& b) {
  if (a.data.cols() != b.data.cols() || a.n_lags != b.n_lags) throw ValidationError("design layouts differ");
  std::vector<double> v = a.data.values();
  v.insert(v.end(), b.data.values().begin(), b.data.values().end());
  return LaggedDesignMatrix{Matrix<double>(a.data.rows() + b.data.rows(), a.data.cols(), std::move(v)), a.n_dims,
                            a.n_lags, a.fs, a.dim_names};
}

signal::TimeSeries concat(const signal::TimeSeries& a, const signal::TimeSeries& b) {
  if (a.n_channels() != b.n_channels()) throw ValidationError("channel counts differ");
  std::vector<double> v = a.data.values();
  v.insert(v.end(), b.data.values().begin(), b.data.values().end());
  return signal::TimeSeries{Matrix<double>(a.n_samples() + b.n_samples(), a.n_channels(), std::move(v)), a.fs,
                            a.channel_names};
}

// ---------------------------------------------------------------------------

nlohmann::json TrfModel::to_json() const {
  return {{"lambda", lambda},         {"fs", fs},
          {"n_dims", n_dims},         {"n_lags", n_lags},
          {"lag_times_ms", lag_times_ms}, {"dim_names", dim_names},
          {"channel_names", channel_names}, {"weights", weights.values()}};
}

TrfModel TrfModel::from_json(const nlohmann::json& j) {
  TrfModel m;
  try {
    m.lambda = j.at("lambda").get<double>();
    m.fs = j.at("fs").get<double>();
    m.n_dims = j.at("n_dims").get<std::size_t>();
    m.n_lags = j.at("n_lags").get<std::size_t>();
    m.lag_times_ms = j.at("lag_times_ms").get<std::vector<double>>();
    m.dim_names = j.at("dim_names").get<std::vector<std::string>>();
    m.channel_names = j.at("channel_names").get<std::vector<std::string>>();
    auto w = j.at("weights").get<std::vector<double>>();
    if (w.size() != m.n_dims * m.n_lags * m.channel_names.size()) throw ValidationError("weight count mismatch");
    m.weights = Matrix<double>(m.n_dims * m.n_lags, m.channel_names.size(), std::move(w));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("TRF model: ") + e.what());
  }
  return m;
}

namespace {

Matrix<double> transpose(const Matrix<double>& m) {
  Matrix<double> t(m.cols(), m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) t(c, r) = m(r, c);
  return t;
}

}  // namespace

NormalEquations normal_equations(const LaggedDesignMatrix& S, const signal::TimeSeries& R) {
  if (S.data.rows() != R.n_samples())
    throw ValidationError("design has " + std::to_string(S.data.rows()) + " rows but EEG has " +
                          std::to_string(R.n_samples()) + " samples");
  const std::size_t P = S.data.cols(), C = R.n_channels(), T = R.n_samples();
  const Matrix<double> St = transpose(S.data);
  const Matrix<double> Rt = transpose(R.data);
  NormalEquations ne{Matrix<double>(P, P), Matrix<double>(P, C)};
  for (std::size_t i = 0; i < P; ++i) {
    for (std::size_t j = i; j < P; ++j) {
      const double v = simd::dot(St.row(i).data(), St.row(j).data(), T);
      ne.gram(i, j) = v;
      ne.gram(j, i) = v;
    }
    for (std::size_t c = 0; c < C; ++c) ne.cross(i, c) = simd::dot(St.row(i).data(), Rt.row(c).data(), T);
  }
  return ne;
}

Matrix<double> solve_ridge(const NormalEquations& ne, double lambda) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ValidationError("lambda must be finite and >= 0");
  const auto P = static_cast<Eigen::Index>(ne.gram.rows());
  const auto C = static_cast<Eigen::Index>(ne.cross.cols());
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  RowMat A = Eigen::Map<const RowMat>(ne.gram.data(), P, P);
  A.diagonal().array() += lambda;
  Eigen::LLT<RowMat> llt(A);
  if (llt.info() != Eigen::Success) throw RuntimeError("ridge system is not positive definite (singular at lambda=0?)");
  if (lambda == 0.0) {
    const double max_diag = A.diagonal().maxCoeff();
    const double min_pivot = llt.matrixLLT().diagonal().array().square().minCoeff();
    if (!(max_diag > 0.0) || min_pivot < 1e-12 * max_diag)
      throw RuntimeError("S'S is numerically singular; use lambda > 0");
  }
  RowMat W = llt.solve(Eigen::Map<const RowMat>(ne.cross.data(), P, C));
  Matrix<double> out(static_cast<std::size_t>(P), static_cast<std::size_t>(C));
  Eigen::Map<RowMat>(out.data(), P, C) = W;
  for (double v : out.values())
    if (!std::isfinite(v)) throw RuntimeError("ridge solution is not finite");
  return out;
}

double normal_equation_residual(const NormalEquations& ne, const Matrix<double>& W, double lambda) {
  const std::size_t P = ne.gram.rows(), C = ne.cross.cols();
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < P; ++i)
    for (std::size_t c = 0; c < C; ++c) {
      double v = lambda * W(i, c);
      for (std::size_t k = 0; k < P; ++k) v += ne.gram(i, k) * W(k, c);
      const double r = v - ne.cross(i, c);
      num += r * r;
      den += ne.cross(i, c) * ne.cross(i, c);
    }
  return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

double ridge_objective(const LaggedDesignMatrix& S, const signal::TimeSeries& R, const Matrix<double>& W,
                       double lambda) {
  const std::size_t P = S.data.cols(), C = R.n_channels();
  const Matrix<double> Wt = transpose(W);
  double obj = 0.0;
  for (std::size_t t = 0; t < R.n_samples(); ++t)
    for (std::size_t c = 0; c < C; ++c) {
      const double e = simd::dot(S.data.row(t).data(), Wt.row(c).data(), P) - R.data(t, c);
      obj += e * e;
    }
  for (double w : W.values()) obj += lambda * w * w;
  return obj;
}

TrfModel ridge_fit(const LaggedDesignMatrix& S, const signal::TimeSeries& R, double lambda) {
  const auto ne = normal_equations(S, R);
  TrfModel m;
  m.weights = solve_ridge(ne, lambda);
  m.lambda = lambda;
  m.fs = S.fs;
  m.n_dims = S.n_dims;
  m.n_lags = S.n_lags;
  m.lag_times_ms = S.lag_times_ms();
  m.dim_names = S.dim_names;
  m.channel_names = R.channel_names;
  return m;
}

signal::TimeSeries predict_eeg(const TrfModel& model, const LaggedDesignMatrix& S) {
  if (S.data.cols() != model.weights.rows())
    throw ValidationError("design has " + std::to_string(S.data.cols()) + " columns, model expects " +
                          std::to_string(model.weights.rows()));
  const std::size_t P = S.data.cols(), C = model.n_channels();
  signal::TimeSeries out{Matrix<double>(S.data.rows(), C, 0.0), S.fs, model.channel_names};
  for (std::size_t t = 0; t < S.data.rows(); ++t) {
    double* dst = out.data.row(t).data();
    const auto row = S.data.row(t);
    for (std::size_t p = 0; p < P; ++p)
      if (row[p] != 0.0) simd::axpy(row[p], model.weights.row(p).data(), dst, C);
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<double> midranks(std::span<const double> x) {
  const std::size_t n = x.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i + 1;
    while (j < n && x[order[j]] == x[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = r;
    i = j;
  }
  return ranks;
}

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ValidationError("spearman: inputs differ in length");
  if (a.size() < 2) throw ValidationError("spearman: need at least two observations");
  const auto ra = midranks(a), rb = midranks(b);
  const double n = static_cast<double>(a.size());
  const double mean = (n + 1.0) / 2.0;  // mid-ranks always average to (n+1)/2
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    const double da = ra[i] - mean, db = rb[i] - mean;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) throw ValidationError("spearman: undefined for a constant input");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

namespace {

double subset_mean(const std::vector<std::string>& channels, const std::vector<double>& rho,
                   const std::vector<std::string>& subset) {
  double sum = 0.0;
  for (const auto& name : subset) {
    auto it = std::find(channels.begin(), channels.end(), name);
    if (it == channels.end()) throw ValidationError("evaluation channel not present in EEG: " + name);
    sum += rho[static_cast<std::size_t>(it - channels.begin())];
  }
  return sum / static_cast<double>(subset.size());
}

std::vector<double> per_channel_rho(const signal::TimeSeries& pred, const signal::TimeSeries& R) {
  std::vector<double> rho(R.n_channels());
  for (std::size_t c = 0; c < R.n_channels(); ++c) {
    const auto p = pred.data.col(c), r = R.data.col(c);
    rho[c] = spearman(p, r);
  }
  return rho;
}

}  // namespace

EvaluationReport evaluate(const TrfModel& model, const LaggedDesignMatrix& S, const signal::TimeSeries& R,
                          const std::vector<std::string>& subset, std::string subject, std::string scheme) {
  if (S.data.rows() != R.n_samples()) throw ValidationError("design and EEG lengths differ");
  EvaluationReport rep;
  rep.subject = std::move(subject);
  rep.scheme = std::move(scheme);
  rep.lambda = model.lambda;
  rep.channel_names = R.channel_names;
  rep.rho = per_channel_rho(predict_eeg(model, S), R);
  rep.subset = subset.empty() ? R.channel_names : subset;
  rep.mean_subset_rho = subset_mean(rep.channel_names, rep.rho, rep.subset);
  return rep;
}

LambdaSelection select_lambda(const LaggedDesignMatrix& S_train, const signal::TimeSeries& R_train,
                              const LaggedDesignMatrix& S_val, const signal::TimeSeries& R_val,
                              std::span<const double> grid, const std::vector<std::string>& subset) {
  if (grid.empty()) throw ValidationError("lambda grid is empty");
  const auto ne = normal_equations(S_train, R_train);
  TrfModel m;
  m.n_dims = S_train.n_dims;
  m.n_lags = S_train.n_lags;
  m.fs = S_train.fs;
  m.channel_names = R_train.channel_names;
  const auto& eval_subset = subset.empty() ? R_val.channel_names : subset;

  LambdaSelection sel;
  sel.grid.assign(grid.begin(), grid.end());
  std::vector<std::size_t> order(grid.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return grid[a] < grid[b]; });
  sel.mean_rho.assign(grid.size(), 0.0);
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t idx : order) {
    m.lambda = grid[idx];
    m.weights = solve_ridge(ne, grid[idx]);
    const auto rho = per_channel_rho(predict_eeg(m, S_val), R_val);
    sel.mean_rho[idx] = subset_mean(R_val.channel_names, rho, eval_subset);
    if (sel.mean_rho[idx] > best) {
      best = sel.mean_rho[idx];
      sel.lambda = grid[idx];
    }
  }
  return sel;
}

std::vector<double> default_lambda_grid() {
  std::vector<double> g(10);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = std::pow(10.0, -3.0 + static_cast<double>(i));
  return g;
}

const std::vector<std::string>& biosemi64_channels() {
  static const std::vector<std::string> names{
      "Fp1", "AF7", "AF3", "F1",  "F3",  "F5",  "F7",  "FT7", "FC5", "FC3", "FC1", "C1",  "C3",
      "C5",  "T7",  "TP7", "CP5", "CP3", "CP1", "P1",  "P3",  "P5",  "P7",  "P9",  "PO7", "PO3",
      "O1",  "Iz",  "Oz",  "POz", "Pz",  "CPz", "Fpz", "Fp2", "AF8", "AF4", "AFz", "Fz",  "F2",
      "F4",  "F6",  "F8",  "FT8", "FC6", "FC4", "FC2", "FCz", "Cz",  "C2",  "C4",  "C6",  "T8",
      "TP8", "CP6", "CP4", "CP2", "P2",  "P4",  "P6",  "P8",  "P10", "PO8", "PO4", "O2"};
  return names;
}

const std::vector<std::string>& default_channel_subset() {
  static const std::vector<std::string> names{"AF7", "F7",  "F5", "F3",  "F1",  "FT7", "FC5", "FC3", "FC1",
                                              "T7",  "C5",  "TP7", "CP5", "AF8", "F8",  "F6",  "F4",  "F2",
                                              "FT8", "FC6", "FC4", "FC2", "T8",  "C6",  "TP8", "CP6", "Fz"};
  return names;
}

// ---------------------------------------------------------------------------

TrfTensor extract_trf(const TrfModel& model) {
  TrfTensor t;
  t.n_dims = model.n_dims;
  t.n_lags = model.n_lags;
  t.n_channels = model.n_channels();
  t.values = model.weights.values();  // row (d*L + l), column c is already (d, l, c) order
  t.lag_times_ms = model.lag_times_ms;
  t.dim_names = model.dim_names;
  t.channel_names = model.channel_names;
  return t;
}

Matrix<double> flatten(const TrfTensor& trf) {
  return Matrix<double>(trf.n_dims * trf.n_lags, trf.n_channels, trf.values);
}

std::vector<double> trf_window_average(const TrfTensor& trf, std::size_t dim, double lo_ms, double hi_ms) {
  if (dim >= trf.n_dims) throw ValidationError("TRF dimension out of range");
  if (!trf.lag_times_ms.empty() && (lo_ms > trf.lag_times_ms.back() || hi_ms < trf.lag_times_ms.front()))
    throw ValidationError("window lies outside the lag range");
  std::vector<double> out(trf.n_channels, 0.0);
  std::size_t count = 0;
  for (std::size_t l = 0; l < trf.n_lags; ++l) {
    const double t = trf.lag_times_ms[l];
    if (t < lo_ms || t > hi_ms) continue;
    ++count;
    for (std::size_t c = 0; c < trf.n_channels; ++c) out[c] += trf.at(dim, l, c);
  }
  if (count == 0) throw ValidationError("window [" + io::fmt_double(lo_ms) + ", " + io::fmt_double(hi_ms) +
                                        "] ms contains no lags");
  for (double& v : out) v /= static_cast<double>(count);
  return out;
}

std::vector<double> channel_correlation_map(std::span<const EvaluationReport> reports) {
  if (reports.empty()) throw ValidationError("no reports to average");
  const auto& channels = reports.front().channel_names;
  std::vector<double> sum(channels.size(), 0.0);
  for (const auto& r : reports) {
    if (r.channel_names != channels) throw ValidationError("reports do not share a channel set");
    for (std::size_t c = 0; c < channels.size(); ++c) sum[c] += r.rho[c];
  }
  for (double& v : sum) v /= static_cast<double>(reports.size());
  return sum;
}

std::string trf_csv(const TrfModel& model) {
  std::string out = "dim_name,lag_ms,channel,weight\n";
  for (std::size_t d = 0; d < model.n_dims; ++d)
    for (std::size_t l = 0; l < model.n_lags; ++l)
      for (std::size_t c = 0; c < model.n_channels(); ++c)
        out += model.dim_names[d] + ',' + io::fmt_double(model.lag_times_ms[l]) + ',' + model.channel_names[c] + ',' +
               io::fmt_double(model.weights(d * model.n_lags + l, c)) + '\n';
  return out;
}

std::string correlation_csv(std::span<const EvaluationReport> reports) {
  std::string out = "subject,scheme,channel,rho,lambda\n";
  for (const auto& r : reports)
    for (std::size_t c = 0; c < r.channel_names.size(); ++c)
      out += r.subject + ',' + r.scheme + ',' + r.channel_names[c] + ',' + io::fmt_double(r.rho[c]) + ',' +
             io::fmt_double(r.lambda) + '\n';
  return out;
}

std::string topo_csv(const std::vector<std::string>& channels, std::span<const double> values, double lo_ms,
                     double hi_ms) {
  auto cell = [](double v) { return std::isnan(v) ? std::string() : io::fmt_double(v); };
  std::string out = "channel,value,window_lo_ms,window_hi_ms\n";
  for (std::size_t c = 0; c < channels.size(); ++c)
    out += channels[c] + ',' + io::fmt_double(values[c]) + ',' + cell(lo_ms) + ',' + cell(hi_ms) + '\n';
  return out;
}

}  // namespace phonotrack::trf
