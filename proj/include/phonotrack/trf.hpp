#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "phonotrack/features.hpp"
#include "phonotrack/matrix.hpp"
#include "phonotrack/signal.hpp"

namespace phonotrack::trf {

// Stimulus lagged over the integration window. Column d*L + l at row t holds
// feature d at sample t - l (zero before the recording starts).
struct LaggedDesignMatrix {
  Matrix<double> data;
  std::size_t n_dims = 0;
  std::size_t n_lags = 0;
  double fs = 0.0;
  std::vector<std::string> dim_names;

  std::vector<double> lag_times_ms() const;
  // Rows [begin, end) of the design; lags keep their history from earlier rows.
  LaggedDesignMatrix rows(std::size_t begin, std::size_t end) const;
};

// floor(window_ms * fs / 1000) + 1, lag 0 included.
std::size_t lag_count(double window_ms, double fs);

LaggedDesignMatrix build_lagged_matrix(const Matrix<double>& features, double fs, double window_ms,
                                       std::vector<std::string> dim_names = {});
LaggedDesignMatrix build_lagged_matrix(const features::FeatureMatrix& features, double window_ms);

// Stacks designs with identical layout (e.g. the two training partitions).
LaggedDesignMatrix concat(const LaggedDesignMatrix& a, const LaggedDesignMatrix& b);
signal::TimeSeries concat(const signal::TimeSeries& a, const signal::TimeSeries& b);

struct TrfModel {
  Matrix<double> weights;  // (D*L) x C
  double lambda = 0.0;
  double fs = 0.0;
  std::size_t n_dims = 0;
  std::size_t n_lags = 0;
  std::vector<double> lag_times_ms;
  std::vector<std::string> dim_names;
  std::vector<std::string> channel_names;

  std::size_t n_channels() const { return weights.cols(); }
  nlohmann::json to_json() const;
  static TrfModel from_json(const nlohmann::json& j);
};

// Gram matrix S'S and cross-covariance S'R, shared by every lambda of a grid.
struct NormalEquations {
  Matrix<double> gram;   // P x P
  Matrix<double> cross;  // P x C
};

NormalEquations normal_equations(const LaggedDesignMatrix& S, const signal::TimeSeries& R);

// Solves (S'S + lambda I) W = S'R by Cholesky. Throws RuntimeError when lambda
// is 0 and the Gram matrix is singular.
Matrix<double> solve_ridge(const NormalEquations& ne, double lambda);

// || (S'S + lambda I) W - S'R ||_F / || S'R ||_F
double normal_equation_residual(const NormalEquations& ne, const Matrix<double>& W, double lambda);

// ||S W - R||^2 + lambda ||W||^2
double ridge_objective(const LaggedDesignMatrix& S, const signal::TimeSeries& R, const Matrix<double>& W,
                       double lambda);

TrfModel ridge_fit(const LaggedDesignMatrix& S, const signal::TimeSeries& R, double lambda);

signal::TimeSeries predict_eeg(const TrfModel& model, const LaggedDesignMatrix& S);

// Fractional (mid) ranks, 1-based.
std::vector<double> midranks(std::span<const double> x);

// Pearson correlation of mid-ranks. Throws ValidationError for lengths < 2,
// unequal lengths or a constant input.
double spearman(std::span<const double> a, std::span<const double> b);

struct EvaluationReport {
  std::string subject;
  std::string scheme;
  double lambda = 0.0;
  std::vector<std::string> channel_names;
  std::vector<double> rho;
  std::vector<std::string> subset;
  double mean_subset_rho = 0.0;
};

// Spearman correlation per channel between R and the model prediction from S.
EvaluationReport evaluate(const TrfModel& model, const LaggedDesignMatrix& S, const signal::TimeSeries& R,
                          const std::vector<std::string>& subset, std::string subject = {}, std::string scheme = {});

struct LambdaSelection {
  double lambda = 0.0;
  std::vector<double> grid;
  std::vector<double> mean_rho;  // validation mean over the subset, per grid value
};

// Fits on the training design for every grid value and keeps the one with the
// highest mean validation Spearman over `subset`; ties go to the smallest lambda.
LambdaSelection select_lambda(const LaggedDesignMatrix& S_train, const signal::TimeSeries& R_train,
                              const LaggedDesignMatrix& S_val, const signal::TimeSeries& R_val,
                              std::span<const double> grid, const std::vector<std::string>& subset);

// 10 log-spaced values over [1e-3, 1e6].
std::vector<double> default_lambda_grid();

// BioSemi 64-channel labels in cap order.
const std::vector<std::string>& biosemi64_channels();
// 27 fronto-temporal channels used when no subset is configured.
const std::vector<std::string>& default_channel_subset();

// W reshaped to dims x lags x channels.
struct TrfTensor {
  std::size_t n_dims = 0, n_lags = 0, n_channels = 0;
  std::vector<double> values;
  std::vector<double> lag_times_ms;
  std::vector<std::string> dim_names;
  std::vector<std::string> channel_names;

  double at(std::size_t d, std::size_t l, std::size_t c) const { return values[(d * n_lags + l) * n_channels + c]; }
};

TrfTensor extract_trf(const TrfModel& model);
Matrix<double> flatten(const TrfTensor& trf);

// Mean over lags with lo_ms <= lag <= hi_ms for one dimension, per channel.
std::vector<double> trf_window_average(const TrfTensor& trf, std::size_t dim, double lo_ms, double hi_ms);

// Per-channel mean rho across reports sharing one channel set.
std::vector<double> channel_correlation_map(std::span<const EvaluationReport> reports);

std::string trf_csv(const TrfModel& model);
std::string correlation_csv(std::span<const EvaluationReport> reports);
std::string topo_csv(const std::vector<std::string>& channels, std::span<const double> values, double lo_ms,
                     double hi_ms);

}  // namespace phonotrack::trf
