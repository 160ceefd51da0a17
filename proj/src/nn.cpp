#include "phonotrack/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "phonotrack/error.hpp"
#include "phonotrack/io.hpp"
#include "phonotrack/simd.hpp"

namespace phonotrack::nn {

// ---------------------------------------------------------------------------
// Configuration and layout

std::size_t ModelConfig::frames() const {
  if (window_samples < time_kernel || time_stride == 0) return 0;
  return (window_samples - time_kernel) / time_stride + 1;
}

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ValidationError(std::string("model.") + name + " must be > 0");
  };
  positive(eeg_channels, "eeg_channels");
  positive(feature_dims, "feature_dims");
  positive(window_samples, "window_samples");
  positive(time_kernel, "time_kernel");
  positive(time_stride, "time_stride");
  positive(eeg_filters, "eeg_filters");
  positive(speech_filters, "speech_filters");
  positive(lstm_units, "lstm_units");
  positive(head_hidden, "head_hidden");
  if (time_kernel > window_samples) throw ValidationError("model.time_kernel exceeds model.window_samples");
}

std::vector<TensorInfo> tensor_layout(const ModelConfig& c) {
  const std::size_t U = c.lstm_units, K = c.speech_filters;
  const std::vector<std::tuple<const char*, const char*, std::size_t>> spec{
      {"eeg_conv.w", "eeg_conv", c.eeg_filters * c.time_kernel * c.eeg_channels},
      {"eeg_conv.b", "eeg_conv", c.eeg_filters},
      {"eeg_dense.w", "eeg_dense", U * c.eeg_filters},
      {"eeg_dense.b", "eeg_dense", U},
      {"speech_conv.w", "speech_conv", K * c.time_kernel * c.feature_dims},
      {"speech_conv.b", "speech_conv", K},
      {"lstm.w", "lstm", 4 * U * (K + U)},
      {"lstm.b", "lstm", 4 * U},
      {"head.w1", "head", c.head_hidden * c.frames()},
      {"head.b1", "head", c.head_hidden},
      {"head.w2", "head", c.head_hidden},
  };
  std::vector<TensorInfo> out;
  std::size_t offset = 0;
  for (const auto& [name, group, size] : spec) {
    out.push_back({name, group, offset, size});
    offset += size;
  }
  return out;
}

std::size_t ModelConfig::parameter_count() const {
  const auto l = tensor_layout(*this);
  return l.back().offset + l.back().size;
}

nlohmann::json ModelConfig::to_json() const {
  return {{"eeg_channels", eeg_channels},     {"feature_dims", feature_dims}, {"window_samples", window_samples},
          {"time_kernel", time_kernel},       {"time_stride", time_stride},   {"eeg_filters", eeg_filters},
          {"speech_filters", speech_filters}, {"lstm_units", lstm_units},     {"head_hidden", head_hidden}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  auto get = [&](const char* key, std::size_t& dst) {
    if (j.contains(key)) dst = j.at(key).get<std::size_t>();
  };
  get("eeg_channels", c.eeg_channels);
  get("feature_dims", c.feature_dims);
  get("window_samples", c.window_samples);
  get("time_kernel", c.time_kernel);
  get("time_stride", c.time_stride);
  get("eeg_filters", c.eeg_filters);
  get("speech_filters", c.speech_filters);
  get("lstm_units", c.lstm_units);
  get("head_hidden", c.head_hidden);
  return c;
}

namespace {

const TensorInfo& find_tensor(const ModelConfig& cfg, const std::string& name) {
  static thread_local std::vector<TensorInfo> cache;
  static thread_local ModelConfig cached_cfg{};
  static thread_local bool valid = false;
  if (!valid || !(cached_cfg == cfg)) {
    cache = tensor_layout(cfg);
    cached_cfg = cfg;
    valid = true;
  }
  for (const auto& t : cache)
    if (t.name == name) return t;
  throw ValidationError("no tensor named " + name);
}

}  // namespace

template <class T>
std::span<T> ModelParams<T>::tensor(const std::string& name) {
  const auto& t = find_tensor(cfg, name);
  return {flat.data() + t.offset, t.size};
}

template <class T>
std::span<const T> ModelParams<T>::tensor(const std::string& name) const {
  const auto& t = find_tensor(cfg, name);
  return {flat.data() + t.offset, t.size};
}

template <class T>
ModelParams<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelParams<T> p{cfg, std::vector<T>(cfg.parameter_count(), T(0))};
  std::mt19937_64 rng(seed);
  auto fill = [&](const std::string& name, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (T& v : p.tensor(name)) v = static_cast<T>(dist(rng));
  };
  fill("eeg_conv.w", cfg.time_kernel * cfg.eeg_channels);
  fill("eeg_dense.w", cfg.eeg_filters);
  fill("speech_conv.w", cfg.time_kernel * cfg.feature_dims);
  fill("lstm.w", cfg.speech_filters + cfg.lstm_units);
  fill("head.w1", cfg.frames());
  auto lb = p.tensor("lstm.b");
  for (std::size_t i = cfg.lstm_units; i < 2 * cfg.lstm_units; ++i) lb[i] = T(1);
  return p;
}

// ---------------------------------------------------------------------------
// Forward pass

namespace {

template <class T>
T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <class T>
constexpr T kNormFloor = T(1e-20);

struct Dims {
  std::size_t C, D, W, Tk, S, F, K, U, H, Fr;
  explicit Dims(const ModelConfig& c)
      : C(c.eeg_channels), D(c.feature_dims), W(c.window_samples), Tk(c.time_kernel), S(c.time_stride),
        F(c.eeg_filters), K(c.speech_filters), U(c.lstm_units), H(c.head_hidden), Fr(c.frames()) {}
};

// Raw pointers into the flat parameter (or gradient) vector.
template <class T>
struct Tensors {
  T *eeg_w, *eeg_b, *dense_w, *dense_b, *sp_w, *sp_b, *lstm_w, *lstm_b, *w1, *b1, *w2;

  static Tensors bind(const ModelConfig& cfg, T* base) {
    const auto l = tensor_layout(cfg);
    return {base + l[0].offset, base + l[1].offset, base + l[2].offset, base + l[3].offset,
            base + l[4].offset, base + l[5].offset, base + l[6].offset, base + l[7].offset,
            base + l[8].offset, base + l[9].offset, base + l[10].offset};
  }
};

template <class T>
struct EegCache {
  std::vector<T> u;  // Fr x F, tanh(conv)
  std::vector<T> e;  // Fr x U
};

template <class T>
struct SpeechCache {
  std::vector<T> v;                          // Fr x K, tanh(conv)
  std::vector<T> z;                          // Fr x (K+U), [v_t ; h_{t-1}]
  std::vector<T> ig, fg, gg, og, c, tc, h;   // Fr x U each
};

template <class T>
struct HeadCache {
  std::vector<T> s;   // Fr
  std::vector<T> a1;  // H
  T score = 0;
};

template <class T>
void check_shapes(const Dims& d, MatrixView<T> eeg, MatrixView<T> a, MatrixView<T> b) {
  if (eeg.rows != d.W || eeg.cols != d.C)
    throw ValidationError("EEG window must be " + std::to_string(d.W) + " x " + std::to_string(d.C));
  for (auto* s : {&a, &b})
    if (s->rows != d.W || s->cols != d.D)
      throw ValidationError("speech window must be " + std::to_string(d.W) + " x " + std::to_string(d.D));
}

template <class T>
void eeg_forward(const Dims& d, const Tensors<const T>& p, MatrixView<T> eeg, EegCache<T>& c) {
  const std::size_t win = d.Tk * d.C;
  c.u.resize(d.Fr * d.F);
  c.e.resize(d.Fr * d.U);
  for (std::size_t t = 0; t < d.Fr; ++t) {
    const T* x = eeg.ptr + t * d.S * d.C;
    for (std::size_t f = 0; f < d.F; ++f) c.u[t * d.F + f] = std::tanh(p.eeg_b[f] + simd::dot(p.eeg_w + f * win, x, win));
    for (std::size_t j = 0; j < d.U; ++j)
      c.e[t * d.U + j] = p.dense_b[j] + simd::dot(p.dense_w + j * d.F, c.u.data() + t * d.F, d.F);
  }
}

template <class T>
void lstm_run(std::size_t Fr, std::size_t K, std::size_t U, const T* w, const T* b, const T* x /* Fr x K */,
              SpeechCache<T>& c) {
  const std::size_t Z = K + U;
  c.z.assign(Fr * Z, T(0));
  for (auto* v : {&c.ig, &c.fg, &c.gg, &c.og, &c.c, &c.tc, &c.h}) v->assign(Fr * U, T(0));
  std::vector<T> pre(4 * U);
  for (std::size_t t = 0; t < Fr; ++t) {
    T* z = c.z.data() + t * Z;
    std::copy(x + t * K, x + (t + 1) * K, z);
    if (t > 0) std::copy(c.h.data() + (t - 1) * U, c.h.data() + t * U, z + K);
    for (std::size_t g = 0; g < 4 * U; ++g) pre[g] = b[g] + simd::dot(w + g * Z, z, Z);
    for (std::size_t j = 0; j < U; ++j) {
      const std::size_t o = t * U + j;
      c.ig[o] = sigmoid(pre[j]);
      c.fg[o] = sigmoid(pre[U + j]);
      c.gg[o] = std::tanh(pre[2 * U + j]);
      c.og[o] = sigmoid(pre[3 * U + j]);
      const T prev = t > 0 ? c.c[o - U] : T(0);
      c.c[o] = c.fg[o] * prev + c.ig[o] * c.gg[o];
      c.tc[o] = std::tanh(c.c[o]);
      c.h[o] = c.og[o] * c.tc[o];
    }
  }
}

template <class T>
void speech_forward(const Dims& d, const Tensors<const T>& p, MatrixView<T> speech, SpeechCache<T>& c) {
  const std::size_t win = d.Tk * d.D;
  c.v.resize(d.Fr * d.K);
  for (std::size_t t = 0; t < d.Fr; ++t) {
    const T* x = speech.ptr + t * d.S * d.D;
    for (std::size_t k = 0; k < d.K; ++k) c.v[t * d.K + k] = std::tanh(p.sp_b[k] + simd::dot(p.sp_w + k * win, x, win));
  }
  lstm_run(d.Fr, d.K, d.U, p.lstm_w, p.lstm_b, c.v.data(), c);
}

template <class T>
T cosine(const T* x, const T* y, std::size_t n, T* nx_out = nullptr, T* ny_out = nullptr) {
  const T nx = std::sqrt(simd::dot(x, x, n));
  const T ny = std::sqrt(simd::dot(y, y, n));
  if (nx_out) *nx_out = nx;
  if (ny_out) *ny_out = ny;
  if (nx * ny <= kNormFloor<T>) return T(0);
  return simd::dot(x, y, n) / (nx * ny);
}

template <class T>
void head_forward(const Dims& d, const Tensors<const T>& p, const EegCache<T>& e, const SpeechCache<T>& s,
                  HeadCache<T>& h) {
  h.s.resize(d.Fr);
  for (std::size_t t = 0; t < d.Fr; ++t) h.s[t] = cosine(e.e.data() + t * d.U, s.h.data() + t * d.U, d.U);
  h.a1.resize(d.H);
  for (std::size_t j = 0; j < d.H; ++j) h.a1[j] = std::tanh(p.b1[j] + simd::dot(p.w1 + j * d.Fr, h.s.data(), d.Fr));
  h.score = simd::dot(p.w2, h.a1.data(), d.H);
}

template <class T>
struct Workspace {
  EegCache<T> eeg;
  SpeechCache<T> sp[2];
  HeadCache<T> head[2];
};

template <class T>
T forward_cached(const ModelParams<T>& params, MatrixView<T> eeg, MatrixView<T> a, MatrixView<T> b, Workspace<T>& ws) {
  const Dims d(params.cfg);
  check_shapes(d, eeg, a, b);
  const auto p = Tensors<const T>::bind(params.cfg, params.flat.data());
  eeg_forward(d, p, eeg, ws.eeg);
  speech_forward(d, p, a, ws.sp[0]);
  speech_forward(d, p, b, ws.sp[1]);
  head_forward(d, p, ws.eeg, ws.sp[0], ws.head[0]);
  head_forward(d, p, ws.eeg, ws.sp[1], ws.head[1]);
  const T prob = sigmoid(ws.head[0].score - ws.head[1].score);
  if (!std::isfinite(prob)) throw RuntimeError("non-finite activation in forward pass");
  return prob;
}

}  // namespace

template <class T>
std::vector<T> cosine_per_frame(MatrixView<T> x, MatrixView<T> y) {
  if (x.rows != y.rows || x.cols != y.cols) throw ValidationError("cosine_per_frame: shapes differ");
  std::vector<T> out(x.rows);
  for (std::size_t t = 0; t < x.rows; ++t) out[t] = cosine(x.row(t).data(), y.row(t).data(), x.cols);
  return out;
}

template <class T>
Matrix<T> lstm_forward(std::span<const T> w, std::span<const T> b, MatrixView<T> x, std::size_t units) {
  const std::size_t K = x.cols;
  if (w.size() != 4 * units * (K + units) || b.size() != 4 * units) throw ValidationError("lstm_forward: bad weights");
  SpeechCache<T> c;
  lstm_run(x.rows, K, units, w.data(), b.data(), x.ptr, c);
  return Matrix<T>(x.rows, units, std::move(c.h));
}

template <class T>
T forward(const ModelParams<T>& params, MatrixView<T> eeg, MatrixView<T> speech_a, MatrixView<T> speech_b) {
  Workspace<T> ws;
  return forward_cached(params, eeg, speech_a, speech_b, ws);
}

double loss(double p_a, Label label) {
  const double p = std::clamp(p_a, kProbabilityClamp, 1.0 - kProbabilityClamp);
  return label == Label::A ? -std::log(p) : -std::log(1.0 - p);
}

// ---------------------------------------------------------------------------
// Backward pass

namespace {

// d loss / d (score_A - score_B), matching the clamp in loss().
double dloss_dlogit(double p, Label label) {
  if (p < kProbabilityClamp || p > 1.0 - kProbabilityClamp) return 0.0;
  return label == Label::A ? p - 1.0 : p;
}

// Gradients of sim_t w.r.t. e_t and h_t, accumulated with weight ds.
template <class T>
void cosine_backward(const T* e, const T* h, std::size_t n, T ds, T* de, T* dh) {
  T ne, nh;
  const T s = cosine(e, h, n, &ne, &nh);
  if (ne * nh <= kNormFloor<T> || ds == T(0)) return;
  const T inv = T(1) / (ne * nh);
  // ds/de = h/(|e||h|) - s e/|e|^2
  simd::axpy(ds * inv, h, de, n);
  simd::axpy(-ds * s / (ne * ne), e, de, n);
  simd::axpy(ds * inv, e, dh, n);
  simd::axpy(-ds * s / (nh * nh), h, dh, n);
}

template <class T>
void head_backward(const Dims& d, const Tensors<const T>& p, const Tensors<T>& g, const HeadCache<T>& hc, T dscore,
                   std::vector<T>& ds) {
  ds.assign(d.Fr, T(0));
  simd::axpy(dscore, hc.a1.data(), g.w2, d.H);
  for (std::size_t j = 0; j < d.H; ++j) {
    const T dz = dscore * p.w2[j] * (T(1) - hc.a1[j] * hc.a1[j]);
    if (dz == T(0)) continue;
    g.b1[j] += dz;
    simd::axpy(dz, hc.s.data(), g.w1 + j * d.Fr, d.Fr);
    simd::axpy(dz, p.w1 + j * d.Fr, ds.data(), d.Fr);
  }
}

template <class T>
void speech_backward(const Dims& d, const Tensors<const T>& p, const Tensors<T>& g, MatrixView<T> speech,
                     const SpeechCache<T>& c, const std::vector<T>& dh_out) {
  const std::size_t U = d.U, K = d.K, Z = K + U;
  std::vector<T> dh_next(U, T(0)), dc_next(U, T(0)), dpre(4 * U), dz(Z);
  std::vector<T> dv(d.Fr * K, T(0));
  for (std::size_t t = d.Fr; t-- > 0;) {
    for (std::size_t j = 0; j < U; ++j) {
      const std::size_t o = t * U + j;
      const T dh = dh_out[o] + dh_next[j];
      const T dc = dh * c.og[o] * (T(1) - c.tc[o] * c.tc[o]) + dc_next[j];
      const T prev = t > 0 ? c.c[o - U] : T(0);
      dpre[j] = dc * c.gg[o] * c.ig[o] * (T(1) - c.ig[o]);
      dpre[U + j] = dc * prev * c.fg[o] * (T(1) - c.fg[o]);
      dpre[2 * U + j] = dc * c.ig[o] * (T(1) - c.gg[o] * c.gg[o]);
      dpre[3 * U + j] = dh * c.tc[o] * c.og[o] * (T(1) - c.og[o]);
      dc_next[j] = dc * c.fg[o];
    }
    const T* z = c.z.data() + t * Z;
    std::fill(dz.begin(), dz.end(), T(0));
    for (std::size_t r = 0; r < 4 * U; ++r) {
      if (dpre[r] == T(0)) continue;
      g.lstm_b[r] += dpre[r];
      simd::axpy(dpre[r], z, g.lstm_w + r * Z, Z);
      simd::axpy(dpre[r], p.lstm_w + r * Z, dz.data(), Z);
    }
    std::copy(dz.begin(), dz.begin() + static_cast<std::ptrdiff_t>(K), dv.begin() + static_cast<std::ptrdiff_t>(t * K));
    std::copy(dz.begin() + static_cast<std::ptrdiff_t>(K), dz.end(), dh_next.begin());
  }
  const std::size_t win = d.Tk * d.D;
  for (std::size_t t = 0; t < d.Fr; ++t) {
    const T* x = speech.ptr + t * d.S * d.D;
    for (std::size_t k = 0; k < K; ++k) {
      const T v = c.v[t * K + k];
      const T dq = dv[t * K + k] * (T(1) - v * v);
      if (dq == T(0)) continue;
      g.sp_b[k] += dq;
      simd::axpy(dq, x, g.sp_w + k * win, win);
    }
  }
}

template <class T>
void eeg_backward(const Dims& d, const Tensors<const T>& p, const Tensors<T>& g, MatrixView<T> eeg,
                  const EegCache<T>& c, const std::vector<T>& de) {
  const std::size_t win = d.Tk * d.C;
  std::vector<T> du(d.F);
  for (std::size_t t = 0; t < d.Fr; ++t) {
    std::fill(du.begin(), du.end(), T(0));
    const T* u = c.u.data() + t * d.F;
    for (std::size_t j = 0; j < d.U; ++j) {
      const T dej = de[t * d.U + j];
      if (dej == T(0)) continue;
      g.dense_b[j] += dej;
      simd::axpy(dej, u, g.dense_w + j * d.F, d.F);
      simd::axpy(dej, p.dense_w + j * d.F, du.data(), d.F);
    }
    const T* x = eeg.ptr + t * d.S * d.C;
    for (std::size_t f = 0; f < d.F; ++f) {
      const T da = du[f] * (T(1) - u[f] * u[f]);
      if (da == T(0)) continue;
      g.eeg_b[f] += da;
      simd::axpy(da, x, g.eeg_w + f * win, win);
    }
  }
}

template <class T>
double accumulate_example(const ModelParams<T>& params, const Sample<T>& s, Workspace<T>& ws, std::vector<T>& grad) {
  const Dims d(params.cfg);
  const T prob = forward_cached(params, s.eeg, s.speech_a, s.speech_b, ws);
  const double l = loss(static_cast<double>(prob), s.label);
  const T dlogit = static_cast<T>(dloss_dlogit(static_cast<double>(prob), s.label));
  if (dlogit == T(0)) return l;

  const auto p = Tensors<const T>::bind(params.cfg, params.flat.data());
  const auto g = Tensors<T>::bind(params.cfg, grad.data());
  std::vector<T> de(d.Fr * d.U, T(0));
  std::vector<T> ds;
  const MatrixView<T> speech[2] = {s.speech_a, s.speech_b};
  for (int k = 0; k < 2; ++k) {
    head_backward(d, p, g, ws.head[k], k == 0 ? dlogit : -dlogit, ds);
    std::vector<T> dh(d.Fr * d.U, T(0));
    for (std::size_t t = 0; t < d.Fr; ++t)
      cosine_backward(ws.eeg.e.data() + t * d.U, ws.sp[k].h.data() + t * d.U, d.U, ds[t], de.data() + t * d.U,
                      dh.data() + t * d.U);
    speech_backward(d, p, g, speech[k], ws.sp[k], dh);
  }
  eeg_backward(d, p, g, s.eeg, ws.eeg, de);
  return l;
}

}  // namespace

template <class T>
Gradient<T> backward(const ModelParams<T>& params, std::span<const Sample<T>> batch) {
  if (batch.empty()) throw ValidationError("backward: empty batch");
  Gradient<T> out;
  out.grad.assign(params.flat.size(), T(0));
  Workspace<T> ws;
  for (const auto& s : batch) out.loss += accumulate_example(params, s, ws, out.grad);
  const T inv = T(1) / static_cast<T>(batch.size());
  for (T& v : out.grad) v *= inv;
  out.loss /= static_cast<double>(batch.size());
  for (const auto& t : tensor_layout(params.cfg))
    for (std::size_t i = 0; i < t.size; ++i)
      if (!std::isfinite(out.grad[t.offset + i])) throw RuntimeError("non-finite gradient in tensor " + t.name);
  return out;
}

template <class T>
double mean_loss(const ModelParams<T>& params, std::span<const Sample<T>> batch) {
  if (batch.empty()) throw ValidationError("mean_loss: empty set");
  Workspace<T> ws;
  double sum = 0.0;
  for (const auto& s : batch)
    sum += loss(static_cast<double>(forward_cached(params, s.eeg, s.speech_a, s.speech_b, ws)), s.label);
  return sum / static_cast<double>(batch.size());
}

// ---------------------------------------------------------------------------
// Optimiser and training

template <class T>
void adam_step(std::span<T> params, std::span<const T> grad, AdamState<T>& st, const AdamConfig& cfg) {
  if (params.size() != grad.size()) throw ValidationError("adam_step: gradient size mismatch");
  if (st.m.size() != params.size()) {
    st.m.assign(params.size(), T(0));
    st.v.assign(params.size(), T(0));
    st.step = 0;
  }
  ++st.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const T g = grad[i];
    st.m[i] = b1 * st.m[i] + (T(1) - b1) * g;
    st.v[i] = b2 * st.v[i] + (T(1) - b2) * g * g;
    const double mhat = static_cast<double>(st.m[i]) / bc1;
    const double vhat = static_cast<double>(st.v[i]) / bc2;
    params[i] -= static_cast<T>(cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon));
  }
}

void TrainConfig::validate() const {
  if (max_epochs < 0) throw ValidationError("train.max_epochs must be >= 0");
  if (patience < 1) throw ValidationError("train.patience must be >= 1");
  if (max_epochs > 0 && patience >= max_epochs) throw ValidationError("train.patience must be < train.max_epochs");
  if (!(learning_rate >= 0.0)) throw ValidationError("train.learning_rate must be >= 0");
  if (batch_size == 0) throw ValidationError("train.batch_size must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(epsilon > 0.0))
    throw ValidationError("train ADAM constants out of range");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"max_epochs", max_epochs}, {"patience", patience}, {"learning_rate", learning_rate},
          {"batch_size", batch_size}, {"seed", seed},         {"beta1", beta1},
          {"beta2", beta2},           {"epsilon", epsilon}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) { return from_json(j, TrainConfig{}); }

TrainConfig TrainConfig::from_json(const nlohmann::json& j, const TrainConfig& defaults) {
  TrainConfig c = defaults;
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.patience = j.value("patience", c.patience);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.epsilon = j.value("epsilon", c.epsilon);
  return c;
}

TrainHistory run_early_stopping(int max_epochs, int patience, std::optional<double> initial_val_loss,
                                const std::function<EpochRecord(int)>& run_epoch,
                                const std::function<void(int)>& on_new_best) {
  TrainHistory h;
  h.best_epoch = 0;
  h.best_val_loss = initial_val_loss.value_or(std::numeric_limits<double>::infinity());
  int since_best = 0;
  for (int epoch = 1; epoch <= max_epochs; ++epoch) {
    EpochRecord rec = run_epoch(epoch);
    rec.epoch = epoch;
    h.epochs.push_back(rec);
    if (rec.val_loss < h.best_val_loss) {
      h.best_val_loss = rec.val_loss;
      h.best_epoch = epoch;
      since_best = 0;
      on_new_best(epoch);
    } else if (++since_best >= patience) {
      h.stopped_early = epoch < max_epochs;
      break;
    }
  }
  return h;
}

TrainResult train_loop(const ModelParams<float>& init, std::span<const Sample<float>> train,
                       std::span<const Sample<float>> val, const TrainConfig& cfg, bool keep_initial) {
  cfg.validate();
  if (train.empty()) throw ValidationError("training set is empty");
  if (val.empty()) throw ValidationError("validation set is empty");

  ModelParams<float> current = init;
  TrainResult result{init, {}};
  AdamState<float> adam;
  const AdamConfig acfg{cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon};
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<Sample<float>> batch;
  batch.reserve(cfg.batch_size);

  auto run_epoch = [&](int epoch) {
    std::mt19937_64 rng(cfg.seed ^ (0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      batch.clear();
      for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i) batch.push_back(train[order[i]]);
      const auto g = backward<float>(current, batch);
      loss_sum += g.loss * static_cast<double>(batch.size());
      adam_step<float>(current.flat, g.grad, adam, acfg);
    }
    return EpochRecord{epoch, loss_sum / static_cast<double>(train.size()), mean_loss(current, val)};
  };
  std::optional<double> initial;
  if (keep_initial) initial = mean_loss(init, val);
  result.history = run_early_stopping(cfg.max_epochs, cfg.patience, initial, run_epoch,
                                      [&](int) { result.params = current; });
  return result;
}

std::string history_csv(const TrainHistory& h) {
  std::string out = "epoch,train_loss,val_loss\n";
  for (const auto& e : h.epochs)
    out += std::to_string(e.epoch) + ',' + io::fmt_double(e.train_loss) + ',' + io::fmt_double(e.val_loss) + '\n';
  return out;
}

void save_checkpoint(const std::filesystem::path& bin, const ModelParams<float>& params, const CheckpointMeta& meta) {
  io::write_f32(bin, params.flat);
  io::write_json(io::sidecar_path(bin), {{"model", params.cfg.to_json()},
                                         {"n_parameters", params.flat.size()},
                                         {"epoch", meta.epoch},
                                         {"val_loss", meta.val_loss},
                                         {"seed", meta.seed}});
}

ModelParams<float> load_checkpoint(const std::filesystem::path& bin, CheckpointMeta* meta) {
  const auto side = io::read_json(io::sidecar_path(bin));
  ModelParams<float> p;
  try {
    p.cfg = ModelConfig::from_json(side.at("model"));
    p.cfg.validate();
    if (meta) {
      meta->epoch = side.value("epoch", 0);
      meta->val_loss = side.value("val_loss", 0.0);
      meta->seed = side.value("seed", std::uint64_t{0});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(io::sidecar_path(bin).string() + ": " + e.what());
  }
  p.flat = io::read_f32(bin);
  if (p.flat.size() != p.cfg.parameter_count())
    throw ValidationError(bin.string() + ": parameter count does not match the model configuration");
  return p;
}

// ---------------------------------------------------------------------------

std::vector<GradCheckResult> gradient_check(const ModelParams<double>& params, std::span<const Sample<double>> batch,
                                            double eps, std::size_t coords_per_tensor, std::uint64_t seed) {
  const auto analytic = backward<double>(params, batch).grad;
  ModelParams<double> probe = params;
  std::mt19937_64 rng(seed);
  std::vector<GradCheckResult> groups;
  struct Acc {
    double max_err = 0, max_grad = 0;
    std::size_t n = 0;
  };
  std::vector<std::pair<std::string, Acc>> acc;
  for (const auto& t : tensor_layout(params.cfg)) {
    std::vector<std::size_t> idx(t.size);
    std::iota(idx.begin(), idx.end(), 0);
    if (coords_per_tensor != 0 && coords_per_tensor < t.size) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(coords_per_tensor);
    }
    auto it = std::find_if(acc.begin(), acc.end(), [&](const auto& a) { return a.first == t.group; });
    if (it == acc.end()) {
      acc.emplace_back(t.group, Acc{});
      it = acc.end() - 1;
    }
    for (std::size_t i : idx) {
      const std::size_t k = t.offset + i;
      const double orig = probe.flat[k];
      probe.flat[k] = orig + eps;
      const double up = mean_loss(probe, batch);
      probe.flat[k] = orig - eps;
      const double down = mean_loss(probe, batch);
      probe.flat[k] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      it->second.max_err = std::max(it->second.max_err, std::abs(numeric - analytic[k]));
      it->second.max_grad = std::max(it->second.max_grad, std::abs(numeric));
      ++it->second.n;
    }
  }
  for (const auto& [name, a] : acc)
    groups.push_back({name, a.n, a.max_grad > 0 ? a.max_err / a.max_grad : a.max_err, a.max_err});
  return groups;
}

// ---------------------------------------------------------------------------

template struct ModelParams<float>;
template struct ModelParams<double>;
template ModelParams<float> init_params<float>(const ModelConfig&, std::uint64_t);
template ModelParams<double> init_params<double>(const ModelConfig&, std::uint64_t);
template std::vector<float> cosine_per_frame<float>(MatrixView<float>, MatrixView<float>);
template std::vector<double> cosine_per_frame<double>(MatrixView<double>, MatrixView<double>);
template Matrix<float> lstm_forward<float>(std::span<const float>, std::span<const float>, MatrixView<float>, std::size_t);
template Matrix<double> lstm_forward<double>(std::span<const double>, std::span<const double>, MatrixView<double>,
                                             std::size_t);
template float forward<float>(const ModelParams<float>&, MatrixView<float>, MatrixView<float>, MatrixView<float>);
template double forward<double>(const ModelParams<double>&, MatrixView<double>, MatrixView<double>, MatrixView<double>);
template Gradient<float> backward<float>(const ModelParams<float>&, std::span<const Sample<float>>);
template Gradient<double> backward<double>(const ModelParams<double>&, std::span<const Sample<double>>);
template double mean_loss<float>(const ModelParams<float>&, std::span<const Sample<float>>);
template double mean_loss<double>(const ModelParams<double>&, std::span<const Sample<double>>);
template void adam_step<float>(std::span<float>, std::span<const float>, AdamState<float>&, const AdamConfig&);
template void adam_step<double>(std::span<double>, std::span<const double>, AdamState<double>&, const AdamConfig&);

}  // namespace phonotrack::nn
