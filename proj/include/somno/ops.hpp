#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "somno/tensor.hpp"

namespace somno {

// ---------------------------------------------------------------------------
// Parameter records. All are plain data, immutable after load, and safe to
// share across concurrent inferences. Kernels are pure functions of their
// inputs with fixed loop orders; repeated runs are bit-identical.
// Storage is float32; accumulation is float64.
// ---------------------------------------------------------------------------

/// 1-D convolution. Weights are [out][in][kernel] row-major.
/// Padding is fixed "same": output length = ceil(input / stride),
/// total pad = max(0, (out-1)*stride + kernel - in), left pad = total/2
/// (the extra element, if any, goes on the right).
struct ConvParams {
  int kernel = 1;
  int in_channels = 1;
  int out_channels = 1;
  int stride = 1;
  std::vector<float> weights;
  std::vector<float> bias;  // empty means no bias

  float w(int o, int c, int k) const {
    return weights[(static_cast<size_t>(o) * in_channels + c) * kernel + k];
  }
  float& w(int o, int c, int k) {
    return weights[(static_cast<size_t>(o) * in_channels + c) * kernel + k];
  }
  bool has_bias() const { return !bias.empty(); }
};

inline void validate(const ConvParams& p) {
  if (p.kernel < 1 || p.in_channels < 1 || p.out_channels < 1 || p.stride < 1)
    throw std::invalid_argument("ConvParams: hyperparameters must be positive");
  const size_t want =
      static_cast<size_t>(p.kernel) * p.in_channels * p.out_channels;
  if (p.weights.size() != want)
    throw std::invalid_argument("ConvParams: weight count does not match shape");
  if (!p.bias.empty() && p.bias.size() != static_cast<size_t>(p.out_channels))
    throw std::invalid_argument("ConvParams: bias count does not match out_channels");
}

/// Inference-mode batch normalization over channels: running statistics,
/// per-channel affine.
struct BatchNormParams {
  int channels = 1;
  std::vector<float> gamma;
  std::vector<float> beta;
  std::vector<float> mean;
  std::vector<float> var;
  float epsilon = 1e-5f;
};

inline void validate(const BatchNormParams& p) {
  if (p.channels < 1)
    throw std::invalid_argument("BatchNormParams: channels must be positive");
  const size_t c = static_cast<size_t>(p.channels);
  if (p.gamma.size() != c || p.beta.size() != c || p.mean.size() != c ||
      p.var.size() != c)
    throw std::invalid_argument("BatchNormParams: parameter arrays must have `channels` entries");
  if (!(p.epsilon > 0.f))
    throw std::invalid_argument("BatchNormParams: epsilon must be positive");
  for (float v : p.var)
    if (v < 0.f)
      throw std::invalid_argument("BatchNormParams: running variance must be non-negative");
}

/// Fully connected layer with mandatory bias. Weights are [out][in] row-major.
struct FcParams {
  int in_features = 1;
  int out_features = 1;
  std::vector<float> weights;
  std::vector<float> bias;

  float w(int o, int i) const {
    return weights[static_cast<size_t>(o) * in_features + i];
  }
  float& w(int o, int i) {
    return weights[static_cast<size_t>(o) * in_features + i];
  }
};

inline void validate(const FcParams& p) {
  if (p.in_features < 1 || p.out_features < 1)
    throw std::invalid_argument("FcParams: dimensions must be positive");
  if (p.weights.size() !=
      static_cast<size_t>(p.in_features) * p.out_features)
    throw std::invalid_argument("FcParams: weight count does not match shape");
  if (p.bias.size() != static_cast<size_t>(p.out_features))
    throw std::invalid_argument("FcParams: bias count does not match out_features");
}

/// Standard forget-gate LSTM cell: no peepholes, no projection, logistic
/// gate activation. Gate order is fixed: input, forget, cell, output.
enum class LstmGate { Input = 0, Forget = 1, Cell = 2, Output = 3 };

struct LstmGateParams {
  std::vector<float> w_input;      // [hidden][input] row-major
  std::vector<float> w_recurrent;  // [hidden][hidden] row-major
  std::vector<float> bias;         // [hidden]
};

struct LstmParams {
  int input_size = 1;
  int hidden_size = 1;
  std::array<LstmGateParams, 4> gates;

  const LstmGateParams& gate(LstmGate g) const {
    return gates[static_cast<size_t>(g)];
  }
  LstmGateParams& gate(LstmGate g) { return gates[static_cast<size_t>(g)]; }
};

inline void validate(const LstmParams& p) {
  if (p.input_size < 1 || p.hidden_size < 1)
    throw std::invalid_argument("LstmParams: dimensions must be positive");
  const size_t h = static_cast<size_t>(p.hidden_size);
  for (const auto& g : p.gates) {
    if (g.w_input.size() != h * p.input_size ||
        g.w_recurrent.size() != h * h || g.bias.size() != h)
      throw std::invalid_argument("LstmParams: gate parameter sizes do not match dimensions");
  }
}

struct LstmState {
  std::vector<float> h;
  std::vector<float> c;
};

inline LstmState make_lstm_state(int hidden_size) {
  return LstmState{std::vector<float>(hidden_size, 0.f),
                   std::vector<float>(hidden_size, 0.f)};
}

// ---------------------------------------------------------------------------
// Float kernels
// ---------------------------------------------------------------------------

/// Output length under "same" padding.
inline int conv1d_out_length(int in_length, int stride) {
  return (in_length + stride - 1) / stride;
}

inline int conv1d_pad_left(int in_length, int kernel, int stride) {
  const int out = conv1d_out_length(in_length, stride);
  const int total = std::max(0, (out - 1) * stride + kernel - in_length);
  return total / 2;
}

inline Series1D conv1d(const Series1D& x, const ConvParams& p) {
  validate(p);
  if (x.channels != p.in_channels)
    throw std::invalid_argument(
        "conv1d: input has " + std::to_string(x.channels) +
        " channels, kernel expects " + std::to_string(p.in_channels));
  const int out_len = conv1d_out_length(x.length, p.stride);
  const int pad_left = conv1d_pad_left(x.length, p.kernel, p.stride);
  Series1D y = make_series(out_len, p.out_channels, 0.f);
  for (int t = 0; t < out_len; ++t) {
    const int base = t * p.stride - pad_left;
    for (int o = 0; o < p.out_channels; ++o) {
      double acc = p.has_bias() ? static_cast<double>(p.bias[o]) : 0.0;
      for (int k = 0; k < p.kernel; ++k) {
        const int src = base + k;
        if (src < 0 || src >= x.length) continue;
        for (int c = 0; c < p.in_channels; ++c)
          acc += static_cast<double>(p.w(o, c, k)) * x.at(src, c);
      }
      y.at(t, o) = static_cast<float>(acc);
    }
  }
  return y;
}

/// Per-channel max over sliding windows, no padding:
/// output length = floor((in - window) / stride) + 1.
inline Series1D maxpool1d(const Series1D& x, int window, int stride) {
  if (window < 1 || stride < 1)
    throw std::invalid_argument("maxpool1d: window and stride must be positive");
  if (window > x.length)
    throw std::invalid_argument("maxpool1d: window exceeds input length");
  const int out_len = (x.length - window) / stride + 1;
  Series1D y = make_series(out_len, x.channels, 0.f);
  for (int t = 0; t < out_len; ++t)
    for (int c = 0; c < x.channels; ++c) {
      float m = x.at(t * stride, c);
      for (int k = 1; k < window; ++k)
        m = std::max(m, x.at(t * stride + k, c));
      y.at(t, c) = m;
    }
  return y;
}

inline Series1D batchnorm(const Series1D& x, const BatchNormParams& p) {
  validate(p);
  if (x.channels != p.channels)
    throw std::invalid_argument(
        "batchnorm: input has " + std::to_string(x.channels) +
        " channels, parameters expect " + std::to_string(p.channels));
  std::vector<double> scale(p.channels), shift(p.channels);
  for (int c = 0; c < p.channels; ++c) {
    const double inv = static_cast<double>(p.gamma[c]) /
                       std::sqrt(static_cast<double>(p.var[c]) + p.epsilon);
    scale[c] = inv;
    shift[c] = static_cast<double>(p.beta[c]) - inv * p.mean[c];
  }
  Series1D y = x;
  for (int t = 0; t < x.length; ++t)
    for (int c = 0; c < x.channels; ++c)
      y.at(t, c) = static_cast<float>(scale[c] * x.at(t, c) + shift[c]);
  return y;
}

/// Absorb an inference-mode batch norm into the preceding convolution:
/// w'[o][c][k] = w[o][c][k] * g[o], bias'[o] = (bias[o] - mean[o]) * g[o] + beta[o]
/// with g[o] = gamma[o] / sqrt(var[o] + eps). A missing conv bias is treated
/// as zero; the folded conv always carries a bias.
inline ConvParams fold_batchnorm(const ConvParams& conv,
                                 const BatchNormParams& bn) {
  validate(conv);
  validate(bn);
  if (conv.out_channels != bn.channels)
    throw std::invalid_argument(
        "fold_batchnorm: conv yields " + std::to_string(conv.out_channels) +
        " channels, batch norm expects " + std::to_string(bn.channels));
  ConvParams folded = conv;
  folded.bias.assign(conv.out_channels, 0.f);
  for (int o = 0; o < conv.out_channels; ++o) {
    const double g = static_cast<double>(bn.gamma[o]) /
                     std::sqrt(static_cast<double>(bn.var[o]) + bn.epsilon);
    for (int c = 0; c < conv.in_channels; ++c)
      for (int k = 0; k < conv.kernel; ++k)
        folded.w(o, c, k) = static_cast<float>(conv.w(o, c, k) * g);
    const double b0 = conv.has_bias() ? conv.bias[o] : 0.0;
    folded.bias[o] =
        static_cast<float>((b0 - bn.mean[o]) * g + bn.beta[o]);
  }
  return folded;
}

inline Series1D relu(const Series1D& x) {
  Series1D y = x;
  for (float& v : y.data) v = std::max(0.f, v);
  return y;
}

inline std::vector<float> fully_connected(const std::vector<float>& x,
                                          const FcParams& p) {
  validate(p);
  if (x.size() != static_cast<size_t>(p.in_features))
    throw std::invalid_argument(
        "fully_connected: input has " + std::to_string(x.size()) +
        " features, layer expects " + std::to_string(p.in_features));
  std::vector<float> y(p.out_features);
  for (int o = 0; o < p.out_features; ++o) {
    double acc = p.bias[o];
    for (int i = 0; i < p.in_features; ++i)
      acc += static_cast<double>(p.w(o, i)) * x[i];
    y[o] = static_cast<float>(acc);
  }
  return y;
}

/// Numerically stable softmax (max subtraction).
template <typename T>
std::vector<T> softmax(const std::vector<T>& x) {
  if (x.empty()) throw std::invalid_argument("softmax: empty input");
  double mx = x[0];
  for (T v : x) mx = std::max(mx, static_cast<double>(v));
  std::vector<double> e(x.size());
  double sum = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    e[i] = std::exp(static_cast<double>(x[i]) - mx);
    sum += e[i];
  }
  std::vector<T> y(x.size());
  for (size_t i = 0; i < x.size(); ++i) y[i] = static_cast<T>(e[i] / sum);
  return y;
}

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline LstmState lstm_step(const std::vector<float>& x, const LstmState& s,
                           const LstmParams& p) {
  validate(p);
  if (x.size() != static_cast<size_t>(p.input_size))
    throw std::invalid_argument("lstm_step: input size mismatch");
  if (s.h.size() != static_cast<size_t>(p.hidden_size) ||
      s.c.size() != static_cast<size_t>(p.hidden_size))
    throw std::invalid_argument("lstm_step: state size mismatch");

  const int hs = p.hidden_size;
  std::array<std::vector<double>, 4> pre;
  for (int g = 0; g < 4; ++g) {
    const auto& gp = p.gates[g];
    pre[g].resize(hs);
    for (int j = 0; j < hs; ++j) {
      double acc = gp.bias[j];
      const size_t wrow = static_cast<size_t>(j) * p.input_size;
      for (int i = 0; i < p.input_size; ++i)
        acc += static_cast<double>(gp.w_input[wrow + i]) * x[i];
      const size_t urow = static_cast<size_t>(j) * hs;
      for (int i = 0; i < hs; ++i)
        acc += static_cast<double>(gp.w_recurrent[urow + i]) * s.h[i];
      pre[g][j] = acc;
    }
  }

  LstmState next = make_lstm_state(hs);
  for (int j = 0; j < hs; ++j) {
    const double in_gate = logistic(pre[0][j]);
    const double forget_gate = logistic(pre[1][j]);
    const double candidate = std::tanh(pre[2][j]);
    const double out_gate = logistic(pre[3][j]);
    const double c_next = forget_gate * s.c[j] + in_gate * candidate;
    next.c[j] = static_cast<float>(c_next);
    next.h[j] = static_cast<float>(out_gate * std::tanh(c_next));
  }
  return next;
}

/// Applies lstm_step across time; output row t is the hidden state after
/// consuming input row t.
inline Series1D lstm_sequence(const Series1D& xs, const LstmParams& p,
                              const LstmState& s0) {
  validate(p);
  if (xs.channels != p.input_size)
    throw std::invalid_argument(
        "lstm_sequence: input has " + std::to_string(xs.channels) +
        " channels, cell expects " + std::to_string(p.input_size));
  Series1D out = make_series(xs.length, p.hidden_size, 0.f);
  LstmState state = s0;
  std::vector<float> xt(p.input_size);
  for (int t = 0; t < xs.length; ++t) {
    for (int c = 0; c < p.input_size; ++c) xt[c] = xs.at(t, c);
    state = lstm_step(xt, state, p);
    for (int j = 0; j < p.hidden_size; ++j) out.at(t, j) = state.h[j];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fixed-point kernels. Integer-only multiply-accumulate in an int64
// accumulator, requantized by an arithmetic right shift with round half away
// from zero, then saturated to the output bit width.
// ---------------------------------------------------------------------------

/// Quantized convolution parameters. Weight integers are under w_scheme;
/// bias integers are pre-scaled to 2^-(input_shift + weight_shift) so they
/// add directly into the accumulator.
struct QConvParams {
  int kernel = 1;
  int in_channels = 1;
  int out_channels = 1;
  int stride = 1;
  QuantScheme w_scheme;
  std::vector<int32_t> weights;  // [out][in][kernel] row-major
  std::vector<int64_t> bias;     // [out], empty means no bias

  int32_t w(int o, int c, int k) const {
    return weights[(static_cast<size_t>(o) * in_channels + c) * kernel + k];
  }
  bool has_bias() const { return !bias.empty(); }
};

struct QFcParams {
  int in_features = 1;
  int out_features = 1;
  QuantScheme w_scheme;
  std::vector<int32_t> weights;  // [out][in] row-major
  std::vector<int64_t> bias;     // [out]

  int32_t w(int o, int i) const {
    return weights[static_cast<size_t>(o) * in_features + i];
  }
};

/// Arithmetic right shift with round half away from zero. shift >= 0.
inline int64_t rshift_round(int64_t v, int shift) {
  if (shift == 0) return v;
  const int64_t half = int64_t{1} << (shift - 1);
  if (v >= 0) return (v + half) >> shift;
  return -((-v + half) >> shift);
}

inline int32_t saturate(int64_t v, const QuantScheme& s) {
  if (v > s.max_int()) return s.max_int();
  if (v < s.min_int()) return s.min_int();
  return static_cast<int32_t>(v);
}

inline int requant_shift(const QuantScheme& in, const QuantScheme& w,
                         const QuantScheme& out) {
  const int shift = in.shift + w.shift - out.shift;
  if (shift < 0)
    throw std::invalid_argument(
        "incompatible quantization schemes: input shift + weight shift must "
        "be >= output shift");
  return shift;
}

inline QTensor1D conv1d_q(const QTensor1D& x, const QConvParams& p,
                          const QuantScheme& out_scheme) {
  if (x.channels != p.in_channels)
    throw std::invalid_argument(
        "conv1d_q: input has " + std::to_string(x.channels) +
        " channels, kernel expects " + std::to_string(p.in_channels));
  validate(out_scheme);
  const int shift = requant_shift(x.scheme, p.w_scheme, out_scheme);
  const int out_len = conv1d_out_length(x.length, p.stride);
  const int pad_left = conv1d_pad_left(x.length, p.kernel, p.stride);
  QTensor1D y;
  y.length = out_len;
  y.channels = p.out_channels;
  y.scheme = out_scheme;
  y.data.assign(static_cast<size_t>(out_len) * p.out_channels, 0);
  for (int t = 0; t < out_len; ++t) {
    const int base = t * p.stride - pad_left;
    for (int o = 0; o < p.out_channels; ++o) {
      int64_t acc = p.has_bias() ? p.bias[o] : 0;
      for (int k = 0; k < p.kernel; ++k) {
        const int src = base + k;
        if (src < 0 || src >= x.length) continue;
        for (int c = 0; c < p.in_channels; ++c)
          acc += static_cast<int64_t>(p.w(o, c, k)) * x.at(src, c);
      }
      y.at(t, o) = saturate(rshift_round(acc, shift), out_scheme);
    }
  }
  return y;
}

inline QTensor1D fully_connected_q(const QTensor1D& x, const QFcParams& p,
                                   const QuantScheme& out_scheme) {
  if (x.elements() != p.in_features)
    throw std::invalid_argument(
        "fully_connected_q: input has " + std::to_string(x.elements()) +
        " features, layer expects " + std::to_string(p.in_features));
  validate(out_scheme);
  const int shift = requant_shift(x.scheme, p.w_scheme, out_scheme);
  QTensor1D y;
  y.length = 1;
  y.channels = p.out_features;
  y.scheme = out_scheme;
  y.data.resize(p.out_features);
  for (int o = 0; o < p.out_features; ++o) {
    int64_t acc = p.bias.empty() ? 0 : p.bias[o];
    const size_t row = static_cast<size_t>(o) * p.in_features;
    for (int i = 0; i < p.in_features; ++i)
      acc += static_cast<int64_t>(p.weights[row + i]) * x.data[i];
    y.data[o] = saturate(rshift_round(acc, shift), out_scheme);
  }
  return y;
}

/// Per-channel window max on integers; scheme is preserved.
inline QTensor1D maxpool1d_q(const QTensor1D& x, int window, int stride) {
  if (window < 1 || stride < 1)
    throw std::invalid_argument("maxpool1d_q: window and stride must be positive");
  if (window > x.length)
    throw std::invalid_argument("maxpool1d_q: window exceeds input length");
  const int out_len = (x.length - window) / stride + 1;
  QTensor1D y;
  y.length = out_len;
  y.channels = x.channels;
  y.scheme = x.scheme;
  y.data.resize(static_cast<size_t>(out_len) * x.channels);
  for (int t = 0; t < out_len; ++t)
    for (int c = 0; c < x.channels; ++c) {
      int32_t m = x.at(t * stride, c);
      for (int k = 1; k < window; ++k) m = std::max(m, x.at(t * stride + k, c));
      y.at(t, c) = m;
    }
  return y;
}

inline QTensor1D relu_q(const QTensor1D& x) {
  QTensor1D y = x;
  for (int32_t& v : y.data) v = std::max(0, v);
  return y;
}

/// Exact rescale between power-of-two schemes (shift left) or rounded
/// rescale (shift right), saturating to the target width.
inline QTensor1D requantize(const QTensor1D& x, const QuantScheme& to) {
  validate(to);
  QTensor1D y;
  y.length = x.length;
  y.channels = x.channels;
  y.scheme = to;
  y.data.resize(x.data.size());
  const int d = to.shift - x.scheme.shift;
  for (size_t i = 0; i < x.data.size(); ++i) {
    int64_t v = x.data[i];
    v = d >= 0 ? (v << d) : rshift_round(v, -d);
    y.data[i] = saturate(v, to);
  }
  return y;
}

}  // namespace somno
