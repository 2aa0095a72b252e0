#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace somno {

inline constexpr int64_t kMaxSeriesElements = int64_t{1} << 28;

/// Time-major 1-D multi-channel signal: element (t, c) sits at
/// data[t * channels + c]. Network inputs, intermediate activations and
/// resampled physiological channels all use this layout. Values are treated
/// as immutable once produced; sharing across threads is safe.
struct Series1D {
  int length = 0;
  int channels = 0;
  std::vector<float> data;

  float at(int t, int c) const { return data[idx(t, c)]; }
  float& at(int t, int c) { return data[idx(t, c)]; }
  int64_t elements() const { return int64_t{length} * channels; }

 private:
  size_t idx(int t, int c) const {
    return static_cast<size_t>(t) * static_cast<size_t>(channels) +
           static_cast<size_t>(c);
  }
};

inline Series1D make_series(int length, int channels, float fill) {
  if (length < 1 || channels < 1)
    throw std::invalid_argument("make_series: dimensions must be positive");
  const int64_t n = int64_t{length} * channels;
  if (n > kMaxSeriesElements)
    throw std::invalid_argument("make_series: dimensions exceed element budget");
  Series1D s;
  s.length = length;
  s.channels = channels;
  s.data.assign(static_cast<size_t>(n), fill);
  return s;
}

/// Power-of-two fixed-point scheme: represented value = integer * 2^(-shift).
/// Symmetric around zero (no zero-point offset), always saturating.
/// bit_width 8 is the q7-style path, 16 the q15-style path.
struct QuantScheme {
  int bit_width = 8;
  int shift = 7;

  int32_t max_int() const { return (int32_t{1} << (bit_width - 1)) - 1; }
  int32_t min_int() const { return -(int32_t{1} << (bit_width - 1)); }
  double step() const { return std::ldexp(1.0, -shift); }
  bool operator==(const QuantScheme&) const = default;
};

inline void validate(const QuantScheme& s) {
  if (s.bit_width != 8 && s.bit_width != 16)
    throw std::invalid_argument("QuantScheme: bit_width must be 8 or 16");
  if (s.shift < -31 || s.shift > 31)
    throw std::invalid_argument("QuantScheme: shift out of [-31, 31]");
}

/// Fixed-point tensor: Series1D layout with integer elements under `scheme`.
/// Every element lies inside the scheme's signed range by construction.
struct QTensor1D {
  int length = 0;
  int channels = 0;
  std::vector<int32_t> data;
  QuantScheme scheme;

  int32_t at(int t, int c) const {
    return data[static_cast<size_t>(t) * channels + c];
  }
  int32_t& at(int t, int c) {
    return data[static_cast<size_t>(t) * channels + c];
  }
  int64_t elements() const { return int64_t{length} * channels; }
};

/// Round half away from zero, saturate to the scheme's signed range.
inline int32_t quantize_value(float x, const QuantScheme& s) {
  const double scaled = static_cast<double>(x) * std::ldexp(1.0, s.shift);
  if (scaled >= static_cast<double>(s.max_int()) + 1.0) return s.max_int();
  if (scaled <= static_cast<double>(s.min_int()) - 1.0) return s.min_int();
  const long long r = std::llround(scaled);
  if (r > s.max_int()) return s.max_int();
  if (r < s.min_int()) return s.min_int();
  return static_cast<int32_t>(r);
}

/// Exact in real arithmetic: integer * 2^(-shift).
inline float dequantize_value(int32_t q, const QuantScheme& s) {
  return static_cast<float>(static_cast<double>(q) * std::ldexp(1.0, -s.shift));
}

inline QTensor1D quantize(const Series1D& x, const QuantScheme& scheme) {
  validate(scheme);
  QTensor1D q;
  q.length = x.length;
  q.channels = x.channels;
  q.scheme = scheme;
  q.data.resize(x.data.size());
  for (size_t i = 0; i < x.data.size(); ++i)
    q.data[i] = quantize_value(x.data[i], scheme);
  return q;
}

inline Series1D dequantize(const QTensor1D& q) {
  Series1D s;
  s.length = q.length;
  s.channels = q.channels;
  s.data.resize(q.data.size());
  for (size_t i = 0; i < q.data.size(); ++i)
    s.data[i] = dequantize_value(q.data[i], q.scheme);
  return s;
}

}  // namespace somno
