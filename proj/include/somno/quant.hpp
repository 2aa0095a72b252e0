#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "somno/graph.hpp"

namespace somno {

// ---------------------------------------------------------------------------
// Post-training quantization. Per-tensor power-of-two schemes only: each
// tensor gets the largest shift such that max|value| * 2^shift still fits
// the signed integer range, so quantizing the calibration activations never
// saturates. Batch norms are folded into their convolutions first; conv and
// fully connected layers move to integer arithmetic, LSTM layers stay float.
// ---------------------------------------------------------------------------

/// Largest shift with max_abs * 2^shift <= max_int. All-zero tensors get the
/// documented default bit_width - 1. The result is clamped to [-31, 31].
inline int maximizing_shift(double max_abs, int bit_width) {
  if (bit_width != 8 && bit_width != 16)
    throw std::invalid_argument("maximizing_shift: bit_width must be 8 or 16");
  if (max_abs == 0.0) return bit_width - 1;
  if (!(max_abs > 0.0) || !std::isfinite(max_abs))
    throw std::invalid_argument("maximizing_shift: max_abs must be non-negative and finite");
  const double max_int = static_cast<double>((1 << (bit_width - 1)) - 1);
  int shift = static_cast<int>(std::floor(std::log2(max_int / max_abs)));
  while (max_abs * std::ldexp(1.0, shift) > max_int) --shift;
  while (max_abs * std::ldexp(1.0, shift + 1) <= max_int) ++shift;
  return std::clamp(shift, -31, 31);
}

/// Schemes for one layer: weight scheme for parameterized layers, output
/// scheme for every layer.
struct LayerSchemes {
  std::optional<QuantScheme> weights;
  QuantScheme output;
};

struct CalibrationResult {
  int bit_width = 0;
  QuantScheme input;
  std::vector<LayerSchemes> layers;  // one entry per layer of the folded graph
};

/// Folds every batch norm in the stack into its convolution. Fused batch
/// norms fold in place; a standalone BatchNorm layer folds into the
/// immediately preceding Conv row and disappears. Anything else carrying a
/// batch norm is rejected.
inline ModelGraph fold_graph(const ModelGraph& g) {
  ModelGraph out = g;
  out.layers.clear();
  for (size_t i = 0; i < g.layers.size(); ++i) {
    const LayerSpec& l = g.layers[i];
    if (const auto* conv = std::get_if<ConvLayer>(&l)) {
      ConvLayer folded = *conv;
      if (folded.bn) {
        folded.conv = fold_batchnorm(folded.conv, *folded.bn);
        folded.bn.reset();
      }
      out.layers.push_back(std::move(folded));
    } else if (const auto* bn = std::get_if<BatchNormLayer>(&l)) {
      if (out.layers.empty() || !std::holds_alternative<ConvLayer>(out.layers.back()))
        throw std::invalid_argument(
            "fold_graph: batch norm at layer " + std::to_string(i) +
            " does not follow a convolution and cannot be folded");
      auto& prev = std::get<ConvLayer>(out.layers.back());
      if (prev.relu)
        throw std::invalid_argument(
            "fold_graph: batch norm at layer " + std::to_string(i) +
            " follows an activation, not a raw convolution");
      prev.conv = fold_batchnorm(prev.conv, bn->bn);
    } else {
      out.layers.push_back(l);
    }
  }
  validate(out);
  return out;
}

namespace detail {

inline double max_abs(const std::vector<float>& v) {
  double m = 0.0;
  for (float x : v) m = std::max(m, std::abs(static_cast<double>(x)));
  return m;
}

inline double layer_weight_max_abs(const LayerSpec& l) {
  if (const auto* c = std::get_if<ConvLayer>(&l)) return max_abs(c->conv.weights);
  if (const auto* f = std::get_if<FullyConnectedLayer>(&l)) return max_abs(f->fc.weights);
  return 0.0;
}

inline bool is_quantizable(const LayerSpec& l) {
  return std::holds_alternative<ConvLayer>(l) ||
         std::holds_alternative<FullyConnectedLayer>(l);
}

}  // namespace detail

/// Profiles the folded float graph over the calibration samples and derives
/// per-tensor schemes: weight schemes from weight max-abs, activation
/// schemes from the observed per-layer output max-abs.
inline CalibrationResult calibrate(const ModelGraph& g,
                                   const std::vector<Series1D>& samples,
                                   int bit_width) {
  if (samples.empty())
    throw std::invalid_argument("calibrate: empty calibration sample set");
  if (bit_width != 8 && bit_width != 16)
    throw std::invalid_argument("calibrate: bit_width must be 8 or 16");
  if (g.quantized)
    throw std::invalid_argument("calibrate: graph is already quantized");
  const ModelGraph folded = fold_graph(g);

  double input_max = 0.0;
  std::vector<double> out_max(folded.layers.size(), 0.0);
  for (const auto& x : samples) {
    if (x.length != folded.input.length || x.channels != folded.input.channels)
      throw std::invalid_argument("calibrate: sample does not match input shape " +
                                  folded.input.str());
    input_max = std::max(input_max, detail::max_abs(x.data));
    detail::Activation act = detail::float_act(x);
    for (size_t i = 0; i < folded.layers.size(); ++i) {
      act = std::visit(detail::RunV{act}, folded.layers[i]);
      out_max[i] = std::max(out_max[i], detail::max_abs(act.f.data));
    }
  }

  CalibrationResult result;
  result.bit_width = bit_width;
  result.input = QuantScheme{bit_width, maximizing_shift(input_max, bit_width)};
  result.layers.resize(folded.layers.size());
  for (size_t i = 0; i < folded.layers.size(); ++i) {
    result.layers[i].output =
        QuantScheme{bit_width, maximizing_shift(out_max[i], bit_width)};
    if (detail::is_quantizable(folded.layers[i]))
      result.layers[i].weights = QuantScheme{
          bit_width,
          maximizing_shift(detail::layer_weight_max_abs(folded.layers[i]), bit_width)};
  }
  return result;
}

namespace detail {

inline std::vector<int32_t> quantize_weights(const std::vector<float>& w,
                                             const QuantScheme& s) {
  std::vector<int32_t> q(w.size());
  for (size_t i = 0; i < w.size(); ++i) q[i] = quantize_value(w[i], s);
  return q;
}

/// Bias integers live at 2^-(in_shift + w_shift) so they add straight into
/// the accumulator.
inline std::vector<int64_t> quantize_bias(const std::vector<float>& b,
                                          int combined_shift) {
  std::vector<int64_t> q(b.size());
  for (size_t i = 0; i < b.size(); ++i) {
    const double scaled =
        static_cast<double>(b[i]) * std::ldexp(1.0, combined_shift);
    q[i] = std::llround(scaled);
  }
  return q;
}

}  // namespace detail

/// Replaces conv and fully connected layers with fixed-point counterparts
/// under the calibrated schemes. Batch norms are folded first; pooling,
/// ReLU and flatten pass through in the integer domain; LSTM layers and
/// softmax heads stay float and the runner converts at their boundaries.
inline ModelGraph quantize_graph(const ModelGraph& g,
                                 const CalibrationResult& schemes) {
  if (g.quantized)
    throw std::invalid_argument("quantize_graph: graph is already quantized");
  const ModelGraph folded = fold_graph(g);
  if (schemes.layers.size() != folded.layers.size())
    throw std::invalid_argument(
        "quantize_graph: scheme map covers " +
        std::to_string(schemes.layers.size()) + " layers, graph has " +
        std::to_string(folded.layers.size()));

  ModelGraph q = folded;
  q.quantized = true;
  q.bit_width = schemes.bit_width;
  q.input_scheme = schemes.input;
  q.name = folded.name + "-q" + std::to_string(schemes.bit_width == 8 ? 7 : 15);

  QuantScheme upstream = schemes.input;
  for (size_t i = 0; i < folded.layers.size(); ++i) {
    const LayerSchemes& ls = schemes.layers[i];
    if (const auto* conv = std::get_if<ConvLayer>(&folded.layers[i])) {
      if (!ls.weights)
        throw std::invalid_argument("quantize_graph: missing weight scheme for layer " +
                                    std::to_string(i));
      QConvLayer ql;
      ql.conv.kernel = conv->conv.kernel;
      ql.conv.in_channels = conv->conv.in_channels;
      ql.conv.out_channels = conv->conv.out_channels;
      ql.conv.stride = conv->conv.stride;
      ql.conv.w_scheme = *ls.weights;
      ql.conv.weights = detail::quantize_weights(conv->conv.weights, *ls.weights);
      if (conv->conv.has_bias())
        ql.conv.bias = detail::quantize_bias(conv->conv.bias,
                                             upstream.shift + ls.weights->shift);
      ql.in_scheme = upstream;
      ql.out_scheme = ls.output;
      ql.relu = conv->relu;
      q.layers[i] = std::move(ql);
    } else if (const auto* fc = std::get_if<FullyConnectedLayer>(&folded.layers[i])) {
      if (!ls.weights)
        throw std::invalid_argument("quantize_graph: missing weight scheme for layer " +
                                    std::to_string(i));
      QFullyConnectedLayer ql;
      ql.fc.in_features = fc->fc.in_features;
      ql.fc.out_features = fc->fc.out_features;
      ql.fc.w_scheme = *ls.weights;
      ql.fc.weights = detail::quantize_weights(fc->fc.weights, *ls.weights);
      ql.fc.bias = detail::quantize_bias(fc->fc.bias,
                                         upstream.shift + ls.weights->shift);
      ql.in_scheme = upstream;
      ql.out_scheme = ls.output;
      q.layers[i] = std::move(ql);
    }
    upstream = ls.output;
  }
  validate(q);
  return q;
}

/// Argmax agreement and worst-case logit deviation between two graphs over
/// a shared input set. Argmax is taken per head group with the fixed
/// tie-break, so two all-zero models agree deterministically.
struct AgreementReport {
  double argmax_agreement = 0.0;
  double max_logit_deviation = 0.0;
  int64_t groups_compared = 0;
};

inline AgreementReport agreement(const ModelGraph& a, const ModelGraph& b,
                                 const std::vector<Series1D>& inputs) {
  if (!(a.input == b.input))
    throw std::invalid_argument("agreement: graphs take different input shapes");
  if (inputs.empty())
    throw std::invalid_argument("agreement: empty input set");
  const int groups = a.head.groups;
  const int classes = a.head.classes;
  AgreementReport rep;
  int64_t agreed = 0;
  for (const auto& x : inputs) {
    const auto ya = run(a, x);
    const auto yb = run(b, x);
    if (ya.size() != yb.size())
      throw std::invalid_argument("agreement: graphs emit different output widths");
    for (size_t i = 0; i < ya.size(); ++i)
      rep.max_logit_deviation =
          std::max(rep.max_logit_deviation,
                   std::abs(static_cast<double>(ya[i]) - yb[i]));
    for (int gi = 0; gi < groups; ++gi) {
      int best_a = 0, best_b = 0;
      for (int k = 1; k < classes; ++k) {
        if (ya[gi * classes + k] > ya[gi * classes + best_a]) best_a = k;
        if (yb[gi * classes + k] > yb[gi * classes + best_b]) best_b = k;
      }
      agreed += best_a == best_b ? 1 : 0;
      ++rep.groups_compared;
    }
  }
  rep.argmax_agreement =
      static_cast<double>(agreed) / static_cast<double>(rep.groups_compared);
  return rep;
}

}  // namespace somno
