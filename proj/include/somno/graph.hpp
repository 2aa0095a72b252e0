#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "somno/ops.hpp"
#include "somno/tensor.hpp"

namespace somno {

struct Shape {
  int length = 0;
  int channels = 0;

  int64_t elements() const { return int64_t{length} * channels; }
  bool operator==(const Shape&) const = default;
  std::string str() const {
    return std::to_string(length) + "x" + std::to_string(channels);
  }
};

// ---------------------------------------------------------------------------
// Layer specifications. A convolution row may carry a fused batch norm and
// ReLU; the reference CNN is built that way so its layer list matches its
// published table row for row. Standalone BatchNorm/ReLU/Flatten kinds exist
// for generic stacks.
// ---------------------------------------------------------------------------

struct ConvLayer {
  ConvParams conv;
  std::optional<BatchNormParams> bn;
  bool relu = false;
};

struct MaxPoolLayer {
  int window = 2;
  int stride = 2;
};

struct BatchNormLayer {
  BatchNormParams bn;
};

struct ReluLayer {};

struct FlattenLayer {};

struct FullyConnectedLayer {
  FcParams fc;
};

struct LstmLayer {
  LstmParams lstm;
  bool last_only = false;  // emit only the final hidden state
};

/// Grouped classification head: softmax over each consecutive group of
/// `classes` logits.
struct SoftmaxHeadLayer {
  int groups = 1;
  int classes = 3;
};

struct QConvLayer {
  QConvParams conv;
  QuantScheme in_scheme;
  QuantScheme out_scheme;
  bool relu = false;
};

struct QFullyConnectedLayer {
  QFcParams fc;
  QuantScheme in_scheme;
  QuantScheme out_scheme;
};

using LayerSpec =
    std::variant<ConvLayer, MaxPoolLayer, BatchNormLayer, ReluLayer,
                 FlattenLayer, FullyConnectedLayer, LstmLayer,
                 SoftmaxHeadLayer, QConvLayer, QFullyConnectedLayer>;

inline const char* layer_kind(const LayerSpec& l) {
  struct V {
    const char* operator()(const ConvLayer&) const { return "conv"; }
    const char* operator()(const MaxPoolLayer&) const { return "maxpool"; }
    const char* operator()(const BatchNormLayer&) const { return "batchnorm"; }
    const char* operator()(const ReluLayer&) const { return "relu"; }
    const char* operator()(const FlattenLayer&) const { return "flatten"; }
    const char* operator()(const FullyConnectedLayer&) const { return "fc"; }
    const char* operator()(const LstmLayer&) const { return "lstm"; }
    const char* operator()(const SoftmaxHeadLayer&) const { return "softmax_head"; }
    const char* operator()(const QConvLayer&) const { return "qconv"; }
    const char* operator()(const QFullyConnectedLayer&) const { return "qfc"; }
  };
  return std::visit(V{}, l);
}

inline void validate(const LayerSpec& l) {
  if (const auto* c = std::get_if<ConvLayer>(&l)) {
    validate(c->conv);
    if (c->bn) {
      validate(*c->bn);
      if (c->bn->channels != c->conv.out_channels)
        throw std::invalid_argument("ConvLayer: fused batch norm channel mismatch");
    }
  } else if (const auto* p = std::get_if<MaxPoolLayer>(&l)) {
    if (p->window < 1 || p->stride < 1)
      throw std::invalid_argument("MaxPoolLayer: window and stride must be positive");
  } else if (const auto* b = std::get_if<BatchNormLayer>(&l)) {
    validate(b->bn);
  } else if (const auto* f = std::get_if<FullyConnectedLayer>(&l)) {
    validate(f->fc);
  } else if (const auto* r = std::get_if<LstmLayer>(&l)) {
    validate(r->lstm);
  } else if (const auto* h = std::get_if<SoftmaxHeadLayer>(&l)) {
    if (h->groups < 1 || h->classes < 1)
      throw std::invalid_argument("SoftmaxHeadLayer: groups and classes must be positive");
  } else if (const auto* qc = std::get_if<QConvLayer>(&l)) {
    validate(qc->in_scheme);
    validate(qc->out_scheme);
    validate(qc->conv.w_scheme);
    const size_t want = static_cast<size_t>(qc->conv.kernel) *
                        qc->conv.in_channels * qc->conv.out_channels;
    if (qc->conv.weights.size() != want)
      throw std::invalid_argument("QConvLayer: weight count does not match shape");
  } else if (const auto* qf = std::get_if<QFullyConnectedLayer>(&l)) {
    validate(qf->in_scheme);
    validate(qf->out_scheme);
    validate(qf->fc.w_scheme);
    if (qf->fc.weights.size() !=
        static_cast<size_t>(qf->fc.in_features) * qf->fc.out_features)
      throw std::invalid_argument("QFullyConnectedLayer: weight count does not match shape");
  }
}

// ---------------------------------------------------------------------------
// Model graph: a validated sequential stack with an input shape and the
// decode grouping of its final logits. Immutable once built; `run` is
// reentrant and concurrent runs on one graph are safe.
// ---------------------------------------------------------------------------

struct HeadGrouping {
  int groups = 1;
  int classes = 3;

  int width() const { return groups * classes; }
  bool operator==(const HeadGrouping&) const = default;
};

struct ModelGraph {
  std::string name = "model";
  int version = 1;
  Shape input;
  std::vector<LayerSpec> layers;
  HeadGrouping head;
  bool quantized = false;
  int bit_width = 0;                        // set when quantized
  std::optional<QuantScheme> input_scheme;  // set when quantized
};

namespace detail {

/// The shape a layer consumes. Fully connected layers flatten implicitly, so
/// their consumed shape is the flattened view of the incoming tensor.
inline Shape consumed_shape(const LayerSpec& l, Shape in) {
  if (std::holds_alternative<FullyConnectedLayer>(l) ||
      std::holds_alternative<QFullyConnectedLayer>(l))
    return Shape{1, static_cast<int>(in.elements())};
  return in;
}

struct OutShapeV {
  Shape in;
  int index;

  [[noreturn]] void fail(const std::string& what) const {
    throw std::invalid_argument("layer " + std::to_string(index) + ": " + what);
  }
  Shape conv_shape(int in_channels, int out_channels, int stride) const {
    if (in.channels != in_channels)
      fail("conv expects " + std::to_string(in_channels) + " channels, got " +
           std::to_string(in.channels));
    return Shape{conv1d_out_length(in.length, stride), out_channels};
  }
  Shape pool_shape(int window, int stride) const {
    if (window > in.length) fail("pool window exceeds input length");
    return Shape{(in.length - window) / stride + 1, in.channels};
  }
  Shape fc_shape(int in_features, int out_features) const {
    if (in.elements() != in_features)
      fail("fully connected expects " + std::to_string(in_features) +
           " features, got " + std::to_string(in.elements()));
    return Shape{1, out_features};
  }

  Shape operator()(const ConvLayer& l) const {
    return conv_shape(l.conv.in_channels, l.conv.out_channels, l.conv.stride);
  }
  Shape operator()(const MaxPoolLayer& l) const {
    return pool_shape(l.window, l.stride);
  }
  Shape operator()(const BatchNormLayer& l) const {
    if (in.channels != l.bn.channels)
      fail("batch norm expects " + std::to_string(l.bn.channels) +
           " channels, got " + std::to_string(in.channels));
    return in;
  }
  Shape operator()(const ReluLayer&) const { return in; }
  Shape operator()(const FlattenLayer&) const {
    return Shape{1, static_cast<int>(in.elements())};
  }
  Shape operator()(const FullyConnectedLayer& l) const {
    return fc_shape(l.fc.in_features, l.fc.out_features);
  }
  Shape operator()(const LstmLayer& l) const {
    if (in.channels != l.lstm.input_size)
      fail("lstm expects " + std::to_string(l.lstm.input_size) +
           " channels, got " + std::to_string(in.channels));
    return Shape{l.last_only ? 1 : in.length, l.lstm.hidden_size};
  }
  Shape operator()(const SoftmaxHeadLayer& l) const {
    if (in.elements() != int64_t{l.groups} * l.classes)
      fail("softmax head expects " + std::to_string(l.groups * l.classes) +
           " logits, got " + std::to_string(in.elements()));
    return in;
  }
  Shape operator()(const QConvLayer& l) const {
    return conv_shape(l.conv.in_channels, l.conv.out_channels, l.conv.stride);
  }
  Shape operator()(const QFullyConnectedLayer& l) const {
    return fc_shape(l.fc.in_features, l.fc.out_features);
  }
};

}  // namespace detail

inline Shape layer_output_shape(const LayerSpec& l, Shape in, int index = -1) {
  return std::visit(detail::OutShapeV{in, index}, l);
}

/// Input shape of every layer, as consumed (fully connected rows report the
/// flattened view). Throws on incompatible consecutive shapes, naming the
/// offending layer index.
inline std::vector<Shape> infer_shapes(const ModelGraph& g) {
  std::vector<Shape> shapes;
  shapes.reserve(g.layers.size());
  Shape cur = g.input;
  for (size_t i = 0; i < g.layers.size(); ++i) {
    validate(g.layers[i]);
    shapes.push_back(detail::consumed_shape(g.layers[i], cur));
    cur = layer_output_shape(g.layers[i], cur, static_cast<int>(i));
  }
  return shapes;
}

/// Output shape of every layer.
inline std::vector<Shape> infer_output_shapes(const ModelGraph& g) {
  std::vector<Shape> shapes;
  shapes.reserve(g.layers.size());
  Shape cur = g.input;
  for (size_t i = 0; i < g.layers.size(); ++i) {
    validate(g.layers[i]);
    cur = layer_output_shape(g.layers[i], cur, static_cast<int>(i));
    shapes.push_back(cur);
  }
  return shapes;
}

inline Shape output_shape(const ModelGraph& g) {
  Shape cur = g.input;
  for (size_t i = 0; i < g.layers.size(); ++i)
    cur = layer_output_shape(g.layers[i], cur, static_cast<int>(i));
  return cur;
}

inline void validate(const ModelGraph& g) {
  if (g.input.length < 1 || g.input.channels < 1)
    throw std::invalid_argument("ModelGraph: input shape must be positive");
  infer_shapes(g);  // validates layers and shape compatibility
}

// ---------------------------------------------------------------------------
// Cost accounting. All counts are exact integers.
//
// Parameters follow the deployable-model convention: conv kernel*in*out
// (+out when an explicit bias is present); a batch norm contributes
// `channels` — folding absorbs its scale into the conv weights and
// materializes exactly one bias per channel, and running statistics are
// stored but never counted. Fully connected: in*out + out. LSTM:
// 4*((input+hidden)*hidden + hidden).
//
// MACs: conv out_length*kernel*in*out; fully connected in*out; LSTM
// 4*(input+hidden)*hidden per step times sequence length. Batch norm, ReLU,
// pooling and softmax cost zero by default (batch norm is assumed folded);
// `include_elementwise` adds a rough per-element op count for diagnostics.
// ---------------------------------------------------------------------------

struct LayerCost {
  std::string kind;
  Shape in;
  Shape out;
  int64_t params = 0;
  int64_t macs = 0;
};

struct CostReport {
  std::vector<LayerCost> layers;
  int64_t total_params = 0;
  int64_t total_macs = 0;
  int64_t peak_activation_bytes = 0;
};

inline int64_t lstm_param_count(int input_size, int hidden_size) {
  return 4 * ((int64_t{input_size} + hidden_size) * hidden_size + hidden_size);
}

inline int64_t layer_param_count(const LayerSpec& l) {
  struct V {
    int64_t operator()(const ConvLayer& c) const {
      int64_t n = int64_t{c.conv.kernel} * c.conv.in_channels * c.conv.out_channels;
      if (c.conv.has_bias()) n += c.conv.out_channels;
      if (c.bn) n += c.bn->channels;
      return n;
    }
    int64_t operator()(const MaxPoolLayer&) const { return 0; }
    int64_t operator()(const BatchNormLayer& b) const { return b.bn.channels; }
    int64_t operator()(const ReluLayer&) const { return 0; }
    int64_t operator()(const FlattenLayer&) const { return 0; }
    int64_t operator()(const FullyConnectedLayer& f) const {
      return int64_t{f.fc.in_features} * f.fc.out_features + f.fc.out_features;
    }
    int64_t operator()(const LstmLayer& r) const {
      return lstm_param_count(r.lstm.input_size, r.lstm.hidden_size);
    }
    int64_t operator()(const SoftmaxHeadLayer&) const { return 0; }
    int64_t operator()(const QConvLayer& c) const {
      int64_t n = int64_t{c.conv.kernel} * c.conv.in_channels * c.conv.out_channels;
      if (c.conv.has_bias()) n += c.conv.out_channels;
      return n;
    }
    int64_t operator()(const QFullyConnectedLayer& f) const {
      return int64_t{f.fc.in_features} * f.fc.out_features + f.fc.out_features;
    }
  };
  return std::visit(V{}, l);
}

inline int64_t layer_mac_count(const LayerSpec& l, Shape in, Shape out,
                               bool include_elementwise = false) {
  struct V {
    Shape in, out;
    bool elementwise;

    int64_t operator()(const ConvLayer& c) const {
      int64_t n = int64_t{out.length} * c.conv.kernel * c.conv.in_channels *
                  c.conv.out_channels;
      if (elementwise) {
        if (c.bn) n += out.elements();
        if (c.relu) n += out.elements();
      }
      return n;
    }
    int64_t operator()(const MaxPoolLayer& p) const {
      return elementwise ? out.elements() * p.window : 0;
    }
    int64_t operator()(const BatchNormLayer&) const {
      return elementwise ? out.elements() : 0;
    }
    int64_t operator()(const ReluLayer&) const {
      return elementwise ? out.elements() : 0;
    }
    int64_t operator()(const FlattenLayer&) const { return 0; }
    int64_t operator()(const FullyConnectedLayer& f) const {
      return int64_t{f.fc.in_features} * f.fc.out_features;
    }
    int64_t operator()(const LstmLayer& r) const {
      const int64_t per_step = 4 * (int64_t{r.lstm.input_size} + r.lstm.hidden_size) *
                               r.lstm.hidden_size;
      return per_step * in.length;
    }
    int64_t operator()(const SoftmaxHeadLayer&) const {
      return elementwise ? 2 * out.elements() : 0;
    }
    int64_t operator()(const QConvLayer& c) const {
      int64_t n = int64_t{out.length} * c.conv.kernel * c.conv.in_channels *
                  c.conv.out_channels;
      if (elementwise && c.relu) n += out.elements();
      return n;
    }
    int64_t operator()(const QFullyConnectedLayer& f) const {
      return int64_t{f.fc.in_features} * f.fc.out_features;
    }
  };
  return std::visit(V{in, out, include_elementwise}, l);
}

inline CostReport cost_report(const ModelGraph& g, int bytes_per_element = 4,
                              bool include_elementwise_macs = false) {
  if (bytes_per_element < 1)
    throw std::invalid_argument("cost_report: bytes_per_element must be positive");
  CostReport r;
  Shape cur = g.input;
  for (size_t i = 0; i < g.layers.size(); ++i) {
    const LayerSpec& l = g.layers[i];
    validate(l);
    const Shape in = detail::consumed_shape(l, cur);
    const Shape out = layer_output_shape(l, cur, static_cast<int>(i));
    LayerCost cost;
    cost.kind = layer_kind(l);
    cost.in = in;
    cost.out = out;
    cost.params = layer_param_count(l);
    cost.macs = layer_mac_count(l, in, out, include_elementwise_macs);
    r.total_params += cost.params;
    r.total_macs += cost.macs;
    // Two-buffer ping-pong model: each layer needs its input and output live
    // at once.
    r.peak_activation_bytes =
        std::max(r.peak_activation_bytes,
                 (in.elements() + out.elements()) * bytes_per_element);
    r.layers.push_back(std::move(cost));
    cur = out;
  }
  return r;
}

inline int64_t count_params(const ModelGraph& g) {
  int64_t n = 0;
  for (const auto& l : g.layers) {
    validate(l);
    n += layer_param_count(l);
  }
  return n;
}

inline int64_t count_macs(const ModelGraph& g, bool include_elementwise = false) {
  return cost_report(g, 4, include_elementwise).total_macs;
}

inline int64_t peak_activation_bytes(const ModelGraph& g, int bytes_per_element) {
  return cost_report(g, bytes_per_element).peak_activation_bytes;
}

// ---------------------------------------------------------------------------
// Execution. Activations flow either as float Series1D or as QTensor1D;
// boundaries convert as layers require. Scratch values are per invocation.
// ---------------------------------------------------------------------------

namespace detail {

struct Activation {
  bool is_q = false;
  Series1D f;
  QTensor1D q;

  Series1D to_float() const { return is_q ? dequantize(q) : f; }
  QTensor1D to_q(const QuantScheme& scheme) const {
    if (is_q)
      return q.scheme == scheme ? q : requantize(q, scheme);
    return somno::quantize(f, scheme);
  }
};

inline Activation float_act(Series1D s) {
  Activation a;
  a.f = std::move(s);
  return a;
}

inline Activation q_act(QTensor1D t) {
  Activation a;
  a.is_q = true;
  a.q = std::move(t);
  return a;
}

inline Series1D apply_head(const Series1D& x, int groups, int classes) {
  Series1D y = x;
  std::vector<float> group(classes);
  for (int gi = 0; gi < groups; ++gi) {
    for (int k = 0; k < classes; ++k) group[k] = y.data[gi * classes + k];
    const auto p = softmax(group);
    for (int k = 0; k < classes; ++k) y.data[gi * classes + k] = p[k];
  }
  return y;
}

struct RunV {
  const Activation& in;

  Activation operator()(const ConvLayer& l) const {
    Series1D y = conv1d(in.to_float(), l.conv);
    if (l.bn) y = batchnorm(y, *l.bn);
    if (l.relu) y = relu(y);
    return float_act(std::move(y));
  }
  Activation operator()(const MaxPoolLayer& l) const {
    if (in.is_q) return q_act(maxpool1d_q(in.q, l.window, l.stride));
    return float_act(maxpool1d(in.f, l.window, l.stride));
  }
  Activation operator()(const BatchNormLayer& l) const {
    return float_act(batchnorm(in.to_float(), l.bn));
  }
  Activation operator()(const ReluLayer&) const {
    if (in.is_q) return q_act(relu_q(in.q));
    return float_act(relu(in.f));
  }
  Activation operator()(const FlattenLayer&) const {
    Activation a = in;
    if (a.is_q) {
      a.q.channels = static_cast<int>(a.q.elements());
      a.q.length = 1;
    } else {
      a.f.channels = static_cast<int>(a.f.elements());
      a.f.length = 1;
    }
    return a;
  }
  Activation operator()(const FullyConnectedLayer& l) const {
    const Series1D x = in.to_float();
    Series1D y;
    y.length = 1;
    y.channels = l.fc.out_features;
    y.data = fully_connected(x.data, l.fc);
    return float_act(std::move(y));
  }
  Activation operator()(const LstmLayer& l) const {
    const Series1D x = in.to_float();
    Series1D seq = lstm_sequence(x, l.lstm, make_lstm_state(l.lstm.hidden_size));
    if (!l.last_only) return float_act(std::move(seq));
    Series1D last = make_series(1, l.lstm.hidden_size, 0.f);
    for (int j = 0; j < l.lstm.hidden_size; ++j)
      last.at(0, j) = seq.at(seq.length - 1, j);
    return float_act(std::move(last));
  }
  Activation operator()(const SoftmaxHeadLayer& l) const {
    return float_act(apply_head(in.to_float(), l.groups, l.classes));
  }
  Activation operator()(const QConvLayer& l) const {
    QTensor1D y = conv1d_q(in.to_q(l.in_scheme), l.conv, l.out_scheme);
    if (l.relu) y = relu_q(y);
    return q_act(std::move(y));
  }
  Activation operator()(const QFullyConnectedLayer& l) const {
    return q_act(fully_connected_q(in.to_q(l.in_scheme), l.fc, l.out_scheme));
  }
};

}  // namespace detail

/// Runs the graph on one input window. Returns the final activation as a
/// flat vector (logits, or probabilities when the stack ends in a softmax
/// head). Deterministic: identical inputs give bit-identical outputs.
inline std::vector<float> run(const ModelGraph& g, const Series1D& x) {
  if (x.length != g.input.length || x.channels != g.input.channels)
    throw std::invalid_argument(
        "run: expected input " + g.input.str() + ", found " +
        Shape{x.length, x.channels}.str());
  detail::Activation act;
  if (g.quantized && g.input_scheme)
    act = detail::q_act(quantize(x, *g.input_scheme));
  else
    act = detail::float_act(x);
  for (size_t i = 0; i < g.layers.size(); ++i) {
    validate(g.layers[i]);
    act = std::visit(detail::RunV{act}, g.layers[i]);
  }
  return act.to_float().data;
}

}  // namespace somno
