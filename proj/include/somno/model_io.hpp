#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "somno/blob.hpp"
#include "somno/graph.hpp"

namespace somno {

// ---------------------------------------------------------------------------
// Model container: a JSON manifest at `path` plus a little-endian binary
// parameter blob at `path + ".bin"`.
//
// The manifest records layer kinds and hyperparameters, the input shape and
// head grouping, per-layer output shapes, quantization schemes, format
// version and the blob's length and FNV-1a digest. The blob concatenates
// parameters in layer order; within a layer, weights then bias; conv weights
// [out][in][kernel] row-major; a fused batch norm appends epsilon, gamma,
// beta, mean, var; LSTM gates in the order input, forget, cell, output, each
// W then U then b. Quantized layers store weights as int8/int16 and biases
// as int64 (pre-scaled to input shift + weight shift).
//
// Loaders reject, in this order: malformed manifest, unsupported version,
// shape-inference disagreement with the manifest, blob length mismatch
// (naming the offending layer), blob digest mismatch.
// ---------------------------------------------------------------------------

inline constexpr int kModelFormatVersion = 1;
inline constexpr const char* kModelFormatName = "somno-model";

namespace detail {

using nlohmann::json;

inline json scheme_to_json(const QuantScheme& s) {
  return json{{"bit_width", s.bit_width}, {"shift", s.shift}};
}

inline QuantScheme scheme_from_json(const json& j) {
  QuantScheme s;
  s.bit_width = j.at("bit_width").get<int>();
  s.shift = j.at("shift").get<int>();
  validate(s);
  return s;
}

struct LayerJsonV {
  json operator()(const ConvLayer& l) const {
    return json{{"kind", "conv"},
                {"kernel", l.conv.kernel},
                {"stride", l.conv.stride},
                {"in_channels", l.conv.in_channels},
                {"out_channels", l.conv.out_channels},
                {"bias", l.conv.has_bias()},
                {"batchnorm", l.bn.has_value()},
                {"relu", l.relu}};
  }
  json operator()(const MaxPoolLayer& l) const {
    return json{{"kind", "maxpool"}, {"window", l.window}, {"stride", l.stride}};
  }
  json operator()(const BatchNormLayer& l) const {
    return json{{"kind", "batchnorm"}, {"channels", l.bn.channels}};
  }
  json operator()(const ReluLayer&) const { return json{{"kind", "relu"}}; }
  json operator()(const FlattenLayer&) const { return json{{"kind", "flatten"}}; }
  json operator()(const FullyConnectedLayer& l) const {
    return json{{"kind", "fc"},
                {"in_features", l.fc.in_features},
                {"out_features", l.fc.out_features}};
  }
  json operator()(const LstmLayer& l) const {
    return json{{"kind", "lstm"},
                {"input_size", l.lstm.input_size},
                {"hidden_size", l.lstm.hidden_size},
                {"last_only", l.last_only}};
  }
  json operator()(const SoftmaxHeadLayer& l) const {
    return json{{"kind", "softmax_head"}, {"groups", l.groups}, {"classes", l.classes}};
  }
  json operator()(const QConvLayer& l) const {
    return json{{"kind", "qconv"},
                {"kernel", l.conv.kernel},
                {"stride", l.conv.stride},
                {"in_channels", l.conv.in_channels},
                {"out_channels", l.conv.out_channels},
                {"bias", l.conv.has_bias()},
                {"relu", l.relu},
                {"w_scheme", scheme_to_json(l.conv.w_scheme)},
                {"in_scheme", scheme_to_json(l.in_scheme)},
                {"out_scheme", scheme_to_json(l.out_scheme)}};
  }
  json operator()(const QFullyConnectedLayer& l) const {
    return json{{"kind", "qfc"},
                {"in_features", l.fc.in_features},
                {"out_features", l.fc.out_features},
                {"bias", !l.fc.bias.empty()},
                {"w_scheme", scheme_to_json(l.fc.w_scheme)},
                {"in_scheme", scheme_to_json(l.in_scheme)},
                {"out_scheme", scheme_to_json(l.out_scheme)}};
  }
};

struct LayerBlobWriteV {
  BlobWriter& w;

  void write_bn(const BatchNormParams& bn) const {
    w.f32(bn.epsilon);
    w.f32_array(bn.gamma);
    w.f32_array(bn.beta);
    w.f32_array(bn.mean);
    w.f32_array(bn.var);
  }
  void write_qints(const std::vector<int32_t>& vals, int bit_width) const {
    for (int32_t v : vals) {
      if (bit_width == 8)
        w.i8(static_cast<int8_t>(v));
      else
        w.i16(static_cast<int16_t>(v));
    }
  }

  void operator()(const ConvLayer& l) const {
    w.f32_array(l.conv.weights);
    if (l.conv.has_bias()) w.f32_array(l.conv.bias);
    if (l.bn) write_bn(*l.bn);
  }
  void operator()(const MaxPoolLayer&) const {}
  void operator()(const BatchNormLayer& l) const { write_bn(l.bn); }
  void operator()(const ReluLayer&) const {}
  void operator()(const FlattenLayer&) const {}
  void operator()(const FullyConnectedLayer& l) const {
    w.f32_array(l.fc.weights);
    w.f32_array(l.fc.bias);
  }
  void operator()(const LstmLayer& l) const {
    for (const auto& g : l.lstm.gates) {
      w.f32_array(g.w_input);
      w.f32_array(g.w_recurrent);
      w.f32_array(g.bias);
    }
  }
  void operator()(const SoftmaxHeadLayer&) const {}
  void operator()(const QConvLayer& l) const {
    write_qints(l.conv.weights, l.conv.w_scheme.bit_width);
    for (int64_t b : l.conv.bias) w.i64(b);
  }
  void operator()(const QFullyConnectedLayer& l) const {
    write_qints(l.fc.weights, l.fc.w_scheme.bit_width);
    for (int64_t b : l.fc.bias) w.i64(b);
  }
};

/// Parses a manifest layer entry into a LayerSpec with empty parameter
/// payloads; the blob pass fills them in.
inline LayerSpec layer_from_json(const json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "conv") {
    ConvLayer l;
    l.conv.kernel = j.at("kernel").get<int>();
    l.conv.stride = j.at("stride").get<int>();
    l.conv.in_channels = j.at("in_channels").get<int>();
    l.conv.out_channels = j.at("out_channels").get<int>();
    l.conv.weights.assign(static_cast<size_t>(l.conv.kernel) *
                              l.conv.in_channels * l.conv.out_channels,
                          0.f);
    if (j.at("bias").get<bool>()) l.conv.bias.assign(l.conv.out_channels, 0.f);
    if (j.at("batchnorm").get<bool>()) {
      BatchNormParams bn;
      bn.channels = l.conv.out_channels;
      bn.gamma.assign(bn.channels, 1.f);
      bn.beta.assign(bn.channels, 0.f);
      bn.mean.assign(bn.channels, 0.f);
      bn.var.assign(bn.channels, 1.f);
      l.bn = std::move(bn);
    }
    l.relu = j.at("relu").get<bool>();
    return l;
  }
  if (kind == "maxpool")
    return MaxPoolLayer{j.at("window").get<int>(), j.at("stride").get<int>()};
  if (kind == "batchnorm") {
    BatchNormLayer l;
    l.bn.channels = j.at("channels").get<int>();
    l.bn.gamma.assign(l.bn.channels, 1.f);
    l.bn.beta.assign(l.bn.channels, 0.f);
    l.bn.mean.assign(l.bn.channels, 0.f);
    l.bn.var.assign(l.bn.channels, 1.f);
    return l;
  }
  if (kind == "relu") return ReluLayer{};
  if (kind == "flatten") return FlattenLayer{};
  if (kind == "fc") {
    FullyConnectedLayer l;
    l.fc.in_features = j.at("in_features").get<int>();
    l.fc.out_features = j.at("out_features").get<int>();
    l.fc.weights.assign(static_cast<size_t>(l.fc.in_features) * l.fc.out_features, 0.f);
    l.fc.bias.assign(l.fc.out_features, 0.f);
    return l;
  }
  if (kind == "lstm") {
    LstmLayer l;
    l.lstm.input_size = j.at("input_size").get<int>();
    l.lstm.hidden_size = j.at("hidden_size").get<int>();
    const size_t h = static_cast<size_t>(l.lstm.hidden_size);
    for (auto& g : l.lstm.gates) {
      g.w_input.assign(h * l.lstm.input_size, 0.f);
      g.w_recurrent.assign(h * h, 0.f);
      g.bias.assign(h, 0.f);
    }
    l.last_only = j.at("last_only").get<bool>();
    return l;
  }
  if (kind == "softmax_head")
    return SoftmaxHeadLayer{j.at("groups").get<int>(), j.at("classes").get<int>()};
  if (kind == "qconv") {
    QConvLayer l;
    l.conv.kernel = j.at("kernel").get<int>();
    l.conv.stride = j.at("stride").get<int>();
    l.conv.in_channels = j.at("in_channels").get<int>();
    l.conv.out_channels = j.at("out_channels").get<int>();
    l.conv.w_scheme = scheme_from_json(j.at("w_scheme"));
    l.in_scheme = scheme_from_json(j.at("in_scheme"));
    l.out_scheme = scheme_from_json(j.at("out_scheme"));
    l.conv.weights.assign(static_cast<size_t>(l.conv.kernel) *
                              l.conv.in_channels * l.conv.out_channels,
                          0);
    if (j.at("bias").get<bool>()) l.conv.bias.assign(l.conv.out_channels, 0);
    l.relu = j.at("relu").get<bool>();
    return l;
  }
  if (kind == "qfc") {
    QFullyConnectedLayer l;
    l.fc.in_features = j.at("in_features").get<int>();
    l.fc.out_features = j.at("out_features").get<int>();
    l.fc.w_scheme = scheme_from_json(j.at("w_scheme"));
    l.in_scheme = scheme_from_json(j.at("in_scheme"));
    l.out_scheme = scheme_from_json(j.at("out_scheme"));
    l.fc.weights.assign(static_cast<size_t>(l.fc.in_features) * l.fc.out_features, 0);
    if (j.at("bias").get<bool>()) l.fc.bias.assign(l.fc.out_features, 0);
    return l;
  }
  throw std::runtime_error("model manifest: unknown layer kind '" + kind + "'");
}

struct LayerBlobReadV {
  BlobReader& r;

  void read_bn(BatchNormParams& bn) const {
    bn.epsilon = r.f32();
    bn.gamma = r.f32_array(bn.gamma.size());
    bn.beta = r.f32_array(bn.beta.size());
    bn.mean = r.f32_array(bn.mean.size());
    bn.var = r.f32_array(bn.var.size());
  }
  void read_qints(std::vector<int32_t>& vals, int bit_width) const {
    for (auto& v : vals) v = bit_width == 8 ? r.i8() : r.i16();
  }

  void operator()(ConvLayer& l) const {
    l.conv.weights = r.f32_array(l.conv.weights.size());
    if (l.conv.has_bias()) l.conv.bias = r.f32_array(l.conv.bias.size());
    if (l.bn) read_bn(*l.bn);
  }
  void operator()(MaxPoolLayer&) const {}
  void operator()(BatchNormLayer& l) const { read_bn(l.bn); }
  void operator()(ReluLayer&) const {}
  void operator()(FlattenLayer&) const {}
  void operator()(FullyConnectedLayer& l) const {
    l.fc.weights = r.f32_array(l.fc.weights.size());
    l.fc.bias = r.f32_array(l.fc.bias.size());
  }
  void operator()(LstmLayer& l) const {
    for (auto& g : l.lstm.gates) {
      g.w_input = r.f32_array(g.w_input.size());
      g.w_recurrent = r.f32_array(g.w_recurrent.size());
      g.bias = r.f32_array(g.bias.size());
    }
  }
  void operator()(SoftmaxHeadLayer&) const {}
  void operator()(QConvLayer& l) const {
    read_qints(l.conv.weights, l.conv.w_scheme.bit_width);
    for (auto& b : l.conv.bias) b = r.i64();
  }
  void operator()(QFullyConnectedLayer& l) const {
    read_qints(l.fc.weights, l.fc.w_scheme.bit_width);
    for (auto& b : l.fc.bias) b = r.i64();
  }
};

}  // namespace detail

inline std::vector<uint8_t> model_blob(const ModelGraph& g) {
  BlobWriter w;
  for (const auto& l : g.layers) std::visit(detail::LayerBlobWriteV{w}, l);
  return w.bytes;
}

inline std::string blob_path_of(const std::string& manifest_path) {
  return manifest_path + ".bin";
}

inline void save_model(const ModelGraph& g, const std::string& path) {
  validate(g);
  using nlohmann::json;
  const auto blob = model_blob(g);
  const auto out_shapes = infer_output_shapes(g);

  json manifest;
  manifest["format"] = kModelFormatName;
  manifest["version"] = kModelFormatVersion;
  manifest["name"] = g.name;
  manifest["input"] = {{"length", g.input.length}, {"channels", g.input.channels}};
  manifest["head"] = {{"groups", g.head.groups}, {"classes", g.head.classes}};
  manifest["quantized"] = g.quantized;
  if (g.quantized) {
    manifest["bit_width"] = g.bit_width;
    if (g.input_scheme)
      manifest["input_scheme"] = detail::scheme_to_json(*g.input_scheme);
  }
  json layers = json::array();
  for (const auto& l : g.layers) layers.push_back(std::visit(detail::LayerJsonV{}, l));
  manifest["layers"] = std::move(layers);
  json shapes = json::array();
  for (const auto& s : out_shapes) shapes.push_back(json::array({s.length, s.channels}));
  manifest["output_shapes"] = std::move(shapes);

  const std::string blob_file = blob_path_of(path);
  const size_t slash = blob_file.find_last_of('/');
  manifest["blob"] = {{"file", slash == std::string::npos
                                   ? blob_file
                                   : blob_file.substr(slash + 1)},
                      {"bytes", blob.size()},
                      {"fnv1a64", to_hex(fnv1a64(blob))}};

  write_text_file(path, manifest.dump(2) + "\n");
  write_file(blob_file, blob);
}

inline ModelGraph load_model(const std::string& path) {
  using nlohmann::json;
  json manifest;
  try {
    manifest = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw std::runtime_error("model manifest: malformed JSON in " + path + ": " + e.what());
  }

  try {
    if (manifest.at("format").get<std::string>() != kModelFormatName)
      throw std::runtime_error("model manifest: not a model container");
    if (manifest.at("version").get<int>() != kModelFormatVersion)
      throw std::runtime_error("model manifest: unsupported version " +
                               std::to_string(manifest.at("version").get<int>()));

    ModelGraph g;
    g.name = manifest.at("name").get<std::string>();
    g.version = manifest.at("version").get<int>();
    g.input.length = manifest.at("input").at("length").get<int>();
    g.input.channels = manifest.at("input").at("channels").get<int>();
    g.head.groups = manifest.at("head").at("groups").get<int>();
    g.head.classes = manifest.at("head").at("classes").get<int>();
    g.quantized = manifest.at("quantized").get<bool>();
    if (g.quantized) {
      g.bit_width = manifest.at("bit_width").get<int>();
      if (manifest.contains("input_scheme"))
        g.input_scheme = detail::scheme_from_json(manifest.at("input_scheme"));
    }
    for (const auto& lj : manifest.at("layers"))
      g.layers.push_back(detail::layer_from_json(lj));

    // Shapes are recomputed and must match the stored manifest.
    const auto recomputed = infer_output_shapes(g);
    const auto& stored = manifest.at("output_shapes");
    if (stored.size() != recomputed.size())
      throw std::runtime_error("model manifest: shape inference disagreement (layer count)");
    for (size_t i = 0; i < recomputed.size(); ++i) {
      const Shape s{stored.at(i).at(0).get<int>(), stored.at(i).at(1).get<int>()};
      if (!(s == recomputed[i]))
        throw std::runtime_error(
            "model manifest: shape inference disagreement at layer " +
            std::to_string(i) + ": manifest says " + s.str() +
            ", recomputed " + recomputed[i].str());
    }

    const auto& blob_meta = manifest.at("blob");
    const std::string blob_file =
        dir_of(path) + blob_meta.at("file").get<std::string>();
    const auto blob = read_file(blob_file);

    // Fill parameters first: a truncated blob then names the layer it ran
    // out in. Size and digest checks follow.
    BlobReader r(blob);
    for (size_t i = 0; i < g.layers.size(); ++i) {
      r.context = "layer " + std::to_string(i) + " (" +
                  layer_kind(g.layers[i]) + ")";
      std::visit(detail::LayerBlobReadV{r}, g.layers[i]);
    }
    if (r.pos != blob.size())
      throw std::runtime_error("weight blob length mismatch: " +
                               std::to_string(blob.size() - r.pos) +
                               " trailing bytes");
    if (blob.size() != blob_meta.at("bytes").get<size_t>())
      throw std::runtime_error(
          "weight blob length mismatch: manifest declares " +
          std::to_string(blob_meta.at("bytes").get<size_t>()) + " bytes, file has " +
          std::to_string(blob.size()));
    if (to_hex(fnv1a64(blob)) != blob_meta.at("fnv1a64").get<std::string>())
      throw std::runtime_error("weight blob digest mismatch in " + blob_file);

    validate(g);
    return g;
  } catch (const json::exception& e) {
    throw std::runtime_error("model manifest: missing or malformed field: " +
                             std::string(e.what()));
  }
}

}  // namespace somno
