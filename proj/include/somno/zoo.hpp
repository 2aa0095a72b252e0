#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "somno/graph.hpp"
#include "somno/stage.hpp"

namespace somno {

// ---------------------------------------------------------------------------
// Built-in reference architectures. Builders are pure: the same seed yields
// a bit-identical graph. No trained weights ship with the library; weights
// are drawn uniformly from [-0.05, 0.05].
// ---------------------------------------------------------------------------

/// Head reading of the final logits: one group of 3 for a single scored
/// epoch, or 7 consecutive-epoch groups of 3 for the 21-wide CNN head.
inline HeadGrouping single_epoch_head() { return HeadGrouping{1, kStageCount}; }
inline HeadGrouping multi_epoch_head() { return HeadGrouping{7, kStageCount}; }

inline constexpr int kWindowLength = 2048;  // 512 s at 4 Hz
inline constexpr uint32_t kDefaultSeed = 0x5EED5117u;

namespace detail {

/// Deterministic uniform floats, independent of the standard library's
/// distribution implementation: 24 high bits of mt19937 output.
struct WeightRng {
  std::mt19937 rng;

  explicit WeightRng(uint32_t seed) : rng(seed) {}

  float uniform(float lo, float hi) {
    const float u = static_cast<float>(rng() >> 8) * (1.0f / 16777216.0f);
    return lo + (hi - lo) * u;
  }
  void fill(std::vector<float>& v, float lo = -0.05f, float hi = 0.05f) {
    for (float& x : v) x = uniform(lo, hi);
  }
};

inline ConvLayer random_conv(WeightRng& rng, int kernel, int in_ch, int out_ch,
                             int stride) {
  ConvLayer l;
  l.conv.kernel = kernel;
  l.conv.in_channels = in_ch;
  l.conv.out_channels = out_ch;
  l.conv.stride = stride;
  l.conv.weights.resize(static_cast<size_t>(kernel) * in_ch * out_ch);
  rng.fill(l.conv.weights);
  // Near-identity batch norm: valid running statistics, slight shift so
  // folding is observable.
  BatchNormParams bn;
  bn.channels = out_ch;
  bn.gamma.assign(out_ch, 1.f);
  bn.var.assign(out_ch, 1.f);
  bn.beta.resize(out_ch);
  bn.mean.resize(out_ch);
  rng.fill(bn.beta);
  rng.fill(bn.mean);
  bn.epsilon = 1e-5f;
  l.bn = std::move(bn);
  l.relu = true;
  return l;
}

inline FullyConnectedLayer random_fc(WeightRng& rng, int in_f, int out_f) {
  FullyConnectedLayer l;
  l.fc.in_features = in_f;
  l.fc.out_features = out_f;
  l.fc.weights.resize(static_cast<size_t>(in_f) * out_f);
  l.fc.bias.resize(out_f);
  rng.fill(l.fc.weights);
  rng.fill(l.fc.bias);
  return l;
}

inline LstmLayer random_lstm(WeightRng& rng, int input, int hidden, bool last_only) {
  LstmLayer l;
  l.lstm.input_size = input;
  l.lstm.hidden_size = hidden;
  for (auto& g : l.lstm.gates) {
    g.w_input.resize(static_cast<size_t>(hidden) * input);
    g.w_recurrent.resize(static_cast<size_t>(hidden) * hidden);
    g.bias.resize(hidden);
    rng.fill(g.w_input);
    rng.fill(g.w_recurrent);
    rng.fill(g.bias);
  }
  l.last_only = last_only;
  return l;
}

}  // namespace detail

/// The 14-row reference CNN: eleven temporal convolutions (each carrying a
/// fused batch norm and ReLU), one max pool, and two fully connected layers.
/// The final width must equal head.groups * head.classes (21 by default).
inline ModelGraph build_paper_cnn(HeadGrouping head = multi_epoch_head(),
                                  int input_channels = 3,
                                  uint32_t seed = kDefaultSeed) {
  if (input_channels < 1)
    throw std::invalid_argument("build_paper_cnn: input_channels must be positive");
  if (head.width() != 21)
    throw std::invalid_argument(
        "build_paper_cnn: head decodes " + std::to_string(head.width()) +
        " logits but the final layer emits 21");
  detail::WeightRng rng(seed);
  ModelGraph g;
  g.name = "paper-cnn";
  g.input = Shape{kWindowLength, input_channels};
  g.head = head;

  g.layers.push_back(detail::random_conv(rng, 3, input_channels, 32, 1));
  g.layers.push_back(MaxPoolLayer{2, 2});
  g.layers.push_back(detail::random_conv(rng, 3, 32, 32, 2));
  g.layers.push_back(detail::random_conv(rng, 3, 32, 48, 2));
  g.layers.push_back(detail::random_conv(rng, 3, 48, 64, 2));
  for (int i = 0; i < 5; ++i)
    g.layers.push_back(detail::random_conv(rng, 3, 64, 64, 2));
  g.layers.push_back(detail::random_conv(rng, 3, 64, 64, 1));
  g.layers.push_back(detail::random_conv(rng, 1, 64, 64, 1));
  g.layers.push_back(detail::random_fc(rng, 256, 256));
  g.layers.push_back(detail::random_fc(rng, 256, 21));
  validate(g);
  return g;
}

/// The reference sequence model: LSTM(input->128) over the full window,
/// LSTM(128->32) reduced to its final hidden state, then FC(32->32) and
/// FC(32->head width). The inner FC width of 32 is a documented choice.
inline ModelGraph build_paper_rnn(HeadGrouping head = single_epoch_head(),
                                  int input_size = 2,
                                  uint32_t seed = kDefaultSeed) {
  if (input_size < 1)
    throw std::invalid_argument("build_paper_rnn: input_size must be positive");
  detail::WeightRng rng(seed);
  ModelGraph g;
  g.name = "paper-rnn";
  g.input = Shape{kWindowLength, input_size};
  g.head = head;
  g.layers.push_back(detail::random_lstm(rng, input_size, 128, false));
  g.layers.push_back(detail::random_lstm(rng, 128, 32, true));
  g.layers.push_back(detail::random_fc(rng, 32, 32));
  g.layers.push_back(detail::random_fc(rng, 32, head.width()));
  validate(g);
  return g;
}

/// Per-group decode of a logit vector: softmax over each group of 3, argmax
/// with ties broken toward the earlier class in (Wake, REM, NREM) order.
struct HeadDecode {
  Stage stage;
  std::array<double, kStageCount> scores;
};

inline std::array<double, kStageCount> group_softmax(
    const std::array<double, kStageCount>& logits) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  std::array<double, kStageCount> e{};
  double sum = 0.0;
  for (int k = 0; k < kStageCount; ++k) {
    e[k] = std::exp(logits[k] - mx);
    sum += e[k];
  }
  for (double& v : e) v /= sum;
  return e;
}

inline Stage argmax_stage(const std::array<double, kStageCount>& scores) {
  int best = 0;
  for (int k = 1; k < kStageCount; ++k)
    if (scores[k] > scores[best]) best = k;  // strict: ties keep earlier class
  return static_cast<Stage>(best);
}

inline std::vector<HeadDecode> decode_head(const std::vector<float>& y,
                                           HeadGrouping head) {
  if (y.size() != static_cast<size_t>(head.width()))
    throw std::invalid_argument(
        "decode_head: expected " + std::to_string(head.width()) +
        " logits, got " + std::to_string(y.size()));
  if (head.classes != kStageCount)
    throw std::invalid_argument("decode_head: head must have 3 classes");
  std::vector<HeadDecode> out;
  out.reserve(head.groups);
  for (int gi = 0; gi < head.groups; ++gi) {
    std::array<double, kStageCount> logits{};
    for (int k = 0; k < kStageCount; ++k)
      logits[k] = y[static_cast<size_t>(gi) * kStageCount + k];
    HeadDecode d;
    d.scores = group_softmax(logits);
    d.stage = argmax_stage(d.scores);
    out.push_back(d);
  }
  return out;
}

}  // namespace somno
