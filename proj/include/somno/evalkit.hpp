#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "somno/physio.hpp"
#include "somno/stage.hpp"

namespace somno {

// ---------------------------------------------------------------------------
// Hypnogram assembly and scoring. Pure functions throughout.
// ---------------------------------------------------------------------------

struct HypnogramEntry {
  int epoch_index = 0;
  Stage stage = Stage::Unknown;
  std::array<double, kStageCount> scores{};
};

struct Hypnogram {
  std::string record_id = "record";
  std::vector<HypnogramEntry> entries;  // strictly increasing epoch indices
};

/// One scored epoch as decoded from a window.
struct EpochScore {
  int epoch_index = 0;
  std::array<double, kStageCount> scores{};
};

/// Merges per-window decodes into one hypnogram. Epochs scored by several
/// overlapping windows get their score triples averaged and the stage
/// re-derived by argmax with the fixed tie-break (earlier class wins).
inline Hypnogram assemble_hypnogram(const std::vector<std::vector<EpochScore>>& decodes,
                                    const std::string& record_id = "record") {
  std::map<int, std::pair<std::array<double, kStageCount>, int>> acc;
  for (const auto& window : decodes)
    for (const auto& e : window) {
      auto& slot = acc[e.epoch_index];
      for (int k = 0; k < kStageCount; ++k) slot.first[k] += e.scores[k];
      slot.second += 1;
    }
  if (acc.empty()) throw std::invalid_argument("assemble_hypnogram: no scored epochs");
  Hypnogram h;
  h.record_id = record_id;
  for (const auto& [epoch, slot] : acc) {
    HypnogramEntry entry;
    entry.epoch_index = epoch;
    for (int k = 0; k < kStageCount; ++k)
      entry.scores[k] = slot.first[k] / slot.second;
    int best = 0;
    for (int k = 1; k < kStageCount; ++k)
      if (entry.scores[k] > entry.scores[best]) best = k;
    entry.stage = static_cast<Stage>(best);
    h.entries.push_back(entry);
  }
  return h;
}

/// 3x3 counts indexed (reference, predicted) over (Wake, REM, NREM).
/// Epochs with Unknown reference are excluded.
struct ConfusionMatrix {
  std::array<std::array<int64_t, kStageCount>, kStageCount> counts{};

  int64_t total() const {
    int64_t t = 0;
    for (const auto& row : counts)
      for (int64_t v : row) t += v;
    return t;
  }
  int64_t trace() const {
    int64_t t = 0;
    for (int k = 0; k < kStageCount; ++k) t += counts[k][k];
    return t;
  }
};

inline ConfusionMatrix confusion(const Hypnogram& h,
                                 const std::vector<Annotation>& reference) {
  std::map<int, Stage> ref;
  for (const auto& a : reference) ref[a.epoch_index] = merge_stage(a.stage);
  ConfusionMatrix m;
  int64_t scored = 0;
  for (const auto& e : h.entries) {
    const auto it = ref.find(e.epoch_index);
    if (it == ref.end() || it->second == Stage::Unknown) continue;
    if (e.stage == Stage::Unknown) continue;
    m.counts[static_cast<int>(it->second)][static_cast<int>(e.stage)] += 1;
    ++scored;
  }
  if (scored == 0)
    throw std::runtime_error("confusion: no overlapping scored epochs between "
                             "hypnogram and reference");
  return m;
}

/// Per-class sensitivity/specificity; classes absent from the denominator
/// report no value rather than zero.
struct ClassMetrics {
  std::optional<double> sensitivity;
  std::optional<double> specificity;
};

struct MetricsReport {
  double accuracy = 0.0;
  std::array<ClassMetrics, kStageCount> per_class{};
  int64_t epochs = 0;
};

inline MetricsReport metrics(const ConfusionMatrix& m) {
  const int64_t total = m.total();
  if (total == 0) throw std::invalid_argument("metrics: empty confusion matrix");
  MetricsReport r;
  r.epochs = total;
  r.accuracy = static_cast<double>(m.trace()) / static_cast<double>(total);
  for (int k = 0; k < kStageCount; ++k) {
    const int64_t tp = m.counts[k][k];
    int64_t row = 0, col = 0;
    for (int j = 0; j < kStageCount; ++j) {
      row += m.counts[k][j];
      col += m.counts[j][k];
    }
    const int64_t fn = row - tp;
    const int64_t fp = col - tp;
    const int64_t tn = total - row - fp;
    if (tp + fn > 0)
      r.per_class[k].sensitivity =
          static_cast<double>(tp) / static_cast<double>(tp + fn);
    if (tn + fp > 0)
      r.per_class[k].specificity =
          static_cast<double>(tn) / static_cast<double>(tn + fp);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Hypnogram CSV: epoch_index,start_s,stage,score_wake,score_rem,score_nrem
// with stages spelled WAKE|REM|NREM. Formatting is fixed so identical
// hypnograms serialize to identical bytes.
// ---------------------------------------------------------------------------

inline std::string format_hypnogram_csv(const Hypnogram& h) {
  std::string out = "epoch_index,start_s,stage,score_wake,score_rem,score_nrem\n";
  char buf[160];
  for (const auto& e : h.entries) {
    std::snprintf(buf, sizeof(buf), "%d,%.1f,%s,%.9g,%.9g,%.9g\n", e.epoch_index,
                  static_cast<double>(e.epoch_index) * kEpochSeconds,
                  stage_name(e.stage), e.scores[0], e.scores[1], e.scores[2]);
    out += buf;
  }
  return out;
}

inline Hypnogram parse_hypnogram_csv(const std::string& text,
                                     const std::string& context = "hypnogram") {
  Hypnogram h;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line_no == 1 && line.rfind("epoch_index", 0) == 0) continue;
    std::vector<std::string> f;
    std::string field;
    std::istringstream ls(line);
    while (std::getline(ls, field, ',')) f.push_back(field);
    if (f.size() != 6)
      throw std::runtime_error(context + ": malformed line " + std::to_string(line_no));
    try {
      HypnogramEntry e;
      e.epoch_index = std::stoi(f[0]);
      e.stage = stage_from_name(f[2]);
      for (int k = 0; k < kStageCount; ++k) e.scores[k] = std::stod(f[3 + k]);
      h.entries.push_back(e);
    } catch (const std::exception& ex) {
      throw std::runtime_error(context + ": malformed line " + std::to_string(line_no) +
                               ": " + ex.what());
    }
  }
  std::sort(h.entries.begin(), h.entries.end(),
            [](const HypnogramEntry& a, const HypnogramEntry& b) {
              return a.epoch_index < b.epoch_index;
            });
  for (size_t i = 1; i < h.entries.size(); ++i)
    if (h.entries[i].epoch_index == h.entries[i - 1].epoch_index)
      throw std::runtime_error(context + ": duplicate epoch index " +
                               std::to_string(h.entries[i].epoch_index));
  return h;
}

/// Key=value report, one metric per line. Undefined metrics print the
/// literal "undefined". `accuracy_pooled` pools all scored epochs;
/// `accuracy_mean_per_record` averages per-record accuracies (identical for
/// a single record, reported under both definitions).
inline std::string format_metrics_report(const MetricsReport& r,
                                         const ConfusionMatrix& m,
                                         double mean_per_record_accuracy) {
  static const char* names[kStageCount] = {"wake", "rem", "nrem"};
  char buf[96];
  std::string out;
  std::snprintf(buf, sizeof(buf), "epochs=%lld\n", static_cast<long long>(r.epochs));
  out += buf;
  std::snprintf(buf, sizeof(buf), "accuracy_pooled=%.9g\n", r.accuracy);
  out += buf;
  std::snprintf(buf, sizeof(buf), "accuracy_mean_per_record=%.9g\n",
                mean_per_record_accuracy);
  out += buf;
  for (int i = 0; i < kStageCount; ++i)
    for (int j = 0; j < kStageCount; ++j) {
      std::snprintf(buf, sizeof(buf), "confusion_%s_%s=%lld\n", names[i], names[j],
                    static_cast<long long>(m.counts[i][j]));
      out += buf;
    }
  for (int k = 0; k < kStageCount; ++k) {
    if (r.per_class[k].sensitivity)
      std::snprintf(buf, sizeof(buf), "sensitivity_%s=%.9g\n", names[k],
                    *r.per_class[k].sensitivity);
    else
      std::snprintf(buf, sizeof(buf), "sensitivity_%s=undefined\n", names[k]);
    out += buf;
    if (r.per_class[k].specificity)
      std::snprintf(buf, sizeof(buf), "specificity_%s=%.9g\n", names[k],
                    *r.per_class[k].specificity);
    else
      std::snprintf(buf, sizeof(buf), "specificity_%s=undefined\n", names[k]);
    out += buf;
  }
  return out;
}

}  // namespace somno
