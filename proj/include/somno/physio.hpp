#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "somno/blob.hpp"
#include "somno/stage.hpp"
#include "somno/tensor.hpp"

namespace somno {

// ---------------------------------------------------------------------------
// From RR-interval and movement event streams to model-ready windows:
// 4 Hz resampling of the RR tachogram, a binary movement channel, an
// interpolation-quality mask, 512-s windows of 2048 samples, and 30-s epoch
// alignment. Record processing is pure; records may be handled concurrently.
// ---------------------------------------------------------------------------

inline constexpr double kSampleRateHz = 4.0;
inline constexpr int kWindowSamples = 2048;
inline constexpr double kWindowSeconds = kWindowSamples / kSampleRateHz;  // 512
inline constexpr int kEpochSeconds = 30;
inline constexpr int kTargetsPerWindow = 7;
/// First targeted epoch inside a window: the window spans 17.07 epochs and
/// the 7 target epochs sit centered, epochs 5..11 of the covered range.
inline constexpr int kFirstTargetEpoch = 5;
/// Samples farther than this from every RR event are masked as low quality.
inline constexpr double kQualityGapSeconds = 5.0;

struct RrEvent {
  double time_s = 0.0;
  double rr_ms = 0.0;
};

struct MovementEvent {
  double start_s = 0.0;
  double end_s = 0.0;
};

/// Raw annotation stages as scored; N1/N2/N3 merge into NREM downstream.
enum class RawStage { W, N1, N2, N3, Rem, Unknown };

struct Annotation {
  int epoch_index = 0;
  RawStage stage = RawStage::Unknown;
};

inline Stage merge_stage(RawStage raw) {
  switch (raw) {
    case RawStage::W: return Stage::Wake;
    case RawStage::Rem: return Stage::Rem;
    case RawStage::N1:
    case RawStage::N2:
    case RawStage::N3: return Stage::Nrem;
    case RawStage::Unknown: return Stage::Unknown;
  }
  return Stage::Unknown;
}

inline RawStage raw_stage_from_text(const std::string& text) {
  if (text == "W") return RawStage::W;
  if (text == "N1") return RawStage::N1;
  if (text == "N2") return RawStage::N2;
  if (text == "N3") return RawStage::N3;
  if (text == "REM") return RawStage::Rem;
  if (text == "?") return RawStage::Unknown;
  throw std::runtime_error("unrecognized stage label '" + text + "'");
}

/// One subject night: RR events (strictly increasing in time), movement
/// intervals and per-epoch stage annotations.
struct SleepRecord {
  std::string record_id = "record";
  std::vector<RrEvent> rr;
  std::vector<MovementEvent> movement;
  std::vector<Annotation> annotations;

  double duration_s() const {
    double d = 0.0;
    if (!rr.empty()) d = std::max(d, rr.back().time_s);
    for (const auto& m : movement) d = std::max(d, m.end_s);
    for (const auto& a : annotations)
      d = std::max(d, static_cast<double>(a.epoch_index + 1) * kEpochSeconds);
    return d;
  }
};

inline void validate(const SleepRecord& r) {
  for (size_t i = 1; i < r.rr.size(); ++i)
    if (!(r.rr[i].time_s > r.rr[i - 1].time_s))
      throw std::runtime_error("SleepRecord: RR events must be strictly increasing in time");
  for (const auto& e : r.rr) {
    if (e.time_s < 0.0) throw std::runtime_error("SleepRecord: negative RR event time");
    if (!(e.rr_ms > 0.0)) throw std::runtime_error("SleepRecord: RR interval must be positive");
  }
  for (const auto& m : r.movement)
    if (!(m.start_s < m.end_s))
      throw std::runtime_error("SleepRecord: movement interval must have start < end");
  std::vector<int> idx;
  idx.reserve(r.annotations.size());
  for (const auto& a : r.annotations) idx.push_back(a.epoch_index);
  std::sort(idx.begin(), idx.end());
  if (std::adjacent_find(idx.begin(), idx.end()) != idx.end())
    throw std::runtime_error("SleepRecord: duplicate annotation epoch index");
}

/// HRV channel unit. The tachogram default is the interpolated RR duration
/// in seconds; beats-per-minute is offered as an alternative reading.
enum class HrvUnit { RrSeconds, BeatsPerMinute };

inline float hrv_unit_value(double rr_ms, HrvUnit unit) {
  return unit == HrvUnit::RrSeconds ? static_cast<float>(rr_ms / 1000.0)
                                    : static_cast<float>(60000.0 / rr_ms);
}

/// Resamples the RR point set onto the 4 Hz grid starting at t0.
///
/// The value channel is piecewise-linear interpolation of (time, rr) pairs,
/// held constant before the first and after the last event. The quality
/// channel is 1 where some RR event lies within kQualityGapSeconds of the
/// sample and 0 elsewhere; values inside masked gaps are still the
/// interpolated line, the mask is the signal that they are reconstruction.
/// Requires at least 2 events inside [t0, t0 + length/rate].
inline std::pair<std::vector<float>, std::vector<float>> resample_hrv(
    const std::vector<RrEvent>& events, double t0, int length = kWindowSamples,
    double rate_hz = kSampleRateHz, HrvUnit unit = HrvUnit::RrSeconds) {
  if (length < 1 || !(rate_hz > 0.0))
    throw std::invalid_argument("resample_hrv: bad grid");
  const double t_end = t0 + length / rate_hz;
  int usable = 0;
  for (const auto& e : events)
    if (e.time_s >= t0 && e.time_s <= t_end) ++usable;
  if (usable < 2)
    throw std::runtime_error("resample_hrv: fewer than 2 usable RR events in window");

  std::vector<float> hrv(length), quality(length);
  size_t next = 0;  // first event with time >= t
  for (int k = 0; k < length; ++k) {
    const double t = t0 + k / rate_hz;
    while (next < events.size() && events[next].time_s < t) ++next;
    double value_ms;
    double gap = std::numeric_limits<double>::infinity();
    if (next == 0) {
      value_ms = events.front().rr_ms;
      gap = events.front().time_s - t;
    } else if (next == events.size()) {
      value_ms = events.back().rr_ms;
      gap = t - events.back().time_s;
    } else {
      const RrEvent& a = events[next - 1];
      const RrEvent& b = events[next];
      const double u = (t - a.time_s) / (b.time_s - a.time_s);
      value_ms = a.rr_ms + u * (b.rr_ms - a.rr_ms);
      gap = std::min(t - a.time_s, b.time_s - t);
    }
    hrv[k] = hrv_unit_value(value_ms, unit);
    quality[k] = gap <= kQualityGapSeconds ? 1.f : 0.f;
  }
  return {std::move(hrv), std::move(quality)};
}

/// Binary movement channel: 1 when the sample timestamp lies inside any
/// [start, end) interval.
inline std::vector<float> movement_channel(const std::vector<MovementEvent>& events,
                                           double t0, int length = kWindowSamples,
                                           double rate_hz = kSampleRateHz) {
  std::vector<float> ch(length, 0.f);
  for (int k = 0; k < length; ++k) {
    const double t = t0 + k / rate_hz;
    for (const auto& m : events)
      if (t >= m.start_s && t < m.end_s) {
        ch[k] = 1.f;
        break;
      }
  }
  return ch;
}

/// One model-ready window: 2048 x 3 series (HRV, movement, quality), its
/// start time, and the 7 consecutive epochs it scores.
struct HrvWindow {
  Series1D series;
  double start_s = 0.0;
  std::array<int, kTargetsPerWindow> target_epochs{};
};

/// Cuts a record into 512-s windows advancing by stride_epochs * 30 s.
/// Window i starts at i * stride * 30 s; its targets are the 7 consecutive
/// epochs centered in the covered span. With the default stride of 7 the
/// targets tile the record interior exactly once.
inline std::vector<HrvWindow> make_windows(const SleepRecord& r,
                                           int stride_epochs = kTargetsPerWindow,
                                           HrvUnit unit = HrvUnit::RrSeconds) {
  if (stride_epochs < 1)
    throw std::invalid_argument("make_windows: stride_epochs must be positive");
  validate(r);
  const double duration = r.duration_s();
  if (duration < kWindowSeconds)
    throw std::runtime_error("make_windows: record too short (" +
                             std::to_string(duration) + " s < " +
                             std::to_string(kWindowSeconds) + " s)");
  const double stride_s = static_cast<double>(stride_epochs) * kEpochSeconds;
  const int count =
      1 + static_cast<int>(std::floor((duration - kWindowSeconds) / stride_s));
  std::vector<HrvWindow> windows;
  windows.reserve(count);
  for (int i = 0; i < count; ++i) {
    HrvWindow w;
    w.start_s = i * stride_s;
    auto [hrv, quality] = resample_hrv(r.rr, w.start_s, kWindowSamples,
                                       kSampleRateHz, unit);
    const auto movement =
        movement_channel(r.movement, w.start_s, kWindowSamples, kSampleRateHz);
    w.series = make_series(kWindowSamples, 3, 0.f);
    for (int t = 0; t < kWindowSamples; ++t) {
      w.series.at(t, 0) = hrv[t];
      w.series.at(t, 1) = movement[t];
      w.series.at(t, 2) = quality[t];
    }
    const int first_epoch = i * stride_epochs + kFirstTargetEpoch;
    for (int e = 0; e < kTargetsPerWindow; ++e)
      w.target_epochs[e] = first_epoch + e;
    windows.push_back(std::move(w));
  }
  return windows;
}

// ---------------------------------------------------------------------------
// Text ingestion. One event per line, comma separated, optional header line,
// LF or CRLF. Malformed lines are reported with their line number.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

inline bool blank(const std::string& line) {
  return line.find_first_not_of(" \t") == std::string::npos;
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(field);
  return fields;
}

inline double parse_number(const std::string& text, const std::string& file,
                           int line_no) {
  try {
    size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size() && text.find_first_not_of(" \t", used) != std::string::npos)
      throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error(file + ": malformed line " + std::to_string(line_no) +
                             ": expected a number, got '" + text + "'");
  }
}

/// Runs `consume(fields, line_no)` over every data line. The first line may
/// be a header; it is skipped when its first field is not a number.
template <typename F>
void for_each_csv_line(const std::string& path, F&& consume) {
  std::istringstream in(read_text_file(path));
  std::string line;
  int line_no = 0;
  bool first_data_line = true;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (blank(line)) continue;
    const auto fields = split_csv(line);
    if (first_data_line && !fields.empty()) {
      first_data_line = false;
      try {
        size_t used = 0;
        (void)std::stod(fields[0], &used);
      } catch (const std::exception&) {
        continue;  // header line
      }
    }
    consume(fields, line_no);
  }
}

}  // namespace detail

/// `time_s,rr_ms` per line.
inline std::vector<RrEvent> parse_rr_file(const std::string& path) {
  std::vector<RrEvent> events;
  detail::for_each_csv_line(path, [&](const std::vector<std::string>& f, int line_no) {
    if (f.size() != 2)
      throw std::runtime_error(path + ": malformed line " + std::to_string(line_no) +
                               ": expected 'time_s,rr_ms'");
    RrEvent e;
    e.time_s = detail::parse_number(f[0], path, line_no);
    e.rr_ms = detail::parse_number(f[1], path, line_no);
    if (e.time_s < 0.0 || !(e.rr_ms > 0.0))
      throw std::runtime_error(path + ": malformed line " + std::to_string(line_no) +
                               ": time must be >= 0 and rr_ms > 0");
    events.push_back(e);
  });
  return events;
}

/// `start_s,end_s` per line.
inline std::vector<MovementEvent> parse_movement_file(const std::string& path) {
  std::vector<MovementEvent> events;
  detail::for_each_csv_line(path, [&](const std::vector<std::string>& f, int line_no) {
    if (f.size() != 2)
      throw std::runtime_error(path + ": malformed line " + std::to_string(line_no) +
                               ": expected 'start_s,end_s'");
    MovementEvent e;
    e.start_s = detail::parse_number(f[0], path, line_no);
    e.end_s = detail::parse_number(f[1], path, line_no);
    if (!(e.start_s < e.end_s))
      throw std::runtime_error(path + ": malformed line " + std::to_string(line_no) +
                               ": interval must have start < end");
    events.push_back(e);
  });
  return events;
}

/// `epoch_index,stage` per line with stage in {W, N1, N2, N3, REM, ?}.
inline std::vector<Annotation> parse_annotation_file(const std::string& path) {
  std::vector<Annotation> notes;
  detail::for_each_csv_line(path, [&](const std::vector<std::string>& f, int line_no) {
    if (f.size() != 2)
      throw std::runtime_error(path + ": malformed line " + std::to_string(line_no) +
                               ": expected 'epoch_index,stage'");
    Annotation a;
    const double idx = detail::parse_number(f[0], path, line_no);
    a.epoch_index = static_cast<int>(idx);
    if (a.epoch_index < 0 || idx != a.epoch_index)
      throw std::runtime_error(path + ": malformed line " + std::to_string(line_no) +
                               ": epoch index must be a non-negative integer");
    try {
      a.stage = raw_stage_from_text(f[1]);
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ": malformed line " + std::to_string(line_no) +
                               ": " + e.what());
    }
    notes.push_back(a);
  });
  return notes;
}

// ---------------------------------------------------------------------------
// Windows container: JSON manifest at `path`, float32 little-endian blob at
// `path + ".bin"` holding the concatenated series, digest-checked like the
// model container.
// ---------------------------------------------------------------------------

inline constexpr const char* kWindowsFormatName = "somno-windows";
inline constexpr int kWindowsFormatVersion = 1;

inline void save_windows(const std::vector<HrvWindow>& windows,
                         const std::string& record_id, const std::string& path) {
  using nlohmann::json;
  BlobWriter w;
  for (const auto& win : windows) {
    if (win.series.length != kWindowSamples || win.series.channels != 3)
      throw std::invalid_argument("save_windows: windows must be 2048 x 3");
    w.f32_array(win.series.data);
  }
  json manifest;
  manifest["format"] = kWindowsFormatName;
  manifest["version"] = kWindowsFormatVersion;
  manifest["record_id"] = record_id;
  manifest["window_length"] = kWindowSamples;
  manifest["channels"] = 3;
  nlohmann::json entries = json::array();
  for (const auto& win : windows) {
    json e;
    e["start_s"] = win.start_s;
    e["target_epochs"] = win.target_epochs;
    entries.push_back(std::move(e));
  }
  manifest["windows"] = std::move(entries);
  const std::string blob_file = path + ".bin";
  const size_t slash = blob_file.find_last_of('/');
  manifest["blob"] = {{"file", slash == std::string::npos
                                   ? blob_file
                                   : blob_file.substr(slash + 1)},
                      {"bytes", w.bytes.size()},
                      {"fnv1a64", to_hex(fnv1a64(w.bytes))}};
  write_text_file(path, manifest.dump(2) + "\n");
  write_file(blob_file, w.bytes);
}

struct WindowsFile {
  std::string record_id;
  std::vector<HrvWindow> windows;
};

inline WindowsFile load_windows(const std::string& path) {
  using nlohmann::json;
  json manifest;
  try {
    manifest = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw std::runtime_error("windows manifest: malformed JSON in " + path + ": " +
                             e.what());
  }
  try {
    if (manifest.at("format").get<std::string>() != kWindowsFormatName)
      throw std::runtime_error("windows manifest: not a windows container");
    if (manifest.at("version").get<int>() != kWindowsFormatVersion)
      throw std::runtime_error("windows manifest: unsupported version");
    WindowsFile wf;
    wf.record_id = manifest.at("record_id").get<std::string>();
    const int length = manifest.at("window_length").get<int>();
    const int channels = manifest.at("channels").get<int>();
    const auto blob = read_file(dir_of(path) +
                                manifest.at("blob").at("file").get<std::string>());
    if (to_hex(fnv1a64(blob)) != manifest.at("blob").at("fnv1a64").get<std::string>())
      throw std::runtime_error("windows blob digest mismatch");
    BlobReader r(blob);
    r.context = "windows blob";
    for (const auto& e : manifest.at("windows")) {
      HrvWindow win;
      win.start_s = e.at("start_s").get<double>();
      const auto& te = e.at("target_epochs");
      if (te.size() != static_cast<size_t>(kTargetsPerWindow))
        throw std::runtime_error("windows manifest: expected 7 target epochs");
      for (size_t i = 0; i < static_cast<size_t>(kTargetsPerWindow); ++i)
        win.target_epochs[i] = te.at(i).get<int>();
      win.series.length = length;
      win.series.channels = channels;
      win.series.data = r.f32_array(static_cast<size_t>(length) * channels);
      wf.windows.push_back(std::move(win));
    }
    if (r.pos != blob.size())
      throw std::runtime_error("windows blob length mismatch: trailing bytes");
    return wf;
  } catch (const json::exception& e) {
    throw std::runtime_error("windows manifest: missing or malformed field: " +
                             std::string(e.what()));
  }
}

}  // namespace somno
