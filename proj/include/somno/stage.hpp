#pragma once

#include <stdexcept>
#include <string>

namespace somno {

/// 3-class sleep stage space. Class order is fixed (Wake, REM, NREM) and is
/// also the argmax tie-break order.
enum class Stage { Wake = 0, Rem = 1, Nrem = 2, Unknown = 3 };

inline constexpr int kStageCount = 3;

inline const char* stage_name(Stage s) {
  switch (s) {
    case Stage::Wake: return "WAKE";
    case Stage::Rem: return "REM";
    case Stage::Nrem: return "NREM";
    case Stage::Unknown: return "UNKNOWN";
  }
  return "UNKNOWN";
}

inline Stage stage_from_name(const std::string& name) {
  if (name == "WAKE") return Stage::Wake;
  if (name == "REM") return Stage::Rem;
  if (name == "NREM") return Stage::Nrem;
  if (name == "UNKNOWN") return Stage::Unknown;
  throw std::runtime_error("unrecognized stage label '" + name + "'");
}

}  // namespace somno
