#pragma once

namespace lsir {

inline constexpr const char* kVersion = "0.1.0";

// Bumped whenever the JSON run-record layout changes incompatibly.
inline constexpr int kRecordSchemaVersion = 1;

}  // namespace lsir
