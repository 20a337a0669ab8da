#pragma once

namespace kdts {

inline constexpr int kSchemaVersion = 1;      // JSON artifacts (manifests, summaries, reports)
inline constexpr int kCacheFormatVersion = 1; // binary window container
inline constexpr int kCheckpointFormatVersion = 1;

inline constexpr const char* kToolName = "kdts";
inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace kdts
